"""Static SVG chart of per-epoch selection criteria."""

from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .core import atomic_write_text  # noqa: E402

_STYLE = {
    "val_loss": dict(color="0.5", marker="^", label="Validation loss"),
    "dtw": dict(color="tab:cyan", marker="s", label="DTW"),
    "success_rate": dict(color="tab:blue", marker="o", label="Success rate"),
    "mf1": dict(color="tab:brown", marker="o", linestyle="--", label="mF1"),
}


def plot_selection(criteria, chosen: dict, path) -> None:
    """Loss on the left axis, DTW on the right, rates/mF1 on an offset third
    axis; each curve's selected epoch is ringed."""
    plt.rcParams["svg.hashsalt"] = "neme"
    fig, ax_loss = plt.subplots(figsize=(9, 4))
    axes = {"val_loss": ax_loss}
    ax_dtw = ax_loss.twinx()
    axes["dtw"] = ax_dtw
    ax_rate = ax_loss.twinx()
    ax_rate.spines["right"].set_position(("axes", 1.12))
    axes["success_rate"] = axes["mf1"] = ax_rate
    ax_loss.set_xlabel("Epoch")
    ax_loss.set_ylabel("Loss value")
    ax_dtw.set_ylabel("DTW")
    ax_rate.set_ylabel("SR / mF1")
    handles = []
    for c in criteria:
        ax = axes[c.name]
        epochs = range(1, len(c.series) + 1)
        (line,) = ax.plot(epochs, c.series, linewidth=1.5, markersize=4, **_STYLE[c.name])
        e = chosen[c.name]
        ax.plot([e], [c.series[e - 1]], marker="o", markersize=11, markerfacecolor="none",
                markeredgecolor=line.get_color(), markeredgewidth=1.5, linestyle="none")
        handles.append(line)
    ax_loss.grid(True, linewidth=0.3, alpha=0.5)
    ax_loss.legend(handles=handles, loc="upper center", ncol=len(handles), frameon=False,
                   bbox_to_anchor=(0.5, 1.15), fontsize="small")
    fig.tight_layout()
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    atomic_write_text(path, buf.getvalue())
