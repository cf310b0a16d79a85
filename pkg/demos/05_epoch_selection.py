"""
Choosing a checkpoint
=====================

Per-epoch curves of a real imitation-learning run: validation loss, the
evaluator's macro F1, DTW and the on-robot success rate.  Each criterion
picks a different epoch.
"""

from pathlib import Path

from neme.metaeval import SelectionCriterion, select_epoch
from neme.plotting import plot_selection

mf1 = (63.59, 68.51, 70.4, 68.57, 57.47, 68.06, 67.32, 71.25, 70.6, 58.25, 62.83, 66.6)
val_loss = (0.877, 0.936, 0.927, 0.961, 0.96, 0.953, 0.966, 0.984, 0.992, 0.97, 0.985, 1.04)
dtw = (2.83, 2.59, 2.41, 2.33, 2.29, 2.27, 2.18, 2.18, 2.16, 2.13, 2.20, 2.10)
success = (33.33, 55.83, 57.5, 66.67, 51.67, 75, 75, 70, 63.5, 57.5, 68.33, 66.6)

criteria = [
    SelectionCriterion("val_loss", val_loss),
    SelectionCriterion("mf1", mf1),
    SelectionCriterion("dtw", dtw),
    SelectionCriterion("success_rate", success),
]
chosen = {c.name: select_epoch(c) for c in criteria}
for c in criteria:
    e = chosen[c.name]
    print(f"{c.name:<13} ({c.direction}) -> epoch {e:2d}  value {c.series[e - 1]}")

# the loss would stop after one epoch; mF1 lands next to the success-rate peak
sr = dict(enumerate(success, start=1))
print(f"success rate at the mF1 choice: {sr[chosen['mf1']]}, at the loss choice: {sr[chosen['val_loss']]}")

out = Path("demo_out")
out.mkdir(exist_ok=True)
plot_selection(criteria[:3], chosen, out / "selection.svg")
print("wrote", out / "selection.svg")
