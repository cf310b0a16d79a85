"""Score policy trajectories with a trained evaluator, select checkpoints
along a per-epoch criterion and rank policies."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .classifier.metrics import ClassificationReport
from .classifier.model import EvaluatorModel
from .core import LABELS, BehaviorLabel, JointTrajectory, atomic_write_text, stack_windows, window_all
from .dtw import DEFAULT_ELIGIBLE, BodyEmbedding, dataset_dtw

CRITERIA = {"val_loss": "min", "dtw": "min", "mf1": "max", "success_rate": "max"}


@dataclass
class EvalReport:
    """Meta-performance of one policy.

    ``per_class_mA`` is the share of windows of a class that the evaluator
    labels correctly; ``macro_mF1`` averages ``per_class_mF1`` over classes
    with at least one true or predicted window (``absent`` lists the rest).
    """

    policy_name: str
    mA: float
    per_class_mA: dict[BehaviorLabel, float]
    per_class_mF1: dict[BehaviorLabel, float]
    macro_mF1: float
    window_count: int
    per_class_dtw: dict[BehaviorLabel, float] = field(default_factory=dict)
    mean_dtw: float = float("nan")
    absent: list[BehaviorLabel] = field(default_factory=list)
    confusion: np.ndarray | None = None

    @classmethod
    def from_classification(cls, name: str, rep: ClassificationReport, **kw) -> "EvalReport":
        present = [lab for lab in LABELS if not rep.absent[lab.index]]
        return cls(
            policy_name=name,
            mA=rep.accuracy,
            per_class_mA={lab: float(rep.recall[lab.index]) for lab in present},
            per_class_mF1={lab: float(rep.f1[lab.index]) for lab in present},
            macro_mF1=rep.macro_f1_present,
            window_count=rep.total,
            absent=[lab for lab in LABELS if rep.absent[lab.index]],
            confusion=rep.confusion,
            **kw,
        )

    def to_dict(self) -> dict:
        d = {
            "policy_name": self.policy_name,
            "mA": self.mA,
            "per_class_mA": {k.value: v for k, v in self.per_class_mA.items()},
            "per_class_mF1": {k.value: v for k, v in self.per_class_mF1.items()},
            "macro_mF1": self.macro_mF1,
            "per_class_dtw": {k.value: v for k, v in self.per_class_dtw.items()},
            "mean_dtw": None if math.isnan(self.mean_dtw) else self.mean_dtw,
            "window_count": self.window_count,
            "absent": [lab.value for lab in self.absent],
        }
        if self.confusion is not None:
            d["confusion"] = self.confusion.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        lab = lambda m: {BehaviorLabel(k): float(v) for k, v in (m or {}).items()}
        conf = d.get("confusion")
        return cls(
            policy_name=str(d["policy_name"]),
            mA=float(d["mA"]),
            per_class_mA=lab(d.get("per_class_mA")),
            per_class_mF1=lab(d.get("per_class_mF1")),
            macro_mF1=float(d["macro_mF1"]),
            window_count=int(d.get("window_count", 0)),
            per_class_dtw=lab(d.get("per_class_dtw")),
            mean_dtw=float("nan") if d.get("mean_dtw") is None else float(d["mean_dtw"]),
            absent=[BehaviorLabel(x) for x in d.get("absent", [])],
            confusion=None if conf is None else np.asarray(conf, dtype=np.int64),
        )

    def save_json(self, path) -> None:
        atomic_write_text(path, json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load_json(cls, path) -> "EvalReport":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_csv(self, classes: Sequence[BehaviorLabel] | None = None) -> str:
        """One row per class plus an ``average`` row over those classes."""
        classes = list(classes) if classes is not None else [l for l in LABELS if l in self.per_class_mF1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "mA", "mF1", "dtw"])
        cols = ([], [], [])
        for lab in classes:
            vals = (self.per_class_mA.get(lab), self.per_class_mF1.get(lab), self.per_class_dtw.get(lab))
            w.writerow([lab.value, *(_fmt(v) for v in vals)])
            for c, v in zip(cols, vals):
                if v is not None:
                    c.append(v)
        w.writerow(["average", *(_fmt(float(np.mean(c))) if c else "" for c in cols)])
        return buf.getvalue()


def _fmt(v) -> str:
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def meta_evaluate(
    model: EvaluatorModel,
    predicted: Sequence[JointTrajectory],
    L: int | None = None,
    stride: int | None = None,
    name: str = "policy",
    references: Sequence[JointTrajectory] | None = None,
    eligible=DEFAULT_ELIGIBLE,
    embedding: BodyEmbedding | None = None,
) -> EvalReport:
    """Classify every window of the predicted trajectories against their
    (reference) labels; with ``references`` also attach per-class DTW."""
    L = L or model.L
    if L is None:
        raise ValueError("window length unknown: model has no L and none was given")
    stride = stride or max(1, L // 2)
    dims = {tr.dim for tr in predicted}
    if dims and dims != {model.D}:
        raise ValueError(f"model expects {model.D} channels, data has {sorted(dims)}")
    windows = window_all(predicted, L, stride)
    if not windows:
        raise ValueError(f"no trajectory has at least {L} frames")
    X, y = stack_windows(windows)
    rep = ClassificationReport.from_predictions(y, model.predict(X), model.K)
    kw = {}
    if references is not None:
        d = dataset_dtw(predicted, references, eligible, embedding)
        kw = {"per_class_dtw": d.means(), "mean_dtw": d.grand_mean}
    return EvalReport.from_classification(name, rep, **kw)


# ----------------------------------------------------------------- selection


@dataclass(frozen=True)
class SelectionCriterion:
    name: str
    series: tuple[float, ...]

    def __post_init__(self):
        if self.name not in CRITERIA:
            raise ValueError(f"unknown criterion {self.name!r}; expected one of {', '.join(CRITERIA)}")
        s = tuple(float(v) for v in self.series)
        if not s:
            raise ValueError(f"{self.name}: empty series")
        if not all(math.isfinite(v) for v in s):
            raise ValueError(f"{self.name}: non-finite values in series")
        object.__setattr__(self, "series", s)

    @property
    def direction(self) -> str:
        return CRITERIA[self.name]


def select_epoch(criterion: SelectionCriterion) -> int:
    """1-based epoch optimizing the criterion; the earliest wins ties."""
    s = np.asarray(criterion.series)
    idx = int(np.argmin(s) if criterion.direction == "min" else np.argmax(s))
    return idx + 1


def read_series_csv(path) -> list[float]:
    """Read an ``epoch,value`` CSV; rows are ordered by epoch."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (lineno == 1 and row[0].strip().lower() == "epoch"):
                continue
            try:
                rows.append((int(row[0]), float(row[1])))
            except (ValueError, IndexError):
                raise ValueError(f"{path}:{lineno}: expected 'epoch,value'") from None
    rows.sort()
    epochs = [e for e, _ in rows]
    if epochs != list(range(1, len(rows) + 1)):
        raise ValueError(f"{path}: epochs must run 1..N without gaps")
    return [v for _, v in rows]


def series_csv(values: Sequence[float]) -> str:
    return "epoch,value\n" + "".join(f"{i},{float(v)!r}\n" for i, v in enumerate(values, start=1))


# ---------------------------------------------------------------- comparison


def _rank_key(r: EvalReport):
    dtw = r.mean_dtw if not math.isnan(r.mean_dtw) else math.inf
    return (-r.macro_mF1, dtw, r.policy_name)


def compare_policies(reports: Sequence[EvalReport]) -> list[EvalReport]:
    """Policies ordered by macro mF1 (desc), then mean DTW (asc), then name."""
    if len(reports) < 2:
        raise ValueError("need at least two reports to compare")
    return sorted(reports, key=_rank_key)


def comparison_csv(ranked: Sequence[EvalReport], classes: Sequence[BehaviorLabel] | None = None) -> str:
    """Wide table: per class mA/mF1/D columns then averages, one row per policy."""
    if classes is None:
        classes = [l for l in LABELS if l in DEFAULT_ELIGIBLE]
    header = ["rank", "method"]
    for lab in [*classes, "average"]:
        tag = lab if isinstance(lab, str) else lab.value
        header += [f"{tag}_mA", f"{tag}_mF1", f"{tag}_D"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for rank, r in enumerate(ranked, start=1):
        row = [rank, r.policy_name]
        for lab in classes:
            row += [_fmt(r.per_class_mA.get(lab)), _fmt(r.per_class_mF1.get(lab)), _fmt(r.per_class_dtw.get(lab))]
        row += [_fmt(r.mA), _fmt(r.macro_mF1), _fmt(r.mean_dtw)]
        w.writerow(row)
    return buf.getvalue()


# ------------------------------------------------------------------ spearman


def average_ranks(x: Sequence[float]) -> np.ndarray:
    """1-based ranks with ties sharing the mean of their positions."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x))
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(a: Sequence[float], b: Sequence[float]) -> float:
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    if len(a) < 2:
        raise ValueError("need at least two paired values")
    ra, rb = average_ranks(a), average_ranks(b)
    da, db = ra - ra.mean(), rb - rb.mean()
    denom = math.sqrt(float(da @ da) * float(db @ db))
    if denom == 0:
        raise ValueError("Spearman correlation undefined for a constant series")
    return float(np.clip(float(da @ db) / denom, -1.0, 1.0))
