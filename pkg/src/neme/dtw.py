"""Dynamic time warping between joint (or embedded body-point) sequences."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from .core import LABELS, BehaviorLabel, JointTrajectory, segment_chunks

DEFAULT_ELIGIBLE = frozenset({BehaviorLabel.WAVE, BehaviorLabel.SHAKE, BehaviorLabel.PICK, BehaviorLabel.STILL})
BODY_POINTS = 21
BRUTEFORCE_MAX_CELLS = 64


@dataclass(frozen=True)
class DtwResult:
    cumulative_cost: float
    path: list[tuple[int, int]]

    @property
    def normalized_cost(self) -> float:
        return self.cumulative_cost / len(self.path)


def _as_seq(x, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or a.shape[0] == 0:
        raise ValueError(f"{name}: expected a non-empty (n, F) sequence, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name}: non-finite entries")
    return a


def _pair(a, b):
    a, b = _as_seq(a, "a"), _as_seq(b, "b")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    return a, b


def dtw(a, b, band: int | None = None) -> DtwResult:
    """Classic DTW with unit-weight steps (1,0), (0,1), (1,1) and Euclidean
    local cost.  ``band`` optionally restricts ``|i - j|`` (Sakoe-Chiba).

    The traceback prefers the diagonal predecessor, then the vertical one
    (advancing ``a`` alone), on exact cost ties.
    """
    a, b = _pair(a, b)
    n, m = len(a), len(b)
    if band is not None and band < abs(n - m):
        raise ValueError(f"band {band} cannot connect sequences of lengths {n} and {m}")
    cost = cdist(a, b)
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        lo, hi = 1, m
        if band is not None:
            lo, hi = max(1, i - band), min(m, i + band)
        prev, cur, row = acc[i - 1], acc[i], cost[i - 1]
        left = cur[lo - 1]
        for j in range(lo, hi + 1):
            d, up = prev[j - 1], prev[j]
            best = d if d <= up else up
            if left < best:
                best = left
            left = row[j - 1] + best
            cur[j] = left
    path = [(n - 1, m - 1)]
    i, j = n, m
    while (i, j) != (1, 1):
        choices = ((acc[i - 1, j - 1], i - 1, j - 1), (acc[i - 1, j], i - 1, j), (acc[i, j - 1], i, j - 1))
        _, i, j = min(choices, key=lambda c: c[0])  # min keeps the first of equal costs
        path.append((i - 1, j - 1))
    path.reverse()
    return DtwResult(float(acc[n, m]), path)


def dtw_bruteforce(a, b) -> float:
    """Minimum cumulative cost over every monotone warping path (exhaustive)."""
    a, b = _pair(a, b)
    n, m = len(a), len(b)
    if n * m > BRUTEFORCE_MAX_CELLS:
        raise ValueError(f"brute force limited to len(a)*len(b) <= {BRUTEFORCE_MAX_CELLS}, got {n * m}")
    cost = cdist(a, b)
    best = np.inf

    def walk(i, j, total):
        nonlocal best
        total += cost[i, j]
        if i == n - 1 and j == m - 1:
            best = min(best, total)
            return
        if i + 1 < n:
            walk(i + 1, j, total)
        if j + 1 < m:
            walk(i, j + 1, total)
        if i + 1 < n and j + 1 < m:
            walk(i + 1, j + 1, total)

    walk(0, 0, 0.0)
    return float(best)


def path_cost(a, b, path) -> float:
    a, b = _pair(a, b)
    return float(sum(np.linalg.norm(a[i] - b[j]) for i, j in path))


def is_valid_path(path, n: int, m: int) -> bool:
    if not path or path[0] != (0, 0) or path[-1] != (n - 1, m - 1):
        return False
    steps = {(1, 0), (0, 1), (1, 1)}
    return all((i2 - i1, j2 - j1) in steps for (i1, j1), (i2, j2) in zip(path, path[1:]))


# ------------------------------------------------------------- body embedding


@dataclass(frozen=True, eq=False)
class BodyEmbedding:
    """Fixed linear map from D joint channels to 21 stacked 3-D body points."""

    matrix: np.ndarray
    label: str = "custom"

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=np.float64)
        if mat.ndim != 2 or not np.all(np.isfinite(mat)):
            raise ValueError("embedding matrix must be a finite 2-D array")
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)

    @property
    def in_dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def out_dim(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def identity_padded(cls, dim: int, out_dim: int = 3 * BODY_POINTS) -> "BodyEmbedding":
        if dim > out_dim:
            raise ValueError(f"cannot pad {dim} channels into {out_dim}")
        return cls(np.eye(out_dim, dim), label=f"identity-padded {dim}->{out_dim}")

    @classmethod
    def random(cls, dim: int, seed: int = 0, out_dim: int = 3 * BODY_POINTS) -> "BodyEmbedding":
        rng = np.random.default_rng(seed)
        return cls(rng.normal(0.0, 1.0 / np.sqrt(dim), size=(out_dim, dim)), label=f"gaussian seed={seed}")

    @classmethod
    def load(cls, path) -> "BodyEmbedding":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        if isinstance(d, list):
            return cls(np.asarray(d), label=str(path))
        return cls(np.asarray(d["matrix"]), label=str(d.get("label", path)))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps({"label": self.label, "matrix": self.matrix.tolist()}) + "\n", encoding="utf-8")


def embed(seq, emb: BodyEmbedding) -> np.ndarray:
    seq = _as_seq(seq, "seq")
    if seq.shape[1] != emb.in_dim:
        raise ValueError(f"sequence has {seq.shape[1]} channels, embedding expects {emb.in_dim}")
    return seq @ emb.matrix.T


# ------------------------------------------------------------ per-class DTW


@dataclass
class ClassDtw:
    chunks: int = 0
    normalized: list[float] = field(default_factory=list)
    cumulative: list[float] = field(default_factory=list)

    @property
    def mean_normalized(self) -> float:
        return float(np.mean(self.normalized)) if self.normalized else float("nan")

    @property
    def mean_cumulative(self) -> float:
        return float(np.mean(self.cumulative)) if self.cumulative else float("nan")


@dataclass
class PerClassDtw:
    classes: dict[BehaviorLabel, ClassDtw]
    eligible: frozenset

    @property
    def absent(self) -> set[BehaviorLabel]:
        return {lab for lab in self.eligible if self.classes[lab].chunks == 0}

    def means(self) -> dict[BehaviorLabel, float]:
        return {lab: c.mean_normalized for lab, c in self.classes.items() if c.chunks}

    @property
    def grand_mean(self) -> float:
        """Unweighted mean of the per-class means over classes with chunks."""
        m = list(self.means().values())
        return float(np.mean(m)) if m else float("nan")

    def merge(self, other: "PerClassDtw") -> "PerClassDtw":
        out = {lab: ClassDtw() for lab in self.classes}
        for src in (self, other):
            for lab, c in src.classes.items():
                out[lab].chunks += c.chunks
                out[lab].normalized += c.normalized
                out[lab].cumulative += c.cumulative
        return PerClassDtw(out, self.eligible)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "chunks", "mean_normalized_dtw", "mean_cumulative_dtw"])
        for lab in LABELS:
            if lab in self.classes:
                c = self.classes[lab]
                w.writerow([lab.value, c.chunks, repr(c.mean_normalized) if c.chunks else "",
                            repr(c.mean_cumulative) if c.chunks else ""])
        return buf.getvalue()


def per_class_dtw(
    pred: JointTrajectory,
    ref: JointTrajectory,
    eligible=DEFAULT_ELIGIBLE,
    emb: BodyEmbedding | None = None,
    band: int | None = None,
) -> PerClassDtw:
    """Chunk ``ref`` by label and DTW each eligible chunk against the
    frame-aligned slice of ``pred``."""
    if len(pred) != len(ref) or pred.dim != ref.dim:
        raise ValueError(f"{pred.id}: predicted trajectory does not cover the reference frame range")
    eligible = frozenset(BehaviorLabel(e) for e in eligible)
    classes = {lab: ClassDtw() for lab in LABELS if lab in eligible}
    P = pred.joints if emb is None else embed(pred.joints, emb)
    R = ref.joints if emb is None else embed(ref.joints, emb)
    for ch in segment_chunks(ref):
        if ch.label not in eligible:
            continue
        res = dtw(P[ch.start_index : ch.end_index], R[ch.start_index : ch.end_index], band=band)
        c = classes[ch.label]
        c.chunks += 1
        c.normalized.append(res.normalized_cost)
        c.cumulative.append(res.cumulative_cost)
    return PerClassDtw(classes, eligible)


def dataset_dtw(preds, refs, eligible=DEFAULT_ELIGIBLE, emb=None, band=None) -> PerClassDtw:
    """Per-class DTW pooled over paired trajectory lists (matched by id)."""
    by_id = {r.id: r for r in refs}
    total = None
    for p in preds:
        if p.id not in by_id:
            raise ValueError(f"no reference trajectory with id {p.id!r}")
        part = per_class_dtw(p, by_id[p.id], eligible, emb, band)
        total = part if total is None else total.merge(part)
    if total is None:
        eligible = frozenset(BehaviorLabel(e) for e in eligible)
        total = PerClassDtw({lab: ClassDtw() for lab in LABELS if lab in eligible}, eligible)
    return total
