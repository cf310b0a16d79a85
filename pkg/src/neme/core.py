"""Labeled joint trajectories: data model, JSON-Lines I/O, windowing, chunking,
splitting and per-class statistics."""

from __future__ import annotations

import csv
import enum
import io
import json
import os
import tempfile
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from ._seeding import rng_for

DEFAULT_DIM = 24
DEFAULT_RATE_HZ = 10.0
GAP_TOLERANCE_S = 1e-6


class DatasetError(ValueError):
    """Raised for malformed or inconsistent trajectory data."""


class BehaviorLabel(str, enum.Enum):
    WAVE = "wave"
    SHAKE = "shake"
    PICK = "pick"
    WALK = "walk"
    PICK_WALK = "pick_walk"
    STILL = "still"
    PICK_STILL = "pick_still"

    @classmethod
    def parse(cls, token: str) -> "BehaviorLabel":
        try:
            return cls(token)
        except ValueError:
            raise DatasetError(f"unknown behaviour label {token!r}") from None

    @property
    def index(self) -> int:
        return _LABEL_INDEX[self]

    def __str__(self) -> str:
        return self.value


LABELS: tuple[BehaviorLabel, ...] = tuple(BehaviorLabel)
NUM_CLASSES = len(LABELS)
_LABEL_INDEX = {lab: i for i, lab in enumerate(LABELS)}


def label_index(label) -> int:
    if isinstance(label, BehaviorLabel):
        return label.index
    return BehaviorLabel.parse(label).index


class JointFrame(NamedTuple):
    t: float
    joints: np.ndarray
    label: BehaviorLabel


@dataclass(frozen=True, eq=False)
class JointTrajectory:
    """A regularly sampled recording of joint states with per-frame labels.

    Frames are stored column-wise: ``t`` (T,), ``joints`` (T, D) and ``labels``
    (T,) holding class indices into :data:`LABELS`.  Use :attr:`frames` for a
    frame-by-frame view.
    """

    id: str
    subject: str
    rate_hz: float
    t: np.ndarray
    joints: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.float64)
        joints = np.asarray(self.joints, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "joints", joints)
        object.__setattr__(self, "labels", labels)
        if not (self.rate_hz > 0 and np.isfinite(self.rate_hz)):
            raise DatasetError(f"{self.id}: rate_hz must be positive, got {self.rate_hz}")
        if t.ndim != 1 or t.size == 0:
            raise DatasetError(f"{self.id}: trajectory has no frames")
        if joints.ndim != 2 or joints.shape[0] != t.size:
            raise DatasetError(f"{self.id}: joints must be a (T, D) matrix matching {t.size} timestamps")
        if labels.shape != t.shape:
            raise DatasetError(f"{self.id}: expected {t.size} labels, got {labels.size}")
        if labels.min() < 0 or labels.max() >= NUM_CLASSES:
            raise DatasetError(f"{self.id}: label index out of range")
        if not np.all(np.isfinite(joints)):
            raise DatasetError(f"{self.id}: non-finite joint values")
        if t[0] < 0:
            raise DatasetError(f"{self.id}: negative timestamp")
        if t.size > 1:
            gaps = np.diff(t)
            if np.any(gaps <= 0):
                bad = int(np.argmax(gaps <= 0)) + 1
                raise DatasetError(f"{self.id}: timestamps not strictly increasing at frame {bad}")
            dev = np.abs(gaps - 1.0 / self.rate_hz)
            if np.any(dev > GAP_TOLERANCE_S):
                bad = int(np.argmax(dev > GAP_TOLERANCE_S)) + 1
                raise DatasetError(f"{self.id}: irregular frame gap at frame {bad} (rate {self.rate_hz} Hz)")

    @classmethod
    def regular(cls, id: str, subject: str, joints, labels, rate_hz: float = DEFAULT_RATE_HZ, t0: float = 0.0):
        joints = np.asarray(joints, dtype=np.float64)
        t = t0 + np.arange(joints.shape[0]) / rate_hz
        labels = [label_index(lab) if not isinstance(lab, (int, np.integer)) else lab for lab in labels]
        return cls(id=id, subject=subject, rate_hz=rate_hz, t=t, joints=joints, labels=np.asarray(labels))

    def __len__(self) -> int:
        return self.t.size

    @property
    def dim(self) -> int:
        return self.joints.shape[1]

    @property
    def label_names(self) -> list[BehaviorLabel]:
        return [LABELS[i] for i in self.labels]

    @property
    def frames(self) -> list[JointFrame]:
        return [JointFrame(float(self.t[i]), self.joints[i], LABELS[self.labels[i]]) for i in range(len(self))]

    def replace(self, **changes) -> "JointTrajectory":
        kw = dict(id=self.id, subject=self.subject, rate_hz=self.rate_hz, t=self.t, joints=self.joints, labels=self.labels)
        kw.update(changes)
        return JointTrajectory(**kw)

    def same_as(self, other: "JointTrajectory") -> bool:
        """Field-by-field equality (exact on floats)."""
        return (
            self.id == other.id
            and self.subject == other.subject
            and self.rate_hz == other.rate_hz
            and np.array_equal(self.t, other.t)
            and self.joints.shape == other.joints.shape
            and np.array_equal(self.joints, other.joints)
            and np.array_equal(self.labels, other.labels)
        )


@dataclass(frozen=True, eq=False)
class LabeledWindow:
    source_id: str
    start_index: int
    length: int
    data: np.ndarray
    label: BehaviorLabel


@dataclass(frozen=True)
class ActionChunk:
    source_id: str
    start_index: int
    end_index: int
    label: BehaviorLabel

    @property
    def length(self) -> int:
        return self.end_index - self.start_index


@dataclass(frozen=True)
class DatasetSplit:
    train: list[str]
    val: list[str]
    test: list[str]

    def select(self, trajs: Sequence[JointTrajectory], part: str) -> list[JointTrajectory]:
        ids = set(getattr(self, part))
        return [tr for tr in trajs if tr.id in ids]


@dataclass
class ClassStats:
    frame_count: int = 0
    event_count: int = 0
    durations_s: list[float] = field(default_factory=list)

    @property
    def duration_summary(self) -> tuple[float, float, float] | None:
        if not self.durations_s:
            return None
        d = np.asarray(self.durations_s)
        return float(d.min()), float(np.median(d)), float(d.max())


@dataclass
class DatasetStats:
    per_class: dict[BehaviorLabel, ClassStats]

    @property
    def total_frames(self) -> int:
        return sum(s.frame_count for s in self.per_class.values())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "frame_count", "event_count", "min_s", "median_s", "max_s"])
        for lab in LABELS:
            s = self.per_class[lab]
            summ = s.duration_summary
            w.writerow([lab.value, s.frame_count, s.event_count, *(("", "", "") if summ is None else (repr(v) for v in summ))])
        return buf.getvalue()


# --------------------------------------------------------------------------- I/O


def _traj_from_record(rec: dict, where: str) -> JointTrajectory:
    try:
        frames = rec["frames"]
        if not isinstance(frames, list) or not frames:
            raise DatasetError(f"{where}: 'frames' must be a non-empty list")
        dim = None
        t, joints, labels = [], [], []
        for k, fr in enumerate(frames):
            j = fr["joints"]
            if dim is None:
                dim = len(j)
            elif len(j) != dim:
                raise DatasetError(f"{where}: frame {k} has {len(j)} joints, expected {dim}")
            t.append(float(fr["t"]))
            joints.append(j)
            labels.append(BehaviorLabel.parse(fr["label"]).index)
        return JointTrajectory(
            id=str(rec["id"]),
            subject=str(rec["subject"]),
            rate_hz=float(rec.get("rate_hz", DEFAULT_RATE_HZ)),
            t=np.asarray(t),
            joints=np.asarray(joints, dtype=np.float64),
            labels=np.asarray(labels),
        )
    except DatasetError as exc:
        msg = str(exc)
        raise DatasetError(msg if msg.startswith(where) else f"{where}: {msg}") from None
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"{where}: malformed record ({exc!r})") from None


def load_dataset(path) -> list[JointTrajectory]:
    """Read a JSON-Lines trajectory file; errors name the offending line."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    out = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{where}: invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise DatasetError(f"{where}: expected a JSON object")
            out.append(_traj_from_record(rec, where))
    dims = {tr.dim for tr in out}
    if len(dims) > 1:
        raise DatasetError(f"{path}: inconsistent joint dimension across trajectories {sorted(dims)}")
    return out


def trajectory_to_record(tr: JointTrajectory) -> dict:
    return {
        "id": tr.id,
        "subject": tr.subject,
        "rate_hz": tr.rate_hz,
        "frames": [
            {"t": float(tr.t[i]), "joints": tr.joints[i].tolist(), "label": LABELS[tr.labels[i]].value}
            for i in range(len(tr))
        ],
    }


def dumps_dataset(trajs: Iterable[JointTrajectory]) -> str:
    return "".join(json.dumps(trajectory_to_record(tr), separators=(",", ":")) + "\n" for tr in trajs)


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to ``path`` via a temp file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_dataset(path, trajs: Iterable[JointTrajectory]) -> None:
    atomic_write_text(path, dumps_dataset(trajs))


# ------------------------------------------------------------------ operations


def _window_label(labels: np.ndarray) -> int:
    counts = np.bincount(labels, minlength=NUM_CLASSES)
    top = counts.max()
    winners = np.flatnonzero(counts == top)
    if winners.size == 1:
        return int(winners[0])
    # tie: the behaviour in progress at the window's end, if it is among the
    # tied labels; otherwise the tied label seen last in the window
    last = int(labels[-1])
    if last in winners:
        return last
    for lab in labels[::-1]:
        if lab in winners:
            return int(lab)
    raise AssertionError("unreachable")


def window(traj: JointTrajectory, L: int, stride: int = 1) -> list[LabeledWindow]:
    """Slice ``traj`` into windows of ``L`` frames every ``stride`` frames.

    The label of a window is its majority frame label; ties go to the label of
    the last frame.  Trajectories shorter than ``L`` yield no windows.
    """
    if L < 1 or stride < 1:
        raise ValueError("L and stride must be >= 1")
    T = len(traj)
    if T < L:
        return []
    out = []
    for s in range(0, T - L + 1, stride):
        lab = _window_label(traj.labels[s : s + L])
        out.append(LabeledWindow(traj.id, s, L, traj.joints[s : s + L], LABELS[lab]))
    return out


def window_all(trajs: Iterable[JointTrajectory], L: int, stride: int = 1) -> list[LabeledWindow]:
    return [w for tr in trajs for w in window(tr, L, stride)]


def stack_windows(windows: Sequence[LabeledWindow]) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(X, y)`` with X of shape (N, L, D) and y class indices."""
    if not windows:
        raise ValueError("no windows to stack")
    X = np.stack([w.data for w in windows]).astype(np.float64, copy=False)
    y = np.array([w.label.index for w in windows], dtype=np.int64)
    return X, y


def segment_chunks(traj: JointTrajectory) -> list[ActionChunk]:
    """Run-length encode the frame labels into maximal single-action chunks."""
    labels = traj.labels
    change = np.flatnonzero(np.diff(labels)) + 1
    bounds = np.concatenate([[0], change, [labels.size]])
    return [
        ActionChunk(traj.id, int(a), int(b), LABELS[labels[a]])
        for a, b in zip(bounds[:-1], bounds[1:])
    ]


def _partition_counts(n: int, ratios: tuple[float, float]) -> tuple[int, int, int]:
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    # every part gets at least one member
    n_train = min(max(n_train, 1), n - 2)
    n_val = min(max(n_val, 1), n - n_train - 1)
    return n_train, n_val, n - n_train - n_val


def split_dataset(trajs: Sequence[JointTrajectory], ratios=(0.7, 0.15), seed: int = 0) -> DatasetSplit:
    """Deterministic train/val/test split.

    Whole subjects are assigned to one part when at least three subjects are
    present; otherwise trajectories are split individually.
    """
    r_train, r_val = float(ratios[0]), float(ratios[1])
    if r_train <= 0 or r_val <= 0 or r_train + r_val >= 1:
        raise ValueError(f"invalid split ratios {ratios!r}")
    if len(trajs) < 3:
        raise ValueError(f"need at least 3 trajectories to split, got {len(trajs)}")
    ids = [tr.id for tr in trajs]
    if len(set(ids)) != len(ids):
        raise DatasetError("duplicate trajectory ids")
    rng = rng_for(seed, "split")
    subjects = sorted({tr.subject for tr in trajs})
    if len(subjects) >= 3:
        order = [subjects[i] for i in rng.permutation(len(subjects))]
        n_tr, n_va, _ = _partition_counts(len(order), (r_train, r_val))
        part_of = {s: 0 for s in order[:n_tr]}
        part_of.update({s: 1 for s in order[n_tr : n_tr + n_va]})
        part_of.update({s: 2 for s in order[n_tr + n_va :]})
        parts = ([], [], [])
        for tr in trajs:
            parts[part_of[tr.subject]].append(tr.id)
    else:
        order = [ids[i] for i in rng.permutation(len(ids))]
        n_tr, n_va, _ = _partition_counts(len(order), (r_train, r_val))
        chosen = (set(order[:n_tr]), set(order[n_tr : n_tr + n_va]))
        parts = ([], [], [])
        for i in ids:
            parts[0 if i in chosen[0] else 1 if i in chosen[1] else 2].append(i)
    return DatasetSplit(train=parts[0], val=parts[1], test=parts[2])


def dataset_stats(trajs: Iterable[JointTrajectory]) -> DatasetStats:
    per_class = {lab: ClassStats() for lab in LABELS}
    for tr in trajs:
        counts = np.bincount(tr.labels, minlength=NUM_CLASSES)
        for lab in LABELS:
            per_class[lab].frame_count += int(counts[lab.index])
        for ch in segment_chunks(tr):
            st = per_class[ch.label]
            st.event_count += 1
            st.durations_s.append(ch.length / tr.rate_hz)
    return DatasetStats(per_class)


def label_histogram(windows: Iterable[LabeledWindow]) -> Counter:
    return Counter(w.label for w in windows)
