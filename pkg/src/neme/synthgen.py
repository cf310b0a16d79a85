"""Synthetic teleoperation-style trajectories built from parameterized
behaviour primitives.

Each episode is a ``still`` lead-in, one behaviour primitive and a ``still``
return, labeled per frame.  The default primitives put every class on its own
channel set and/or waveform so windows of different classes are separable.

Default 24-channel layout (configurable, only the indices matter)::

    0-2   neck            3-5   torso          6-8   right shoulder
    9     right elbow     10-12 left shoulder  13    left elbow
    14-15 right wrist     16-17 left wrist     18    gaze tilt
    19-22 shoulder/elbow currents (r, r, l, l) 23    auxiliary
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ._seeding import rng_for
from .core import (
    DEFAULT_DIM,
    DEFAULT_RATE_HZ,
    LABELS,
    NUM_CLASSES,
    BehaviorLabel,
    JointTrajectory,
)

WAVEFORMS = ("rest", "sinusoid", "ramp_hold_return", "ramp_hold")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BehaviorPrimitive:
    label: BehaviorLabel
    active_channels: tuple[int, ...]
    waveform: str
    amplitude: float = 0.0
    period_s: float = 1.0
    hold_s: float = 0.0
    base_noise_sigma: float = 0.01
    ramp_s: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "label", BehaviorLabel(self.label))
        object.__setattr__(self, "active_channels", tuple(int(c) for c in self.active_channels))
        if self.waveform not in WAVEFORMS:
            raise ConfigError(f"{self.label}: unknown waveform {self.waveform!r}")
        if self.label is not BehaviorLabel.STILL and not self.active_channels:
            raise ConfigError(f"{self.label}: active_channels must be non-empty")
        if self.period_s <= 0 or self.hold_s < 0 or self.base_noise_sigma < 0 or self.ramp_s < 0:
            raise ConfigError(f"{self.label}: period must be positive; hold, ramp and noise non-negative")

    def profile(self, n: int, rate_hz: float, phase: float = 0.0) -> np.ndarray:
        """Unit-free activation over ``n`` frames, scaled by ``amplitude``."""
        k = np.arange(n, dtype=np.float64)
        if self.waveform == "rest" or n == 0:
            return np.zeros(n)
        if self.waveform == "sinusoid":
            # raised arm oscillating around 3/4 of the amplitude
            return self.amplitude * (0.75 + 0.25 * np.sin(2 * np.pi * k / (self.period_s * rate_hz) + phase))
        n_ramp = max(1, int(round(self.ramp_s * rate_hz)))
        up = np.minimum((k + 1) / (n_ramp + 1), 1.0) if n_ramp else np.ones(n)
        if self.waveform == "ramp_hold":
            return self.amplitude * up
        down = np.minimum((n - k) / (n_ramp + 1), 1.0)
        return self.amplitude * np.minimum(up, down)


def default_primitives() -> dict[BehaviorLabel, BehaviorPrimitive]:
    B = BehaviorLabel
    prims = [
        BehaviorPrimitive(B.WAVE, (6, 7, 8), "sinusoid", amplitude=0.5, period_s=1.0),
        BehaviorPrimitive(B.SHAKE, (9, 14, 15), "ramp_hold_return", amplitude=0.6),
        BehaviorPrimitive(B.PICK, (9, 13, 19, 21), "ramp_hold", amplitude=0.5),
        BehaviorPrimitive(B.WALK, (3, 4, 5), "ramp_hold_return", amplitude=0.4),
        BehaviorPrimitive(B.PICK_WALK, (3, 4, 5, 9, 13, 19, 21), "ramp_hold", amplitude=0.5),
        BehaviorPrimitive(B.STILL, (), "rest"),
        BehaviorPrimitive(B.PICK_STILL, (9, 13, 19, 20, 21, 22), "ramp_hold", amplitude=0.5),
    ]
    return {p.label: p for p in prims}


def default_rest_pose(dim: int = DEFAULT_DIM) -> np.ndarray:
    pose = np.zeros(dim)
    # elbows slightly bent, gaze level
    for c, v in ((9, 0.3), (13, 0.3), (18, 0.1)):
        if c < dim:
            pose[c] = v
    return pose


@dataclass
class GenConfig:
    primitives: dict[BehaviorLabel, BehaviorPrimitive] = field(default_factory=default_primitives)
    dim: int = DEFAULT_DIM
    rest_pose: np.ndarray | None = None
    duration_range_s: dict[BehaviorLabel, tuple[float, float]] = field(
        default_factory=lambda: {lab: (1.0, 6.0) for lab in LABELS}
    )
    pad_range_s: tuple[float, float] = (0.5, 1.5)
    class_weights: tuple[float, ...] = (1.0,) * NUM_CLASSES
    episodes: int = 700
    rate_hz: float = DEFAULT_RATE_HZ
    subjects: int = 5
    subject_amplitude_jitter: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.rest_pose is None:
            self.rest_pose = default_rest_pose(self.dim)
        self.rest_pose = np.asarray(self.rest_pose, dtype=np.float64)
        self.class_weights = tuple(float(w) for w in self.class_weights)
        self.validate()

    def validate(self) -> None:
        if len(self.rest_pose) != self.dim:
            raise ConfigError(f"rest_pose has {len(self.rest_pose)} entries, dim is {self.dim}")
        if set(self.primitives) != set(LABELS):
            missing = sorted(l.value for l in set(LABELS) - set(self.primitives))
            raise ConfigError(f"primitives must cover every class exactly once (missing {missing})")
        for lab, p in self.primitives.items():
            if p.label is not lab:
                raise ConfigError(f"primitive keyed {lab} describes {p.label}")
            if any(c < 0 or c >= self.dim for c in p.active_channels):
                raise ConfigError(f"{lab}: active channel outside [0, {self.dim})")
        seen = {}
        for lab, p in self.primitives.items():
            key = (p.active_channels, p.waveform)
            if key in seen:
                raise ConfigError(f"{lab} and {seen[key]} share channels and waveform")
            seen[key] = lab
        if len(self.class_weights) != NUM_CLASSES or any(w < 0 for w in self.class_weights):
            raise ConfigError(f"class_weights must be {NUM_CLASSES} non-negative numbers")
        if sum(self.class_weights) <= 0:
            raise ConfigError("class_weights must not all be zero")
        for lab in LABELS:
            lo, hi = self.duration_range_s.get(lab, (None, None))
            if lo is None or lo <= 0 or lo > hi:
                raise ConfigError(f"{lab}: duration range must satisfy 0 < min <= max")
        lo, hi = self.pad_range_s
        if lo < 0 or lo > hi:
            raise ConfigError("pad_range_s must satisfy 0 <= min <= max")
        if self.episodes < 0 or self.rate_hz <= 0 or self.subjects < 1:
            raise ConfigError("episodes >= 0, rate_hz > 0 and subjects >= 1 required")

    def with_noise(self, sigma: float) -> "GenConfig":
        prims = {lab: replace(p, base_noise_sigma=sigma) for lab, p in self.primitives.items()}
        return replace(self, primitives=prims)

    # JSON config files mirror the dataclass fields; omitted keys keep defaults.
    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "rest_pose": self.rest_pose.tolist(),
            "primitives": {
                lab.value: {k: (list(v) if k == "active_channels" else v) for k, v in asdict(p).items() if k != "label"}
                for lab, p in self.primitives.items()
            },
            "duration_range_s": {lab.value: list(r) for lab, r in self.duration_range_s.items()},
            "pad_range_s": list(self.pad_range_s),
            "class_weights": list(self.class_weights),
            "episodes": self.episodes,
            "rate_hz": self.rate_hz,
            "subjects": self.subjects,
            "subject_amplitude_jitter": self.subject_amplitude_jitter,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        known = {
            "dim", "rest_pose", "primitives", "duration_range_s", "pad_range_s", "class_weights",
            "episodes", "rate_hz", "subjects", "subject_amplitude_jitter", "seed",
        }
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config field(s): {', '.join(sorted(unknown))}")
        kw = {k: d[k] for k in known & set(d) if k not in ("primitives", "duration_range_s")}
        base_prims = default_primitives()
        for name, spec in d.get("primitives", {}).items():
            lab = _parse_label(name, "primitives")
            try:
                base_prims[lab] = replace(base_prims[lab], **spec)
            except TypeError as exc:
                raise ConfigError(f"primitives.{name}: {exc}") from None
        kw["primitives"] = base_prims
        durations = {lab: (1.0, 6.0) for lab in LABELS}
        for name, rng in d.get("duration_range_s", {}).items():
            durations[_parse_label(name, "duration_range_s")] = tuple(float(x) for x in rng)
        kw["duration_range_s"] = durations
        if "pad_range_s" in kw:
            kw["pad_range_s"] = tuple(float(x) for x in kw["pad_range_s"])
        if "class_weights" in kw and isinstance(kw["class_weights"], dict):
            kw["class_weights"] = tuple(float(kw["class_weights"].get(l.value, 0.0)) for l in LABELS)
        return cls(**kw)


def _parse_label(name: str, where: str) -> BehaviorLabel:
    try:
        return BehaviorLabel(name)
    except ValueError:
        raise ConfigError(f"{where}: unknown class {name!r}") from None


def load_config(path) -> GenConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return GenConfig.from_dict(d)


def render_primitive(
    prim: BehaviorPrimitive,
    n_frames: int,
    cfg: GenConfig,
    rng: np.random.Generator,
    amplitude_scale: float = 1.0,
) -> np.ndarray:
    """Joint matrix (n_frames, D) for one primitive, including base noise."""
    out = np.tile(cfg.rest_pose, (n_frames, 1))
    if prim.active_channels and prim.waveform != "rest":
        phase = rng.uniform(0, 2 * np.pi) if prim.waveform == "sinusoid" else 0.0
        prof = amplitude_scale * prim.profile(n_frames, cfg.rate_hz, phase)
        out[:, list(prim.active_channels)] += prof[:, None]
    if prim.base_noise_sigma > 0:
        sd = prim.base_noise_sigma
        # truncated at 3 sd so rest frames provably stay within 3 sd of the pose
        out += np.clip(rng.normal(0.0, sd, size=out.shape), -3 * sd, 3 * sd)
    return out


def _subject_scale(cfg: GenConfig, subject_idx: int) -> float:
    if cfg.subject_amplitude_jitter == 0:
        return 1.0
    r = rng_for(cfg.seed, "subject", subject_idx)
    return float(1.0 + r.uniform(-cfg.subject_amplitude_jitter, cfg.subject_amplitude_jitter))


def _frames(seconds: float, rate_hz: float) -> int:
    return max(1, int(round(seconds * rate_hz)))


def generate_trajectory(
    label,
    cfg: GenConfig,
    seed: int,
    traj_id: str | None = None,
    subject: str = "s0",
    amplitude_scale: float = 1.0,
) -> JointTrajectory:
    """One episode: still lead-in, the ``label`` primitive, still return."""
    label = BehaviorLabel(label)
    rng = rng_for(seed, "episode")
    still = cfg.primitives[BehaviorLabel.STILL]
    prim = cfg.primitives[label]
    n_lead = _frames(rng.uniform(*cfg.pad_range_s), cfg.rate_hz)
    n_main = _frames(rng.uniform(*cfg.duration_range_s[label]), cfg.rate_hz)
    n_tail = _frames(rng.uniform(*cfg.pad_range_s), cfg.rate_hz)
    parts = [
        render_primitive(still, n_lead, cfg, rng),
        render_primitive(prim, n_main, cfg, rng, amplitude_scale),
        render_primitive(still, n_tail, cfg, rng),
    ]
    labels = np.concatenate([
        np.full(n_lead, BehaviorLabel.STILL.index),
        np.full(n_main, label.index),
        np.full(n_tail, BehaviorLabel.STILL.index),
    ])
    return JointTrajectory.regular(
        traj_id or f"{label.value}-{seed}", subject, np.concatenate(parts), labels, rate_hz=cfg.rate_hz
    )


def generate_dataset(cfg: GenConfig) -> list[JointTrajectory]:
    """``cfg.episodes`` episodes with classes drawn by ``cfg.class_weights``.

    Episode ``i`` seeds its own stream from ``(cfg.seed, i)`` so episodes are
    independent of generation order.
    """
    w = np.asarray(cfg.class_weights, dtype=np.float64)
    classes = rng_for(cfg.seed, "classes").choice(NUM_CLASSES, size=cfg.episodes, p=w / w.sum())
    scales = [_subject_scale(cfg, s) for s in range(cfg.subjects)]
    out = []
    for i, c in enumerate(classes):
        subj = i % cfg.subjects
        out.append(
            generate_trajectory(
                LABELS[c],
                cfg,
                seed=int(rng_for(cfg.seed, "episode", i).integers(2**32)),
                traj_id=f"ep{i:04d}",
                subject=f"subject{subj}",
                amplitude_scale=scales[subj],
            )
        )
    return out
