"""Simulated imitation-learning policies of known quality.

A policy is a :class:`DegradationSpec` applied to reference recordings.  Its
ground-truth quality is a closed-form score::

    quality = exp(-(jitter_sigma / JITTER_SCALE
                    + lag_frames / LAG_SCALE
                    + |amplitude_scale - 1| / AMPLITUDE_SCALE
                    + confusion_prob / CONFUSION_SCALE))

i.e. a product of one exponential penalty per knob, so it is 1 for the
identity spec and strictly decreasing in every knob.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from ._seeding import derive_seed, rng_for
from .core import DEFAULT_DIM, LABELS, JointTrajectory, atomic_write_text, segment_chunks
from .synthgen import GenConfig, render_primitive

JITTER_SCALE = 0.1
LAG_SCALE = 5.0
AMPLITUDE_SCALE = 0.5
CONFUSION_SCALE = 0.25

_KNOB_SCALE = {
    "jitter_sigma": JITTER_SCALE,
    "amplitude_deviation": AMPLITUDE_SCALE,
    "confusion_prob": CONFUSION_SCALE,
}


class UnreachableQuality(ValueError):
    pass


@dataclass(frozen=True)
class DegradationSpec:
    jitter_sigma: float = 0.0
    lag_frames: int = 0
    amplitude_scale: float = 1.0
    confusion_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.jitter_sigma >= 0:
            raise ValueError("jitter_sigma must be >= 0")
        if int(self.lag_frames) != self.lag_frames or self.lag_frames < 0:
            raise ValueError("lag_frames must be a non-negative integer")
        if not 0 < self.amplitude_scale <= 2:
            raise ValueError("amplitude_scale must lie in (0, 2]")
        if not 0 <= self.confusion_prob <= 1:
            raise ValueError("confusion_prob must lie in [0, 1]")

    @property
    def is_identity(self) -> bool:
        return self.jitter_sigma == 0 and self.lag_frames == 0 and self.amplitude_scale == 1 and self.confusion_prob == 0

    def to_dict(self) -> dict:
        return asdict(self)


def quality(spec: DegradationSpec) -> float:
    penalty = (
        spec.jitter_sigma / JITTER_SCALE
        + spec.lag_frames / LAG_SCALE
        + abs(spec.amplitude_scale - 1.0) / AMPLITUDE_SCALE
        + spec.confusion_prob / CONFUSION_SCALE
    )
    return math.exp(-penalty)


@dataclass(frozen=True)
class SimulatedPolicy:
    name: str
    spec: DegradationSpec

    @property
    def quality(self) -> float:
        return quality(self.spec)

    def manifest(self) -> dict:
        return {"policy_name": self.name, "spec": self.spec.to_dict(), "quality": self.quality}


def apply(spec: DegradationSpec, ref: JointTrajectory, primitives: GenConfig | None = None) -> JointTrajectory:
    """Degrade ``ref`` chunk by chunk; timestamps and labels are kept.

    Order: confusion (a chunk's motion is regenerated as a uniformly chosen
    other class), amplitude scaling about the rest pose, lag (edge-padded
    shift), jitter.  The random stream is keyed by ``spec.seed`` and
    ``ref.id``.
    """
    if spec.is_identity:
        return ref
    if primitives is None and (spec.confusion_prob > 0 or spec.amplitude_scale != 1.0):
        if ref.dim != DEFAULT_DIM:
            raise ValueError(f"{ref.id}: pass a GenConfig matching dimension {ref.dim}")
        primitives = GenConfig()
    if primitives is not None and primitives.dim != ref.dim:
        raise ValueError(f"GenConfig dim {primitives.dim} != trajectory dim {ref.dim}")
    rng = rng_for(spec.seed, "apply", ref.id)
    X = ref.joints.copy()
    if spec.confusion_prob > 0:
        for ch in segment_chunks(ref):
            u = rng.random()
            pick = rng.integers(len(LABELS) - 1)
            if u >= spec.confusion_prob:
                continue
            others = [lab for lab in LABELS if lab is not ch.label]
            X[ch.start_index : ch.end_index] = render_primitive(
                primitives.primitives[others[pick]], ch.length, primitives,
                rng_for(spec.seed, "confuse", ref.id, ch.start_index),
            )
    if spec.amplitude_scale != 1.0:
        rest = primitives.rest_pose
        X = rest + spec.amplitude_scale * (X - rest)
    if spec.lag_frames:
        k = min(spec.lag_frames, len(X))
        X = np.concatenate([np.repeat(X[:1], k, axis=0), X[: len(X) - k]])
    if spec.jitter_sigma > 0:
        X = X + rng.normal(0.0, spec.jitter_sigma, size=X.shape)
    return ref.replace(joints=X)


# ------------------------------------------------------------- epoch families


@dataclass(frozen=True)
class DegradationRay:
    """Direction in knob space; ``t`` along the ray sets each knob to
    ``t * weight`` (amplitude knob as 1 - t * weight)."""

    jitter_sigma: float = 0.0
    amplitude_deviation: float = 0.0
    confusion_prob: float = 1.0

    def rate(self) -> float:
        return sum(getattr(self, k) / s for k, s in _KNOB_SCALE.items())

    def t_max(self) -> float:
        caps = []
        if self.confusion_prob > 0:
            caps.append(1.0 / self.confusion_prob)
        if self.amplitude_deviation > 0:
            # amplitude_scale must stay strictly above 0
            caps.append(math.nextafter(1.0 / self.amplitude_deviation, 0.0))
        return min(caps) if caps else math.inf

    def spec_at(self, t: float, seed: int) -> DegradationSpec:
        return DegradationSpec(
            jitter_sigma=t * self.jitter_sigma,
            amplitude_scale=1.0 - t * self.amplitude_deviation,
            confusion_prob=min(1.0, t * self.confusion_prob),
            seed=seed,
        )

    def invert(self, target: float, seed: int) -> DegradationSpec:
        if not 0 < target <= 1:
            raise UnreachableQuality(f"quality target {target} outside (0, 1]")
        r = self.rate()
        if r <= 0:
            if target == 1:
                return DegradationSpec(seed=seed)
            raise UnreachableQuality("degradation ray has no active knob")
        t = -math.log(target) / r
        if t > self.t_max():
            lo = math.exp(-r * self.t_max())
            raise UnreachableQuality(f"quality target {target} unreachable along this ray (minimum {lo:.6g})")
        return self.spec_at(t, seed)


@dataclass
class EpochFamily:
    policies: list[SimulatedPolicy]
    quality_curve: list[float]
    predictions: list[list[JointTrajectory]] = field(default_factory=list)

    def manifest(self) -> list[dict]:
        return [p.manifest() for p in self.policies]


def make_epoch_family(
    base: Sequence[JointTrajectory],
    curve: Sequence[float],
    seed: int = 0,
    ray: DegradationRay | None = None,
    primitives: GenConfig | None = None,
    name: str = "policy",
) -> EpochFamily:
    """One simulated checkpoint per ``curve`` entry, each hitting its quality
    target exactly, applied to every ``base`` trajectory."""
    curve = [float(q) for q in curve]
    if not curve:
        raise ValueError("quality curve must not be empty")
    if any(not 0 <= q <= 1 for q in curve):
        raise ValueError("quality targets must lie in [0, 1]")
    ray = ray or DegradationRay()
    policies, preds = [], []
    for e, q in enumerate(curve, start=1):
        spec = ray.invert(q, seed=derive_seed(seed, "epoch", e))
        pol = SimulatedPolicy(f"{name}-epoch{e:02d}", spec)
        policies.append(pol)
        preds.append([apply(spec, tr, primitives) for tr in base])
    return EpochFamily(policies, curve, preds)


def save_family_manifest(path, family: EpochFamily) -> None:
    atomic_write_text(path, json.dumps(family.manifest(), indent=1) + "\n")
