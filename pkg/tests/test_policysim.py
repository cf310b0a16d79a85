import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from neme.core import segment_chunks
from neme.policysim import (
    DegradationRay,
    DegradationSpec,
    SimulatedPolicy,
    UnreachableQuality,
    apply,
    make_epoch_family,
    quality,
    save_family_manifest,
)
from neme.synthgen import GenConfig, generate_dataset


@pytest.fixture(scope="module")
def refs():
    return generate_dataset(GenConfig(episodes=30, seed=5))


# -------------------------------------------------------------------- quality


def test_identity_quality_is_one():
    assert quality(DegradationSpec()) == 1.0
    assert quality(DegradationSpec(seed=99)) == 1.0


@settings(max_examples=80, deadline=None)
@given(
    st.floats(0, 1), st.integers(0, 20), st.floats(0.05, 2.0), st.floats(0, 1),
    st.sampled_from(["jitter_sigma", "lag_frames", "amplitude", "confusion_prob"]),
)
def test_quality_strictly_decreasing_in_each_knob(j, lag, amp, conf, knob):
    s = DegradationSpec(j, lag, amp, conf)
    q = quality(s)
    assert 0 < q <= 1
    if knob == "jitter_sigma":
        t = DegradationSpec(j + 0.01, lag, amp, conf)
    elif knob == "lag_frames":
        t = DegradationSpec(j, lag + 1, amp, conf)
    elif knob == "amplitude":
        farther = amp + 0.01 if amp >= 1 else amp - 0.01
        if not 0 < farther <= 2:
            return
        t = DegradationSpec(j, lag, farther, conf)
    else:
        if conf >= 0.99:
            return
        t = DegradationSpec(j, lag, amp, conf + 0.01)
    assert quality(t) < q


def test_quality_seed_invariant():
    assert quality(DegradationSpec(0.1, 2, 0.8, 0.3, seed=1)) == quality(DegradationSpec(0.1, 2, 0.8, 0.3, seed=2))


def test_quality_closed_form():
    s = DegradationSpec(0.05, 1, 1.25, 0.1)
    assert quality(s) == pytest.approx(math.exp(-(0.5 + 0.2 + 0.5 + 0.4)), rel=1e-15)


def test_spec_validation():
    for bad in ({"jitter_sigma": -1}, {"lag_frames": 1.5}, {"amplitude_scale": 0}, {"amplitude_scale": 2.5},
                {"confusion_prob": 1.1}):
        with pytest.raises(ValueError):
            DegradationSpec(**bad)


# ---------------------------------------------------------------------- apply


def test_identity_apply_is_bit_exact(refs):
    for tr in refs[:5]:
        out = apply(DegradationSpec(seed=3), tr)
        np.testing.assert_array_equal(out.joints, tr.joints)
        assert out.same_as(tr)


def test_structure_preserved(refs):
    spec = DegradationSpec(0.05, 2, 0.7, 0.5, seed=1)
    for tr in refs[:10]:
        out = apply(spec, tr)
        assert len(out) == len(tr) and out.dim == tr.dim
        np.testing.assert_array_equal(out.t, tr.t)
        np.testing.assert_array_equal(out.labels, tr.labels)
        assert out.id == tr.id and out.subject == tr.subject


def test_jitter_chi_mean(default_dataset):
    refs = default_dataset[:200]
    sigma = 0.05
    spec = DegradationSpec(jitter_sigma=sigma, seed=2)
    dev = np.concatenate([np.linalg.norm(apply(spec, tr).joints - tr.joints, axis=1) for tr in refs])
    assert len(dev) >= 10_000
    D = refs[0].dim
    chi_mean = stats.chi(D).mean() * sigma
    assert abs(dev.mean() / chi_mean - 1) < 0.05
    assert abs(dev.mean() / (sigma * math.sqrt(D)) - 1) < 0.05


def test_lag_shift(refs):
    tr = refs[0]
    out = apply(DegradationSpec(lag_frames=3), tr)
    np.testing.assert_array_equal(out.joints[3:], tr.joints[:-3])
    np.testing.assert_array_equal(out.joints[:3], np.repeat(tr.joints[:1], 3, axis=0))


def test_amplitude_about_rest_pose(refs):
    cfg = GenConfig()
    tr = refs[1]
    out = apply(DegradationSpec(amplitude_scale=0.5), tr)
    np.testing.assert_allclose(out.joints - cfg.rest_pose, 0.5 * (tr.joints - cfg.rest_pose), atol=1e-15)


def test_full_confusion_changes_every_chunk(refs):
    spec = DegradationSpec(confusion_prob=1.0, seed=4)
    for tr in refs[:10]:
        out = apply(spec, tr)
        for ch in segment_chunks(tr):
            assert not np.array_equal(out.joints[ch.start_index : ch.end_index], tr.joints[ch.start_index : ch.end_index])


def test_apply_deterministic(refs):
    spec = DegradationSpec(0.02, 1, 0.9, 0.5, seed=8)
    a, b = apply(spec, refs[2]), apply(spec, refs[2])
    np.testing.assert_array_equal(a.joints, b.joints)
    c = apply(DegradationSpec(0.02, 1, 0.9, 0.5, seed=9), refs[2])
    assert not np.array_equal(a.joints, c.joints)


def test_apply_needs_matching_config(refs):
    from conftest import make_traj

    small = make_traj(["wave"] * 5, dim=3)
    with pytest.raises(ValueError, match="dimension 3"):
        apply(DegradationSpec(confusion_prob=0.5), small)
    # jitter and lag need no primitives
    assert apply(DegradationSpec(jitter_sigma=0.1, lag_frames=1), small).dim == 3


# ------------------------------------------------------------------- families


def test_single_epoch_family_equals_base(refs):
    fam = make_epoch_family(refs[:4], [1.0], seed=0)
    assert len(fam.policies) == 1
    assert fam.policies[0].quality == 1.0
    for a, b in zip(fam.predictions[0], refs[:4]):
        assert a.same_as(b)


def test_family_hits_targets(refs):
    curve = [0.3, 0.6, 0.9]
    fam = make_epoch_family(refs[:3], curve, seed=1)
    for pol, q in zip(fam.policies, curve):
        assert abs(pol.quality - q) <= 1e-9
    assert [p.name for p in fam.policies] == ["policy-epoch01", "policy-epoch02", "policy-epoch03"]


@settings(max_examples=40, deadline=None)
@given(
    st.floats(0.05, 1.0),
    st.floats(0, 0.2), st.floats(0, 0.3), st.floats(0, 1),
)
def test_ray_inverts_exactly(target, j, a, c):
    ray = DegradationRay(j, a, c)
    try:
        spec = ray.invert(target, seed=0)
    except UnreachableQuality:
        # only legal when the ray bottoms out above the target
        assert ray.rate() == 0 or math.exp(-ray.rate() * ray.t_max()) > target - 1e-12
        return
    assert abs(quality(spec) - target) <= 1e-9


def test_family_deterministic(refs):
    a = make_epoch_family(refs[:3], [0.9, 0.5], seed=2)
    b = make_epoch_family(refs[:3], [0.9, 0.5], seed=2)
    assert a.manifest() == b.manifest()
    for pa, pb in zip(a.predictions, b.predictions):
        assert all(x.same_as(y) for x, y in zip(pa, pb))


def test_unreachable_target(refs):
    # confusion alone cannot go below exp(-4)
    with pytest.raises(UnreachableQuality, match="unreachable"):
        make_epoch_family(refs[:1], [0.01])
    with pytest.raises(UnreachableQuality):
        DegradationRay(0, 0, 0).invert(0.5, 0)
    with pytest.raises(ValueError):
        make_epoch_family(refs[:1], [])
    # a mixed ray reaches it
    spec = DegradationRay(jitter_sigma=0.1, confusion_prob=1.0).invert(0.01, 0)
    assert quality(spec) == pytest.approx(0.01, abs=1e-9)


def test_manifest(tmp_path, refs):
    fam = make_epoch_family(refs[:2], [0.8, 0.4], seed=0)
    save_family_manifest(tmp_path / "f.json", fam)
    data = json.loads((tmp_path / "f.json").read_text())
    assert [d["policy_name"] for d in data] == ["policy-epoch01", "policy-epoch02"]
    assert data[1]["quality"] == pytest.approx(0.4)
    assert set(data[0]["spec"]) == {"jitter_sigma", "lag_frames", "amplitude_scale", "confusion_prob", "seed"}
    assert SimulatedPolicy("x", DegradationSpec()).manifest()["quality"] == 1.0
