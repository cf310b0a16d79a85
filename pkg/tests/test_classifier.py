import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neme.classifier import (
    AdamWState,
    ClassificationReport,
    EarlyStopping,
    EvaluatorModel,
    NormStats,
    TrainConfig,
    TrainingDivergence,
    adamw_step,
    augment,
    backward,
    clip_global_norm,
    cross_entropy,
    cross_entropy_from_logits,
    destandardize,
    evaluate,
    forward,
    forward_batch,
    grid_search,
    load_checkpoint,
    save_checkpoint,
    softmax,
    standardize,
    train,
)
from neme.classifier.checkpoint import CheckpointError
from neme.classifier.model import loss_only, sigmoid
from neme.core import stack_windows, window_all

K = 7


def _random_model(D=6, h=8, layers=1, seed=0, scale=0.5):
    m = EvaluatorModel.init(D, h, layers, K, seed=seed)
    rng = np.random.default_rng(seed + 100)
    for k in m.params:
        m.params[k] = m.params[k] + scale * rng.normal(size=m.params[k].shape)
    return m


# ----------------------------------------------------------- standardization


def test_standardize_identity():
    x = np.random.default_rng(0).normal(size=(5, 4, 3))
    np.testing.assert_array_equal(standardize(x, NormStats.identity(3)), x)


def test_standardize_constant_channel():
    X = np.ones((10, 4, 2))
    X[..., 0] = np.arange(40).reshape(10, 4)
    stats = NormStats.fit(X)
    assert stats.std[1] == 1.0
    Z = standardize(X, stats)
    assert np.all(np.isfinite(Z))
    assert np.all(Z[..., 1] == 0.0)


def test_standardize_round_trip():
    X = np.random.default_rng(1).normal(3.0, 2.0, size=(20, 8, 5))
    stats = NormStats.fit(X)
    Z = standardize(X, stats)
    np.testing.assert_allclose(Z.reshape(-1, 5).mean(0), 0, atol=1e-12)
    np.testing.assert_allclose(Z.reshape(-1, 5).std(0), 1, atol=1e-12)
    np.testing.assert_allclose(destandardize(Z, stats), X, atol=1e-12)


def test_standardize_dimension_check():
    with pytest.raises(ValueError, match="channels"):
        standardize(np.zeros((2, 3, 4)), NormStats.identity(5))


# --------------------------------------------------------------- augmentation


def test_augment_zero_sigma_is_copy():
    w = np.random.default_rng(0).normal(size=(32, 24))
    out = augment(w, 0.0, seed=1)
    np.testing.assert_array_equal(out, w)
    assert out is not w


def test_augment_noise_statistics():
    w = np.zeros((1000, 100))
    d = augment(w, 0.05, seed=2) - w
    assert abs(d.std() / 0.05 - 1) < 0.02
    assert abs(d.mean()) < 0.05 * 0.02


def test_augment_deterministic():
    w = np.zeros((8, 3))
    np.testing.assert_array_equal(augment(w, 0.1, 3), augment(w, 0.1, 3))
    assert not np.array_equal(augment(w, 0.1, 3), augment(w, 0.1, 4))


# --------------------------------------------------------------- forward pass


def test_zero_parameters_give_uniform():
    m = EvaluatorModel(D=4, h=5, layers=2)
    _, probs = forward(m, np.random.default_rng(0).normal(size=(6, 4)))
    np.testing.assert_allclose(probs, np.full(K, 1 / K), atol=1e-15)


def _reference_lstm(m, x):
    """Scalar-loop recurrence, one gate at a time."""
    p = m.params
    h = m.h
    hs, cs = np.zeros(h), np.zeros(h)
    for t in range(len(x)):
        u = p["proj.W"] @ x[t] + p["proj.b"]
        z = p["lstm0.W"] @ u + p["lstm0.U"] @ hs + p["lstm0.b"]
        i = 1 / (1 + np.exp(-z[:h]))
        f = 1 / (1 + np.exp(-z[h : 2 * h]))
        g = np.tanh(z[2 * h : 3 * h])
        o = 1 / (1 + np.exp(-z[3 * h :]))
        cs = f * cs + i * g
        hs = o * np.tanh(cs)
    return p["out.W"] @ hs + p["out.b"]


def test_forward_matches_reference_recurrence():
    m = _random_model(D=3, h=8, seed=4)
    x = np.random.default_rng(5).normal(size=(4, 3))
    logits, _ = forward(m, x)
    np.testing.assert_allclose(logits, _reference_lstm(m, x), rtol=1e-12, atol=1e-12)


def test_forward_batch_matches_single():
    m = _random_model(D=3, h=6, layers=2, seed=1)
    X = np.random.default_rng(2).normal(size=(5, 7, 3))
    batch, _ = forward_batch(m, X)
    for n in range(5):
        np.testing.assert_allclose(batch[n], forward(m, X[n])[0], rtol=1e-12, atol=1e-13)


def test_forward_rejects_wrong_dim():
    m = EvaluatorModel(D=4, h=2, layers=1)
    with pytest.raises(ValueError, match="shape"):
        forward_batch(m, np.zeros((2, 3, 5)))


def test_sigmoid_extremes():
    out = sigmoid(np.array([-1000.0, 0.0, 1000.0]))
    np.testing.assert_array_equal(out, [0.0, 0.5, 1.0])


# ------------------------------------------------------------ loss identities


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=10))
def test_softmax_normalized(z):
    p = softmax(np.array(z))
    assert abs(p.sum() - 1.0) <= 1e-12
    assert np.all(p >= 0)


def test_cross_entropy_values():
    assert abs(cross_entropy(np.full(7, 1 / 7), 3) - np.log(7)) <= 1e-12
    assert cross_entropy(np.eye(7)[2], 2) == 0.0
    assert abs(cross_entropy(np.array([0.7, 0.2, 0.1]), 0) - 0.356675) < 1e-6
    assert cross_entropy(np.eye(7)[2], 0) == pytest.approx(-np.log(1e-12))
    assert abs(cross_entropy_from_logits(np.zeros(7), 0) - np.log(7)) <= 1e-12


def test_readout_bias_gradient_is_probs_minus_onehot():
    m = _random_model(seed=3)
    x = np.random.default_rng(0).normal(size=(1, 8, 6))
    _, probs = forward(m, x[0])
    _, grads = backward(m, x, [2])
    np.testing.assert_allclose(grads["out.b"], probs - np.eye(K)[2], atol=1e-12)


def _fd_max_rel_error(m, X, y, eps=1e-5):
    _, grads = backward(m, X, y)
    worst = 0.0
    for k, p in m.params.items():
        num = np.empty_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + eps
            lp = loss_only(m, X, y)
            p[idx] = old - eps
            lm = loss_only(m, X, y)
            p[idx] = old
            num[idx] = (lp - lm) / (2 * eps)
        denom = np.maximum(np.abs(num) + np.abs(grads[k]), 1e-7)
        worst = max(worst, float(np.max(np.abs(num - grads[k]) / denom)))
    return worst


def test_gradient_check_two_layers():
    m = _random_model(D=3, h=4, layers=2, seed=8)
    rng = np.random.default_rng(9)
    X = rng.normal(size=(3, 5, 3))
    assert _fd_max_rel_error(m, X, rng.integers(0, K, 3)) < 1e-4


def test_gradient_check_class_weights():
    m = _random_model(D=3, h=4, seed=2)
    rng = np.random.default_rng(3)
    X, y = rng.normal(size=(4, 4, 3)), np.array([0, 1, 1, 5])
    w = np.linspace(0.5, 2.0, K)
    _, grads = backward(m, X, y, w)
    eps = 1e-6
    p = m.params["out.W"]
    old = p[1, 2]
    p[1, 2] = old + eps
    lp = loss_only(m, X, y, w)
    p[1, 2] = old - eps
    lm = loss_only(m, X, y, w)
    p[1, 2] = old
    assert abs((lp - lm) / (2 * eps) - grads["out.W"][1, 2]) < 1e-8


def test_duplicated_batch_same_gradient():
    m = _random_model(seed=5)
    rng = np.random.default_rng(6)
    X, y = rng.normal(size=(3, 8, 6)), np.array([0, 4, 6])
    l1, g1 = backward(m, X, y)
    l2, g2 = backward(m, np.concatenate([X, X]), np.concatenate([y, y]))
    assert abs(l1 - l2) < 1e-12
    for k in g1:
        np.testing.assert_allclose(g1[k], g2[k], rtol=1e-10, atol=1e-14)


def test_clamped_loss_has_zero_gradient():
    m = EvaluatorModel(D=2, h=2, layers=1)
    m.params["out.b"][:] = 0.0
    m.params["out.b"][0] = 100.0
    loss, grads = backward(m, np.zeros((1, 3, 2)), [1])
    assert loss == pytest.approx(-np.log(1e-12))
    assert all(np.all(g == 0) for g in grads.values())


# ------------------------------------------------------------------ optimizer


def _params(seed=0):
    rng = np.random.default_rng(seed)
    return {"a": rng.normal(size=(3, 2)), "b": rng.normal(size=4)}


def test_adamw_zero_grad_no_decay_is_fixed_point():
    p = _params()
    g = {k: np.zeros_like(v) for k, v in p.items()}
    new, st_ = adamw_step(p, g, AdamWState(), lr=1e-2, weight_decay=0.0)
    for k in p:
        np.testing.assert_array_equal(new[k], p[k])
    assert st_.step == 1


def test_adamw_decay_is_decoupled():
    p = _params()
    g = {k: np.zeros_like(v) for k, v in p.items()}
    new, _ = adamw_step(p, g, AdamWState(), lr=1e-2, weight_decay=0.1)
    for k in p:
        np.testing.assert_allclose(new[k], p[k] * (1 - 1e-3), rtol=1e-15)


def test_adamw_first_step_closed_form():
    p = _params(1)
    g = _params(2)
    lr, wd, eps = 1e-3, 1e-2, 1e-8
    new, st_ = adamw_step(p, g, AdamWState(), lr=lr, weight_decay=wd, eps=eps)
    for k in p:
        # bias-corrected moments reduce to g and g^2 on the first step
        expected = p[k] * (1 - lr * wd) - lr * g[k] / (np.abs(g[k]) + eps)
        np.testing.assert_allclose(new[k], expected, rtol=1e-12)
        np.testing.assert_allclose(st_.m[k], 0.1 * g[k])
    assert p["a"] is not new["a"]


def test_adamw_second_step():
    p, g1, g2 = _params(1), _params(2), _params(3)
    lr = 1e-2
    p1, s1 = adamw_step(p, g1, AdamWState(), lr=lr, weight_decay=0.0)
    p2, s2 = adamw_step(p1, g2, s1, lr=lr, weight_decay=0.0)
    for k in p:
        m = 0.9 * 0.1 * g1[k] + 0.1 * g2[k]
        v = 0.999 * 0.001 * g1[k] ** 2 + 0.001 * g2[k] ** 2
        mh, vh = m / (1 - 0.81), v / (1 - 0.999**2)
        np.testing.assert_allclose(p2[k], p1[k] - lr * mh / (np.sqrt(vh) + 1e-8), rtol=1e-12)
    assert s2.step == 2


def test_clip_global_norm():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    out, norm = clip_global_norm(g, 1.0)
    assert norm == 5.0
    np.testing.assert_allclose(np.sqrt(out["a"] ** 2 + out["b"] ** 2), 1.0)
    same, _ = clip_global_norm(g, 10.0)
    assert same is g


# ------------------------------------------------------------- early stopping


def test_early_stopping_sequence():
    es = EarlyStopping(5)
    losses = [1.0, 0.9, 0.95, 0.96, 0.97, 0.98, 0.99]
    stops = [es.update(v) for v in losses]
    assert stops == [False] * 6 + [True]
    assert es.best_epoch == 2


def test_early_stopping_equal_is_not_improvement():
    es = EarlyStopping(2)
    assert not es.update(1.0)
    assert not es.update(1.0)
    assert es.update(1.0)
    assert es.best_epoch == 1


# ------------------------------------------------------------------- training


@pytest.fixture(scope="module")
def small_data():
    from neme.synthgen import GenConfig, generate_dataset

    ds = generate_dataset(GenConfig(episodes=42, seed=2))
    tr = stack_windows(window_all(ds[:30], 16, 8))
    va = stack_windows(window_all(ds[30:], 16, 8))
    return tr, va, ds


def test_train_deterministic(small_data):
    tr, va, _ = small_data
    cfg = TrainConfig(L=16, h=8, max_epochs=3, seed=4)
    a, b = train(tr, va, cfg), train(tr, va, cfg)
    assert a.history == b.history
    for k in a.best_model.params:
        np.testing.assert_array_equal(a.best_model.params[k], b.best_model.params[k])


def test_train_loss_decreases(small_data):
    tr, va, _ = small_data
    res = train(tr, va, TrainConfig(L=16, h=16, lr=1e-2, max_epochs=5, patience=5))
    assert res.history[4].train_loss < res.history[0].train_loss


def test_best_checkpoint_is_min_val_loss(small_data):
    tr, va, _ = small_data
    res = train(tr, va, TrainConfig(L=16, h=16, lr=1e-2, max_epochs=8, patience=3, seed=1))
    losses = [r.val_loss for r in res.history]
    assert res.best_epoch == int(np.argmin(losses)) + 1
    from neme.classifier.training import _loss_acc

    Zva = standardize(va[0], res.best_model.norm_stats)
    assert _loss_acc(res.best_model, Zva, va[1], None)[0] == losses[res.best_epoch - 1]


def test_norm_stats_from_training_windows(small_data):
    tr, va, _ = small_data
    res = train(tr, va, TrainConfig(L=16, h=4, max_epochs=1))
    ref = NormStats.fit(tr[0])
    np.testing.assert_array_equal(res.best_model.norm_stats.mean, ref.mean)


def test_history_csv(small_data):
    tr, va, _ = small_data
    res = train(tr, va, TrainConfig(L=16, h=4, max_epochs=2))
    lines = res.history_csv().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss,val_acc"
    assert len(lines) == 3


def test_train_rejects_wrong_length(small_data):
    tr, va, _ = small_data
    with pytest.raises(ValueError, match="L=32"):
        train(tr, va, TrainConfig(L=32))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reported(small_data):
    tr, va, _ = small_data
    with pytest.raises(TrainingDivergence, match="epoch 1"):
        train(tr, va, TrainConfig(L=16, h=4, lr=1e308, max_epochs=1))


# -------------------------------------------------------------------- metrics


def test_f1_hand_example():
    rep = ClassificationReport.from_confusion([[5, 5], [0, 10]])
    np.testing.assert_allclose(rep.f1, [2 / 3, 0.8], atol=1e-4)
    assert abs(rep.macro_f1 - 0.7333) < 1e-4
    assert rep.accuracy == 0.75


def test_f1_absent_class():
    rep = ClassificationReport.from_predictions([0, 0, 1], [0, 0, 1], K=3)
    assert rep.absent.tolist() == [False, False, True]
    assert rep.macro_f1 == pytest.approx(2 / 3)
    assert rep.macro_f1_present == 1.0


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=1, max_size=40), st.permutations(range(5)))
def test_f1_class_permutation_invariant(pairs, perm):
    yt, yp = np.array(pairs).T
    perm = np.array(perm)
    a = ClassificationReport.from_predictions(yt, yp, 5)
    b = ClassificationReport.from_predictions(perm[yt], perm[yp], 5)
    assert a.accuracy == b.accuracy
    assert abs(a.macro_f1 - b.macro_f1) < 1e-12
    np.testing.assert_allclose(b.f1[perm], a.f1, atol=1e-12)


def test_predictions_scale_free(small_data):
    """Predictions are invariant to the raw-data scale because z-scoring
    comes from the data.  Power-of-two scaling keeps it bit-exact; the
    raw-space augmentation noise scales along with the data."""
    tr, va, _ = small_data
    cfg = TrainConfig(L=16, h=8, max_epochs=2)
    a = train(tr, va, cfg)
    b = train((tr[0] * 4.0, tr[1]), (va[0] * 4.0, va[1]), replace(cfg, noise_sigma=cfg.noise_sigma * 4.0))
    np.testing.assert_array_equal(a.best_model.predict(va[0]), b.best_model.predict(va[0] * 4.0))
    assert [r.val_loss for r in a.history] == [r.val_loss for r in b.history]


def test_evaluate_accepts_windows(small_data):
    tr, va, ds = small_data
    res = train(tr, va, TrainConfig(L=16, h=4, max_epochs=1))
    ws = window_all(ds[30:], 16, 8)
    assert evaluate(res.best_model, ws).confusion.tolist() == evaluate(res.best_model, va).confusion.tolist()


# ---------------------------------------------------------------- grid search


def test_grid_search_small(small_data):
    _, _, ds = small_data
    base = TrainConfig(max_epochs=2)
    grid = {"L": (16,), "h": (4, 8), "lr": (1e-2,), "layers": (1,), "noise_sigma": (0.0,)}
    res = grid_search(ds[:30], ds[30:], grid, seeds=(0, 1), base=base, stride=8)
    assert len(res.cells) == 2
    assert all(len(c.val_acc) == 2 for c in res.cells)
    best = max(res.cells, key=lambda c: c.acc_mean)
    assert res.best.h == (best.config.h if best.acc_mean > min(c.acc_mean for c in res.cells) else 4)
    lines = res.summary_csv().splitlines()
    assert lines[0].startswith("L,h,layers,lr,noise_sigma,A_mean")
    assert len(lines) == 3


def test_grid_tie_prefers_smaller_model(small_data):
    from neme.classifier.training import GridCell, _tie_key

    a = GridCell(TrainConfig(h=64, layers=1), val_acc=[0.9])
    b = GridCell(TrainConfig(h=16, layers=3), val_acc=[0.9])
    c = GridCell(TrainConfig(h=16, layers=1, lr=1e-2), val_acc=[0.9])
    d = GridCell(TrainConfig(h=16, layers=1, lr=1e-4), val_acc=[0.9])
    assert min([a, b, c, d], key=_tie_key) is d


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_grid_failed_cell_does_not_abort(small_data):
    tr, va, _ = small_data
    grid = {"L": (16,), "h": (4,), "lr": (1e-2, 1e308)}
    res = grid_search(tr, va, grid, seeds=(0,), base=TrainConfig(max_epochs=1))
    status = [c.failed is None for c in res.cells]
    assert status == [True, False]
    assert res.best.lr == 1e-2
    assert res.summary_csv().splitlines()[2].endswith("failed")


def test_grid_rejects_unknown_axis():
    with pytest.raises(ValueError, match="unknown grid axis"):
        grid_search([], [], {"depth": (1,)})


# ----------------------------------------------------------------- checkpoint


def test_checkpoint_round_trip(tmp_path):
    m = _random_model(seed=7)
    m.norm_stats = NormStats(np.arange(6.0), np.full(6, 2.0))
    m.L = 8
    save_checkpoint(tmp_path / "c.json", m)
    back = load_checkpoint(tmp_path / "c.json")
    X = np.random.default_rng(0).normal(size=(4, 8, 6))
    np.testing.assert_array_equal(m.predict_proba(X), back.predict_proba(X))
    assert back.L == 8
    save_checkpoint(tmp_path / "d.json", back)
    assert (tmp_path / "c.json").read_bytes() == (tmp_path / "d.json").read_bytes()


def test_checkpoint_rejects_bad_file(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"format": "other"}))
    with pytest.raises(CheckpointError):
        load_checkpoint(p)


def test_grid_independent_of_workers(small_data):
    tr, va, _ = small_data
    grid = {"L": (16,), "h": (4, 6)}
    base = TrainConfig(max_epochs=1)
    a = grid_search(tr, va, grid, seeds=(0, 1), base=base, workers=1)
    b = grid_search(tr, va, grid, seeds=(0, 1), base=base, workers=2)
    assert a.summary_csv() == b.summary_csv()
    assert a.best == b.best
