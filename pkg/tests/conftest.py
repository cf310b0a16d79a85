import time

import numpy as np
import pytest

from neme.classifier import TrainConfig, train
from neme.core import JointTrajectory, split_dataset, window_all
from neme.synthgen import GenConfig, generate_dataset


def make_traj(labels, dim=3, rate=10.0, id="tr", subject="s0", seed=0):
    rng = np.random.default_rng(seed)
    return JointTrajectory.regular(id, subject, rng.normal(size=(len(labels), dim)), labels, rate_hz=rate)


@pytest.fixture(scope="session")
def default_dataset():
    return generate_dataset(GenConfig())


@pytest.fixture(scope="session")
def default_split(default_dataset):
    sp = split_dataset(default_dataset, (0.6, 0.2), seed=0)
    return {k: sp.select(default_dataset, k) for k in ("train", "val", "test")}


@pytest.fixture(scope="session")
def trained(default_split):
    """The reference evaluator: L=32, h=64, 1 layer, lr 1e-3, sigma 1e-2."""
    cfg = TrainConfig(L=32, h=64, layers=1, lr=1e-3, noise_sigma=1e-2, max_epochs=30, patience=5, seed=0)
    tr = window_all(default_split["train"], cfg.L, 4)
    va = window_all(default_split["val"], cfg.L, 16)
    t0 = time.perf_counter()
    res = train(tr, va, cfg)
    res.wall_clock = time.perf_counter() - t0
    return res
