"""Training loop, early stopping, evaluation and hyper-parameter grid search."""

from __future__ import annotations

import csv
import io
import itertools
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .._seeding import derive_seed, rng_for
from ..core import LabeledWindow, JointTrajectory, NUM_CLASSES, stack_windows, window_all
from .metrics import ClassificationReport
from .model import EvaluatorModel, NormStats, NumericalError, backward, batch_loss, forward_batch, standardize
from .optim import AdamWState, adamw_step, clip_global_norm

log = logging.getLogger(__name__)

DEFAULT_GRID = {
    "L": (16, 32, 64),
    "h": (16, 64, 128),
    "layers": (1, 3, 5),
    "lr": (1e-2, 1e-3, 1e-4),
    "noise_sigma": (0.0, 1e-1, 1e-2),
}


class TrainingDivergence(NumericalError):
    def __init__(self, epoch: int, detail: str = ""):
        self.epoch = epoch
        super().__init__(f"training diverged at epoch {epoch}" + (f": {detail}" if detail else ""))


@dataclass(frozen=True)
class TrainConfig:
    L: int = 32
    h: int = 64
    layers: int = 1
    lr: float = 1e-3
    noise_sigma: float = 1e-2
    max_epochs: int = 30
    patience: int = 5
    batch_size: int = 64
    weight_decay: float = 1e-2
    clip_norm: float | None = 5.0
    class_weights: tuple[float, ...] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.L < 1 or self.h < 1 or self.layers < 1 or self.batch_size < 1:
            raise ValueError("L, h, layers and batch_size must be positive")
        if self.max_epochs < 1 or self.patience < 1:
            raise ValueError("max_epochs and patience must be positive")
        if self.lr <= 0 or self.noise_sigma < 0 or self.weight_decay < 0:
            raise ValueError("lr must be positive; noise_sigma and weight_decay non-negative")
        if self.class_weights is not None:
            object.__setattr__(self, "class_weights", tuple(float(w) for w in self.class_weights))

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["class_weights"] is not None:
            d["class_weights"] = list(d["class_weights"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = set(cls.__dataclass_fields__)
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown training field(s): {', '.join(sorted(unknown))}")
        return cls(**d)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float


@dataclass
class TrainResult:
    history: list[EpochRecord]
    best_epoch: int
    best_model: EvaluatorModel
    stopped_early: bool
    config: TrainConfig
    seconds: float = 0.0

    @property
    def best_val_acc(self) -> float:
        return self.history[self.best_epoch - 1].val_acc

    def history_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "val_acc"])
        for r in self.history:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), repr(r.val_acc)])
        return buf.getvalue()


class EarlyStopping:
    """Tracks the best validation loss; signals a stop after ``patience``
    consecutive epochs without strict improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = 0
        self.bad_epochs = 0
        self.epoch = 0

    def update(self, val_loss: float) -> bool:
        self.epoch += 1
        if val_loss < self.best:
            self.best, self.best_epoch, self.bad_epochs = val_loss, self.epoch, 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience

    @property
    def improved(self) -> bool:
        return self.bad_epochs == 0


def augment(window: np.ndarray, sigma: float, seed: int) -> np.ndarray:
    """Add i.i.d. N(0, sigma) noise to every entry of ``window``."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    window = np.asarray(window, dtype=np.float64)
    if sigma == 0:
        return window.copy()
    return window + np.random.default_rng(seed).normal(0.0, sigma, size=window.shape)


def _loss_acc(model: EvaluatorModel, Xs: np.ndarray, y: np.ndarray, class_weights, batch: int = 1024):
    logits = np.concatenate([forward_batch(model, Xs[i : i + batch])[0] for i in range(0, len(Xs), batch)])
    loss, _ = batch_loss(logits, y, class_weights)
    return loss, float(np.mean(logits.argmax(axis=1) == y))


def _as_arrays(windows, L: int) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(windows, tuple) and len(windows) == 2 and isinstance(windows[0], np.ndarray):
        X, y = windows
    else:
        X, y = stack_windows(windows)
    if X.shape[1] != L:
        raise ValueError(f"windows have length {X.shape[1]}, config expects L={L}")
    return np.asarray(X, dtype=np.float64), np.asarray(y, dtype=np.int64)


def train(train_windows, val_windows, cfg: TrainConfig) -> TrainResult:
    """Fit an evaluator from scratch.

    ``train_windows`` / ``val_windows`` are lists of :class:`LabeledWindow`
    (or ``(X, y)`` array pairs) of raw joint data.  Standardization statistics
    come from the training windows and are stored in the returned model.
    """
    t0 = time.perf_counter()
    Xtr, ytr = _as_arrays(train_windows, cfg.L)
    Xva, yva = _as_arrays(val_windows, cfg.L)
    if Xtr.shape[2] != Xva.shape[2]:
        raise ValueError("training and validation windows differ in dimension")
    stats = NormStats.fit(Xtr)
    Zva = standardize(Xva, stats)
    model = EvaluatorModel.init(
        Xtr.shape[2], cfg.h, cfg.layers, NUM_CLASSES, seed=derive_seed(cfg.seed, "init"),
        norm_stats=stats, L=cfg.L, meta={"train_config": cfg.to_dict()},
    )
    rng = rng_for(cfg.seed, "train")
    opt = AdamWState()
    stopper = EarlyStopping(cfg.patience)
    history: list[EpochRecord] = []
    best = model.copy()
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(Xtr))
        total, count = 0.0, 0
        for s in range(0, len(order), cfg.batch_size):
            idx = order[s : s + cfg.batch_size]
            Xb = Xtr[idx]
            if cfg.noise_sigma > 0:
                Xb = Xb + rng.normal(0.0, cfg.noise_sigma, size=Xb.shape)
            try:
                loss, grads = backward(model, standardize(Xb, stats), ytr[idx], cfg.class_weights)
            except NumericalError as exc:
                raise TrainingDivergence(epoch, str(exc)) from None
            if not np.isfinite(loss):
                raise TrainingDivergence(epoch, "non-finite training loss")
            grads, _ = clip_global_norm(grads, cfg.clip_norm)
            model.params, opt = adamw_step(model.params, grads, opt, cfg.lr, cfg.weight_decay)
            total += loss * len(idx)
            count += len(idx)
        try:
            val_loss, val_acc = _loss_acc(model, Zva, yva, cfg.class_weights)
        except NumericalError as exc:
            raise TrainingDivergence(epoch, str(exc)) from None
        if not np.isfinite(val_loss):
            raise TrainingDivergence(epoch, "non-finite validation loss")
        history.append(EpochRecord(epoch, total / count, val_loss, val_acc))
        stop = stopper.update(val_loss)
        if stopper.improved:
            best = model.copy()
        log.debug("epoch %d train %.4f val %.4f acc %.4f", epoch, total / count, val_loss, val_acc)
        if stop:
            break
    best.meta.update(best_epoch=stopper.best_epoch, seed=cfg.seed)
    return TrainResult(
        history=history,
        best_epoch=stopper.best_epoch,
        best_model=best,
        stopped_early=len(history) < cfg.max_epochs,
        config=cfg,
        seconds=time.perf_counter() - t0,
    )


def evaluate(model: EvaluatorModel, windows) -> ClassificationReport:
    """Classify raw windows and tabulate the confusion matrix."""
    if isinstance(windows, tuple):
        X, y = windows
    else:
        X, y = stack_windows(windows)
    return ClassificationReport.from_predictions(y, model.predict(X), model.K)


# ----------------------------------------------------------------- grid search


@dataclass
class GridCell:
    config: TrainConfig
    val_acc: list[float] = field(default_factory=list)
    val_f1: list[float] = field(default_factory=list)
    best_epochs: list[int] = field(default_factory=list)
    failed: str | None = None

    @property
    def acc_mean(self) -> float:
        return float(np.mean(self.val_acc)) if self.val_acc and not self.failed else float("nan")

    @property
    def acc_std(self) -> float:
        return float(np.std(self.val_acc)) if self.val_acc and not self.failed else float("nan")

    @property
    def f1_mean(self) -> float:
        return float(np.mean(self.val_f1)) if self.val_f1 and not self.failed else float("nan")

    @property
    def f1_std(self) -> float:
        return float(np.std(self.val_f1)) if self.val_f1 and not self.failed else float("nan")


@dataclass
class GridResult:
    best: TrainConfig
    cells: list[GridCell]

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["L", "h", "layers", "lr", "noise_sigma", "A_mean", "A_std", "F1_mean", "F1_std", "status"])
        for c in self.cells:
            k = c.config
            w.writerow([k.L, k.h, k.layers, repr(k.lr), repr(k.noise_sigma), repr(c.acc_mean), repr(c.acc_std),
                        repr(c.f1_mean), repr(c.f1_std), "failed" if c.failed else "ok"])
        return buf.getvalue()


def _grid_configs(grids: dict, base: TrainConfig) -> list[TrainConfig]:
    keys = ("L", "h", "layers", "lr", "noise_sigma")
    unknown = set(grids) - set(keys)
    if unknown:
        raise ValueError(f"unknown grid axis: {', '.join(sorted(unknown))}")
    axes = [tuple(grids.get(k, (getattr(base, k),))) for k in keys]
    if any(len(a) == 0 for a in axes):
        raise ValueError("grid axes must be non-empty")
    return [replace(base, **dict(zip(keys, combo))) for combo in itertools.product(*axes)]


def _run_cell(args):
    cfg, tr, va = args
    try:
        res = train(tr, va, cfg)
    except TrainingDivergence as exc:
        return cfg, None, str(exc)
    rep = evaluate(res.best_model, va)
    return cfg, (res.best_val_acc, rep.macro_f1, res.best_epoch), None


def _tie_key(cell: GridCell):
    k = cell.config
    return (-cell.acc_mean, k.h, k.layers, k.lr)


def grid_search(
    train_data,
    val_data,
    grids: dict | None = None,
    seeds: Sequence[int] = (0, 1, 2),
    base: TrainConfig | None = None,
    stride: int = 4,
    workers: int = 1,
) -> GridResult:
    """Train every grid combination once per seed and keep the configuration
    with the best mean validation accuracy.

    ``train_data`` / ``val_data`` are trajectories (windowed per ``L`` with
    ``stride``) or ready-made windows whose length must match every ``L``.
    Equal means prefer smaller ``h``, then fewer layers, then lower ``lr``.
    A diverging run marks its cell failed without stopping the sweep.
    """
    base = base or TrainConfig()
    configs = _grid_configs(DEFAULT_GRID if grids is None else grids, base)
    use_trajs = bool(train_data) and isinstance(train_data[0], JointTrajectory)
    cache: dict[int, tuple] = {}

    def data_for(L):
        if L not in cache:
            if use_trajs:
                tr = stack_windows(window_all(train_data, L, stride))
                va = stack_windows(window_all(val_data, L, stride))
            else:
                tr, va = _as_arrays(train_data, L), _as_arrays(val_data, L)
            cache[L] = (tr, va)
        return cache[L]

    jobs = []
    for cfg in configs:
        tr, va = data_for(cfg.L)
        for s in seeds:
            jobs.append((replace(cfg, seed=int(s)), tr, va))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            outcomes = list(ex.map(_run_cell, jobs))
    else:
        outcomes = [_run_cell(j) for j in jobs]
    cells = {cfg: GridCell(cfg) for cfg in configs}
    for (job_cfg, *_), (_, res, err) in zip(jobs, outcomes):
        cell = cells[replace(job_cfg, seed=base.seed)]
        if err:
            cell.failed = err
            log.warning("grid cell %s failed: %s", job_cfg, err)
            continue
        acc, f1, ep = res
        cell.val_acc.append(acc)
        cell.val_f1.append(f1)
        cell.best_epochs.append(ep)
    ordered = list(cells.values())
    ok = [c for c in ordered if not c.failed]
    if not ok:
        raise TrainingDivergence(0, "every grid cell failed")
    best = min(ok, key=_tie_key)
    return GridResult(best=best.config, cells=ordered)
