"""AdamW with decoupled weight decay, plus global-norm gradient clipping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamWState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamWState,
    lr: float,
    weight_decay: float = 1e-2,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> tuple[dict[str, np.ndarray], AdamWState]:
    """One AdamW update.

    Moments see the gradient only; the decay term shrinks each parameter by
    ``lr * weight_decay`` of itself before the adaptive step:

        p <- p * (1 - lr * wd) - lr * m_hat / (sqrt(v_hat) + eps)

    Returns new parameter arrays and a new state; inputs are not modified.
    """
    if state.step < 0:
        raise ValueError("optimizer step counter must be >= 0")
    b1, b2 = betas
    t = state.step + 1
    new_params, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ValueError(f"{k}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = b1 * state.m.get(k, 0.0) + (1 - b1) * g
        v = b2 * state.v.get(k, 0.0) + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        p_new = p * (1 - lr * weight_decay) if weight_decay else p.copy()
        p_new = p_new - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_params[k], new_m[k], new_v[k] = p_new, np.asarray(m), np.asarray(v)
    return new_params, AdamWState(step=t, m=new_m, v=new_v)


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> tuple[dict[str, np.ndarray], float]:
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if max_norm is None or norm <= max_norm or norm == 0.0:
        return grads, norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm
