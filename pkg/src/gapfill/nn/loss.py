"""Reconstruction losses on gap coefficient grids."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LossParams:
    c: float = 5.0
    lam: float = 0.01

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError("c must be positive")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")


def _sq(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.vdot(x, x).real)


def loss_nmse(target, pred) -> float:
    """``||S - S'||^2 / ||S||^2``."""
    target, pred = np.asarray(target), np.asarray(pred)
    if target.shape != pred.shape:
        raise ValueError(f"shape mismatch {target.shape} vs {pred.shape}")
    energy = _sq(target)
    if energy == 0:
        raise ValueError("NMSE undefined for an all-zero target; use loss_f")
    return _sq(target - pred) / energy


def loss_f(target, pred, params: LossParams = LossParams()) -> float:
    """``||S - S'||^2 / (1/c + ||S||^2)``: MSE for quiet targets, NMSE for loud ones."""
    target, pred = np.asarray(target), np.asarray(pred)
    if target.shape != pred.shape:
        raise ValueError(f"shape mismatch {target.shape} vs {pred.shape}")
    return _sq(target - pred) / (1.0 / params.c + _sq(target))


def weight_penalty(model, lam: float) -> float:
    return 0.5 * lam * sum(_sq(w) for w in model.decayed_weights())


def total_loss(target, pred, model, params: LossParams = LossParams()) -> float:
    """``loss_f`` plus ``lam / 2`` times the squared norm of all kernels."""
    return loss_f(target, pred, params) + weight_penalty(model, params.lam)


def batch_loss_f(target: np.ndarray, pred: np.ndarray, params: LossParams = LossParams()):
    """Mean per-example ``loss_f`` over the leading axis and its gradient w.r.t. ``pred``."""
    if target.shape != pred.shape:
        raise ValueError(f"shape mismatch {target.shape} vs {pred.shape}")
    t = np.asarray(target, dtype=np.float64)
    p = np.asarray(pred, dtype=np.float64)
    n = t.shape[0]
    axes = tuple(range(1, t.ndim))
    diff = p - t
    denom = 1.0 / params.c + np.sum(t * t, axis=axes)
    per = np.sum(diff * diff, axis=axes) / denom
    bshape = (n,) + (1,) * (t.ndim - 1)
    grad = 2.0 * diff / denom.reshape(bshape) / n
    return float(per.mean()), grad


def batch_nmse(target: np.ndarray, pred: np.ndarray) -> np.ndarray:
    """Per-example NMSE; ``nan`` where the target is all zero."""
    t = np.asarray(target, dtype=np.float64)
    p = np.asarray(pred, dtype=np.float64)
    axes = tuple(range(1, t.ndim))
    energy = np.sum(t * t, axis=axes)
    err = np.sum((t - p) ** 2, axis=axes)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(energy > 0, err / energy, np.nan)
