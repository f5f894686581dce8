"""Training data preparation and the two-phase Adam training loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..signal import Segment
from ..tf import FrameLayout, STFTParams, full_stft, prepare_context
from .loss import LossParams, batch_loss_f, batch_nmse
from .network import NetworkModel
from .optim import Adam

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainSchedule:
    lr_initial: float = 1e-3
    lr_refine: float = 1e-4
    monitor_every: int = 2000
    phase1_steps: int = 600_000
    phase2_steps: int = 200_000
    batch_size: int = 64

    def __post_init__(self):
        if min(self.lr_initial, self.lr_refine) <= 0:
            raise ValueError("learning rates must be positive")
        if self.monitor_every <= 0 or self.batch_size <= 0:
            raise ValueError("monitor_every and batch_size must be positive")
        if self.phase1_steps < 0 or self.phase2_steps < 0:
            raise ValueError("step counts must be nonnegative")

    @property
    def total_steps(self) -> int:
        return self.phase1_steps + self.phase2_steps

    def lr_at(self, step: int) -> float:
        return self.lr_initial if step < self.phase1_steps else self.lr_refine


def gap_target(seg: Segment, variant: str, params: STFTParams | None = None) -> np.ndarray:
    """Training target: the gap-overlap frames of the segment's transform.

    ``(2, bins, frames)`` real/imaginary for the complex variant,
    ``(1, bins, frames)`` moduli for the magnitude variant.
    """
    params = params or STFTParams(sample_rate=seg.spec.sample_rate)
    layout = FrameLayout(params, seg.spec)
    gap = full_stft(seg.full(), params, layout).coeffs[:, layout.gap_slice]
    if variant == "complex":
        return np.stack([gap.real, gap.imag])
    return np.abs(gap)[None]


def make_examples(segments, variant: str, params: STFTParams | None = None, dtype=np.float32):
    """Stack network inputs ``(N, 4, bins, 16)`` and targets ``(N, C, bins, 11)``."""
    segments = list(segments)
    if not segments:
        raise ValueError("no segments")
    x = np.stack([prepare_context(s, params).data for s in segments]).astype(dtype)
    y = np.stack([gap_target(s, variant, params) for s in segments]).astype(dtype)
    return x, y


def evaluate_nmse(model: NetworkModel, x: np.ndarray, y: np.ndarray, batch_size: int = 64) -> float:
    """Mean NMSE of inference-mode predictions, skipping all-zero targets."""
    vals = []
    for i in range(0, len(x), batch_size):
        pred = model.forward(x[i:i + batch_size], training=False)
        vals.append(batch_nmse(y[i:i + batch_size], pred))
    vals = np.concatenate(vals)
    vals = vals[np.isfinite(vals)]
    return float(vals.mean()) if vals.size else float("nan")


class BatchSampler:
    """Reshuffled epochs drawn from a seeded generator."""

    def __init__(self, n: int, batch_size: int, seed: int = 0):
        self.n, self.batch_size = n, min(batch_size, n)
        self.rng = np.random.default_rng(seed)
        self._order = np.empty(0, dtype=int)

    def next(self) -> np.ndarray:
        if len(self._order) < self.batch_size:
            self._order = np.concatenate([self._order, self.rng.permutation(self.n)])
        idx, self._order = self._order[:self.batch_size], self._order[self.batch_size:]
        return idx


def train(model: NetworkModel, train_data, schedule: TrainSchedule,
          loss_params: LossParams = LossParams(), val_data=None, seed: int = 0,
          optimizer: Adam | None = None, on_monitor=None):
    """Train from ``model.step`` up to ``schedule.total_steps``.

    ``train_data`` and ``val_data`` are ``(x, y)`` pairs from
    :func:`make_examples`; validation defaults to the training data. Every
    ``monitor_every`` steps (and at step 0) the mean validation NMSE is
    logged and ``on_monitor(model, optimizer, entry)`` is called.

    Returns ``(model, optimizer, log)`` where ``log`` lists dicts with keys
    ``step``, ``lr``, ``val_nmse`` and ``train_loss`` (mean ``loss_f`` since
    the previous entry).
    """
    x, y = train_data
    if len(x) == 0:
        raise ValueError("empty training set")
    vx, vy = val_data if val_data is not None else train_data
    optimizer = optimizer or Adam(model)
    sampler = BatchSampler(len(x), schedule.batch_size, seed + model.step)
    monitor_log = []
    running = []

    def monitor():
        entry = {
            "step": model.step,
            "lr": schedule.lr_at(model.step),
            "val_nmse": evaluate_nmse(model, vx, vy, schedule.batch_size),
            "train_loss": float(np.mean(running)) if running else None,
        }
        running.clear()
        monitor_log.append(entry)
        log.info("step %d  lr %.0e  val NMSE %.4f", entry["step"], entry["lr"], entry["val_nmse"])
        if on_monitor is not None:
            on_monitor(model, optimizer, entry)

    if model.step % schedule.monitor_every == 0:
        monitor()
    while model.step < schedule.total_steps:
        idx = sampler.next()
        pred = model.forward(x[idx], training=True)
        value, grad = batch_loss_f(y[idx], pred, loss_params)
        running.append(value)
        grads = model.backward(grad, weight_decay=loss_params.lam)
        optimizer.step(model, grads, schedule.lr_at(model.step))
        if model.step % schedule.monitor_every == 0:
            monitor()
    return model, optimizer, monitor_log
