"""LPC extrapolation baseline: Burg-fitted predictors from both contexts, squared-cosine mix."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter, lfiltic

from .signal import AudioBuffer, Segment

# Stop the recursion once the residual energy is this small relative to the input.
_RESIDUAL_FLOOR = 1e-24
_MAX_REFLECTION = 1.0 - 1e-12


@dataclass(frozen=True)
class BurgModel:
    """Linear predictor ``x[n] ~ sum_k coefficients[k-1] * x[n-k]``."""

    coefficients: np.ndarray
    reflection_coeffs: np.ndarray

    @property
    def order(self) -> int:
        return len(self.coefficients)

    def error_filter(self) -> np.ndarray:
        """Prediction-error polynomial ``[1, -c_1, ..., -c_p]``."""
        return np.concatenate([[1.0], -self.coefficients])


def burg_fit(context: AudioBuffer | np.ndarray, order: int) -> BurgModel:
    """Fit a predictor of the given order with Burg's lattice recursion.

    Each stage picks the reflection coefficient minimising the summed
    forward and backward prediction error power, then updates the error
    sequences and the direct-form coefficients (Levinson step).
    """
    x = context.samples if isinstance(context, AudioBuffer) else np.asarray(context, float)
    if order < 1:
        raise ValueError("order must be at least 1")
    if order >= len(x):
        raise ValueError(f"order {order} must be smaller than the context length {len(x)}")
    a = np.zeros(order + 1)
    a[0] = 1.0
    refl = np.zeros(order)
    energy = float(np.dot(x, x))
    if energy == 0.0:
        return BurgModel(np.zeros(order), refl)

    f = x[1:].copy()
    b = x[:-1].copy()
    for m in range(order):
        den = np.dot(f, f) + np.dot(b, b)
        if den <= _RESIDUAL_FLOOR * energy:
            break
        k = -2.0 * np.dot(f, b) / den
        k = min(max(k, -_MAX_REFLECTION), _MAX_REFLECTION)
        refl[m] = k
        a[1:m + 2] = a[1:m + 2] + k * a[m::-1]
        f, b = (f + k * b)[1:], (b + k * f)[:-1]
    return BurgModel(-a[1:], refl)


def extrapolate(model: BurgModel, context: AudioBuffer | np.ndarray, n: int) -> AudioBuffer:
    """Continue ``context`` by ``n`` samples, feeding predictions back as history."""
    x = context.samples if isinstance(context, AudioBuffer) else np.asarray(context, float)
    fs = context.sample_rate if isinstance(context, AudioBuffer) else AudioBuffer(x).sample_rate
    p = model.order
    if len(x) < p:
        raise ValueError("context shorter than the model order")
    if n <= 0:
        return AudioBuffer(np.zeros(0), fs)
    # All-pole synthesis filter driven by zeros, its state loaded with the context tail.
    den = model.error_filter()
    zi = lfiltic([1.0], den, x[len(x) - p:][::-1])
    out = lfilter([1.0], den, np.zeros(n), zi=zi)[0]
    return AudioBuffer(out, fs)


def crossfade_sq_cos(fwd: AudioBuffer | np.ndarray, bwd: AudioBuffer | np.ndarray) -> AudioBuffer:
    """``w * fwd + (1 - w) * bwd`` with ``w[n] = cos^2(pi n / (2 (L - 1)))``."""
    f = fwd.samples if isinstance(fwd, AudioBuffer) else np.asarray(fwd, float)
    b = bwd.samples if isinstance(bwd, AudioBuffer) else np.asarray(bwd, float)
    if f.shape != b.shape:
        raise ValueError("extrapolations must have equal length")
    fs = fwd.sample_rate if isinstance(fwd, AudioBuffer) else AudioBuffer(f).sample_rate
    L = len(f)
    if L == 1:
        return AudioBuffer(0.5 * (f + b), fs)
    w = np.cos(np.pi * np.arange(L) / (2 * (L - 1))) ** 2
    return AudioBuffer(w * f + (1 - w) * b, fs)


def lpc_inpaint(seg: Segment, order: int = 1000) -> AudioBuffer:
    """Restore the gap (``gap_len`` samples) of ``seg`` from both contexts."""
    if seg.spec.context_len <= order:
        raise ValueError(f"context of {seg.spec.context_len} samples too short for order {order}")
    lg = seg.spec.gap_len
    fwd = extrapolate(burg_fit(seg.before, order), seg.before, lg)
    rev = seg.after.reversed()
    bwd = extrapolate(burg_fit(rev, order), rev, lg).reversed()
    return crossfade_sq_cos(fwd, bwd)


def lpc_restore(seg: Segment, order: int = 1000) -> AudioBuffer:
    """Full-length restoration: the contexts with the LPC gap estimate in between."""
    gap = lpc_inpaint(seg, order)
    return AudioBuffer(np.concatenate([seg.before.samples, gap.samples, seg.after.samples]),
                       seg.spec.sample_rate)
