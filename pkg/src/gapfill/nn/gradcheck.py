"""Central finite-difference checks of the manual backward passes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import Layer, ReLU


@dataclass
class GradCheckResult:
    checked: int
    skipped: int
    max_rel_error: float


def _run(layers, x, training):
    h = x
    for layer in layers:
        h = layer.forward(h, training)
    return h


def _relu_masks(layers, x, training):
    """Activation patterns of every ReLU for input ``x``."""
    masks, h = [], x
    for layer in layers:
        h = layer.forward(h, training)
        if isinstance(layer, ReLU):
            masks.append(h > 0)
    return masks


def gradient_check(layers: list[Layer], x: np.ndarray, n_samples: int = 100, h: float = 1e-4,
                   training: bool = True, check_input: bool = True,
                   rng: np.random.Generator | None = None) -> GradCheckResult:
    """Compare analytic and numeric gradients of ``sum(r * f(x))`` for random ``r``.

    Samples up to ``n_samples`` entries per parameter tensor (and of the
    input). Entries whose perturbation flips any ReLU are skipped because
    the function is not differentiable there. Relative error is
    ``|num - ana| / max(|num|, |ana|, 1e-10)``.
    """
    rng = rng or np.random.default_rng(0)
    x = np.array(x, dtype=np.float64)
    y = _run(layers, x, training)
    r = rng.standard_normal(y.shape)
    base_masks = _relu_masks(layers, x, training)
    for layer in layers:
        layer.zero_grad()
    _run(layers, x, training)
    g = r
    for layer in reversed(layers):
        g = layer.backward(g)
    dx = g

    targets = [(layer.params[name], layer.grads[name].copy())
               for layer in layers for name in layer.params]
    if check_input:
        targets.append((x, dx))

    checked = skipped = 0
    worst = 0.0
    for arr, grad in targets:
        flat_idx = rng.choice(arr.size, size=min(n_samples, arr.size), replace=False)
        for fi in flat_idx:
            i = np.unravel_index(fi, arr.shape)
            old = arr[i]
            arr[i] = old + h
            fp = float(np.sum(r * _run(layers, x, training)))
            flip = any(np.any(a != b) for a, b in zip(_relu_masks(layers, x, training), base_masks))
            arr[i] = old - h
            fm = float(np.sum(r * _run(layers, x, training)))
            flip = flip or any(np.any(a != b) for a, b in
                               zip(_relu_masks(layers, x, training), base_masks))
            arr[i] = old
            if flip:
                skipped += 1
                continue
            num = (fp - fm) / (2 * h)
            ana = float(grad[i])
            worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), 1e-10))
            checked += 1
    return GradCheckResult(checked, skipped, worst)
