"""Adam with bias correction."""

from __future__ import annotations

import numpy as np


class Adam:
    def __init__(self, model, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.b1, self.b2, self.eps = b1, b2, eps
        self.t = 0
        self.m = {key: np.zeros_like(p) for key, _, _, p in model.named_params()}
        self.v = {key: np.zeros_like(p) for key, _, _, p in model.named_params()}

    def step(self, model, grads: dict, lr: float):
        self.t += 1
        b1, b2 = self.b1, self.b2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for key, layer, name, p in model.named_params():
            g = grads[key]
            m, v = self.m[key], self.v[key]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            update = lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p -= update.astype(p.dtype, copy=False)
        model.step += 1

    def state(self) -> dict:
        out = {}
        for key in self.m:
            out[f"adam.m.{key}"] = self.m[key]
            out[f"adam.v.{key}"] = self.v[key]
        return out

    def load_state(self, tensors: dict, t: int):
        self.t = int(t)
        for key in self.m:
            self.m[key][...] = tensors[f"adam.m.{key}"]
            self.v[key][...] = tensors[f"adam.v.{key}"]


def adam_step(model, grads: dict, lr: float, optimizer: Adam | None = None) -> Adam:
    """One Adam update of ``model`` in place; returns the optimizer holding the moments."""
    optimizer = optimizer or Adam(model)
    optimizer.step(model, grads, lr)
    return optimizer
