"""Layers with explicit forward/backward passes on ``(N, C, H, W)`` arrays.

Every layer caches what its backward pass needs during ``forward`` and
accumulates parameter gradients into ``self.grads`` during ``backward``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._cache = None

    # names of parameters that count towards weight decay
    decayed: tuple[str, ...] = ()

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def output_shape(self, shape: tuple) -> tuple:
        """Per-sample output shape for a per-sample input shape."""
        raise NotImplementedError

    def zero_grad(self):
        for name, p in self.params.items():
            self.grads[name] = np.zeros_like(p)

    def _need_cache(self):
        if self._cache is None:
            raise RuntimeError(f"{type(self).__name__}.backward called without a forward pass")
        return self._cache


def _windows(x, kh, kw, sh, sw):
    """``(N, C, Ho, Wo, kh, kw)`` strided view of every kernel placement."""
    return sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]


def _scatter_windows(cols, out_hw, sh, sw):
    """Adjoint of :func:`_windows`: add ``(N, Ho, Wo, C, kh, kw)`` patches into ``(N, C, H, W)``."""
    n, ho, wo, c, kh, kw = cols.shape
    out = np.zeros((n, c) + tuple(out_hw), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw] += \
                cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return out


def _fan_in_uniform(rng, shape, fan_in, dtype):
    # unit-variance gain: inputs are batch-normalised, hence zero-mean
    bound = np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d(Layer):
    kind = "conv"
    decayed = ("weight",)

    def __init__(self, c_in, c_out, kernel, stride=(1, 1), padding=(0, 0, 0, 0),
                 rng=None, dtype=np.float32):
        super().__init__()
        self.kernel, self.stride, self.padding = tuple(kernel), tuple(stride), tuple(padding)
        kh, kw = self.kernel
        rng = rng or np.random.default_rng(0)
        self.params["weight"] = _fan_in_uniform(rng, (c_out, c_in, kh, kw), c_in * kh * kw, dtype)
        self.params["bias"] = np.zeros(c_out, dtype=dtype)
        self.zero_grad()

    def output_shape(self, shape):
        c, h, w = shape
        (kh, kw), (sh, sw), (pt, pb, pl, pr) = self.kernel, self.stride, self.padding
        if c != self.params["weight"].shape[1]:
            raise ValueError(f"conv expects {self.params['weight'].shape[1]} channels, got {c}")
        ho, wo = (h + pt + pb - kh) // sh + 1, (w + pl + pr - kw) // sw + 1
        if ho < 1 or wo < 1:
            raise ValueError(f"conv kernel {self.kernel} larger than padded input {shape}")
        return (self.params["weight"].shape[0], ho, wo)

    def forward(self, x, training=False):
        (kh, kw), (sh, sw), (pt, pb, pl, pr) = self.kernel, self.stride, self.padding
        xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr))) if any(self.padding) else x
        cols = _windows(xp, kh, kw, sh, sw)
        out = np.tensordot(cols, self.params["weight"], axes=([1, 4, 5], [1, 2, 3]))
        out = out.transpose(0, 3, 1, 2) + self.params["bias"][None, :, None, None]
        self._cache = (cols, xp.shape)
        return np.ascontiguousarray(out)

    def backward(self, dout):
        cols, xp_shape = self._need_cache()
        (kh, kw), (sh, sw), (pt, pb, pl, pr) = self.kernel, self.stride, self.padding
        self.grads["bias"] += dout.sum(axis=(0, 2, 3))
        self.grads["weight"] += np.tensordot(dout, cols, axes=([0, 2, 3], [0, 2, 3]))
        dcols = np.tensordot(dout, self.params["weight"], axes=([1], [0]))
        dxp = _scatter_windows(dcols, xp_shape[2:], sh, sw)
        return dxp[:, :, pt:xp_shape[2] - pb, pl:xp_shape[3] - pr]


class ConvTranspose2d(Layer):
    """Transposed convolution; output size ``(H - 1) * s + k`` per axis."""

    kind = "deconv"
    decayed = ("weight",)

    def __init__(self, c_in, c_out, kernel, stride=(1, 1), rng=None, dtype=np.float32):
        super().__init__()
        self.kernel, self.stride = tuple(kernel), tuple(stride)
        kh, kw = self.kernel
        rng = rng or np.random.default_rng(0)
        fan_in = c_in * kh * kw / (self.stride[0] * self.stride[1])
        self.params["weight"] = _fan_in_uniform(rng, (c_in, c_out, kh, kw), fan_in, dtype)
        self.params["bias"] = np.zeros(c_out, dtype=dtype)
        self.zero_grad()

    def output_shape(self, shape):
        c, h, w = shape
        if c != self.params["weight"].shape[0]:
            raise ValueError(f"deconv expects {self.params['weight'].shape[0]} channels, got {c}")
        (kh, kw), (sh, sw) = self.kernel, self.stride
        return (self.params["weight"].shape[1], (h - 1) * sh + kh, (w - 1) * sw + kw)

    def forward(self, x, training=False):
        (kh, kw), (sh, sw) = self.kernel, self.stride
        h, w = x.shape[2:]
        cols = np.tensordot(x, self.params["weight"], axes=([1], [0]))  # N, H, W, O, kh, kw
        out = _scatter_windows(cols, ((h - 1) * sh + kh, (w - 1) * sw + kw), sh, sw)
        self._cache = x
        return out + self.params["bias"][None, :, None, None]

    def backward(self, dout):
        x = self._need_cache()
        (kh, kw), (sh, sw) = self.kernel, self.stride
        dwin = _windows(dout, kh, kw, sh, sw)  # N, O, H, W, kh, kw
        self.grads["bias"] += dout.sum(axis=(0, 2, 3))
        self.grads["weight"] += np.tensordot(x, dwin, axes=([0, 2, 3], [0, 2, 3]))
        dx = np.tensordot(dwin, self.params["weight"], axes=([1, 4, 5], [1, 2, 3]))
        return np.ascontiguousarray(dx.transpose(0, 3, 1, 2))


class Linear(Layer):
    kind = "fully_connected"
    decayed = ("weight",)

    def __init__(self, n_in, n_out, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.params["weight"] = _fan_in_uniform(rng, (n_in, n_out), n_in, dtype)
        self.params["bias"] = np.zeros(n_out, dtype=dtype)
        self.zero_grad()

    def output_shape(self, shape):
        if shape != (self.params["weight"].shape[0],):
            raise ValueError(f"fully connected layer expects {self.params['weight'].shape[0]} "
                             f"features, got {shape}")
        return (self.params["weight"].shape[1],)

    def forward(self, x, training=False):
        self._cache = x
        return x @ self.params["weight"] + self.params["bias"]

    def backward(self, dout):
        x = self._need_cache()
        self.grads["weight"] += x.T @ dout
        self.grads["bias"] += dout.sum(axis=0)
        return dout @ self.params["weight"].T


class ReLU(Layer):
    kind = "relu"

    def output_shape(self, shape):
        return shape

    def forward(self, x, training=False):
        mask = x > 0
        self._cache = mask
        return x * mask

    def backward(self, dout):
        return dout * self._need_cache()


class BatchNorm(Layer):
    """Batch normalisation over all axes except the channel axis 1.

    Running statistics use the biased batch variance so that a synced
    inference pass reproduces the training-mode output exactly.
    """

    kind = "batch_norm"

    def __init__(self, channels, momentum=0.1, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.params["scale"] = np.ones(channels, dtype=dtype)
        self.params["shift"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_var"] = np.ones(channels, dtype=dtype)
        self.zero_grad()

    def output_shape(self, shape):
        if shape[0] != self.params["scale"].shape[0]:
            raise ValueError(f"batch norm expects {self.params['scale'].shape[0]} channels")
        return shape

    def _bshape(self, x):
        return (1, -1) + (1,) * (x.ndim - 2)

    def forward(self, x, training=False, momentum=None):
        axes = (0,) + tuple(range(2, x.ndim))
        bs = self._bshape(x)
        if training:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = self.momentum if momentum is None else momentum
            rm, rv = self.buffers["running_mean"], self.buffers["running_var"]
            rm[...] = (1 - m) * rm + m * mean
            rv[...] = (1 - m) * rv + m * var
        else:
            mean, var = self.buffers["running_mean"], self.buffers["running_var"]
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean.reshape(bs)) * inv.reshape(bs)
        self._cache = (xhat, inv, training, axes)
        return xhat * self.params["scale"].reshape(bs) + self.params["shift"].reshape(bs)

    def backward(self, dout):
        xhat, inv, training, axes = self._need_cache()
        bs = self._bshape(dout)
        self.grads["scale"] += (dout * xhat).sum(axis=axes)
        self.grads["shift"] += dout.sum(axis=axes)
        dxhat = dout * self.params["scale"].reshape(bs)
        if not training:
            return dxhat * inv.reshape(bs)
        mean_d = dxhat.mean(axis=axes, keepdims=True)
        mean_dx = (dxhat * xhat).mean(axis=axes, keepdims=True)
        return (dxhat - mean_d - xhat * mean_dx) * inv.reshape(bs)


class Reshape(Layer):
    kind = "reshape"

    def __init__(self, shape):
        super().__init__()
        self.shape = tuple(shape)

    def output_shape(self, shape):
        if int(np.prod(shape)) != int(np.prod(self.shape)):
            raise ValueError(f"cannot reshape {shape} to {self.shape}")
        return self.shape

    def forward(self, x, training=False):
        self._cache = x.shape
        return x.reshape((x.shape[0],) + self.shape)

    def backward(self, dout):
        return dout.reshape(self._need_cache())


class CenterCrop(Layer):
    """Crop the two trailing axes to ``(h, w)``, dropping the odd sample at the end."""

    kind = "crop"

    def __init__(self, size):
        super().__init__()
        self.size = tuple(size)

    def _offsets(self, h, w):
        th, tw = self.size
        if th > h or tw > w:
            raise ValueError(f"cannot crop {(h, w)} to {self.size}")
        return (h - th) // 2, (w - tw) // 2

    def output_shape(self, shape):
        self._offsets(*shape[1:])
        return (shape[0],) + self.size

    def forward(self, x, training=False):
        oh, ow = self._offsets(*x.shape[2:])
        self._cache = (x.shape, oh, ow)
        return x[:, :, oh:oh + self.size[0], ow:ow + self.size[1]]

    def backward(self, dout):
        shape, oh, ow = self._need_cache()
        dx = np.zeros(shape, dtype=dout.dtype)
        dx[:, :, oh:oh + self.size[0], ow:ow + self.size[1]] = dout
        return dx
