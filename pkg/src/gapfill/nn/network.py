"""Encoder-decoder network configuration and the model object."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .layers import BatchNorm, CenterCrop, Conv2d, ConvTranspose2d, Layer, Linear, ReLU, Reshape

VARIANTS = ("complex", "magnitude")
INPUT_SHAPE = (4, 257, 16)
GAP_SHAPE = (257, 11)
OUTPUT_GAIN = 0.01


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    kernel: tuple = (1, 1)
    stride: tuple = (1, 1)
    channels_in: int = 0
    channels_out: int = 0
    padding: tuple = (0, 0, 0, 0)
    shape: tuple = ()

    def __post_init__(self):
        if self.kind not in ("conv", "deconv", "fully_connected", "relu", "batch_norm",
                             "reshape", "crop"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if min(self.stride) < 1 or min(self.kernel) < 1:
            raise ValueError("strides and kernel sizes must be >= 1")
        for name in ("kernel", "stride", "padding", "shape"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))

    def build(self, rng, dtype) -> Layer:
        if self.kind == "conv":
            return Conv2d(self.channels_in, self.channels_out, self.kernel, self.stride,
                          self.padding, rng=rng, dtype=dtype)
        if self.kind == "deconv":
            return ConvTranspose2d(self.channels_in, self.channels_out, self.kernel,
                                   self.stride, rng=rng, dtype=dtype)
        if self.kind == "fully_connected":
            return Linear(self.channels_in, self.channels_out, rng=rng, dtype=dtype)
        if self.kind == "relu":
            return ReLU()
        if self.kind == "batch_norm":
            return BatchNorm(self.channels_out, dtype=dtype)
        if self.kind == "reshape":
            return Reshape(self.shape)
        return CenterCrop(self.shape)


def conv(c_in, c_out, kernel, stride=(1, 1), padding=(0, 0, 0, 0), activate=True):
    specs = [LayerSpec("conv", kernel, stride, c_in, c_out, padding)]
    if activate:
        specs += [LayerSpec("relu"), LayerSpec("batch_norm", channels_out=c_out)]
    return specs


def deconv(c_in, c_out, kernel, stride=(1, 1), activate=True):
    specs = [LayerSpec("deconv", kernel, stride, c_in, c_out)]
    if activate:
        specs += [LayerSpec("relu"), LayerSpec("batch_norm", channels_out=c_out)]
    return specs


@dataclass(frozen=True)
class NetworkConfig:
    variant: str
    encoder_layers: tuple
    decoder_layers: tuple
    input_shape: tuple = INPUT_SHAPE
    output_shape: tuple = field(default=())

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if not self.output_shape:
            object.__setattr__(self, "output_shape", (self.out_channels,) + GAP_SHAPE)
        self.check_shapes()

    @property
    def out_channels(self) -> int:
        return 2 if self.variant == "complex" else 1

    def shapes(self):
        """Per-sample shape after every layer, encoder then decoder."""
        layers = [s.build(np.random.default_rng(0), np.float32) for s in self.all_layers()]
        shape, out = tuple(self.input_shape), []
        for spec, layer in zip(self.all_layers(), layers):
            shape = layer.output_shape(shape)
            out.append((spec.kind, shape))
        return out

    def all_layers(self):
        return tuple(self.encoder_layers) + tuple(self.decoder_layers)

    @property
    def code_size(self) -> int:
        shape = self.shapes()[len(self.encoder_layers) - 1][1]
        return int(np.prod(shape))

    def check_shapes(self):
        shapes = self.shapes()
        enc_out = shapes[len(self.encoder_layers) - 1][1]
        if len(enc_out) != 1:
            raise ValueError(f"encoder must end flattened, got {enc_out}")
        if shapes[-1][1] != tuple(self.output_shape):
            raise ValueError(f"decoder produces {shapes[-1][1]}, expected {self.output_shape}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_layers"] = [asdict(s) for s in self.encoder_layers]
        d["decoder_layers"] = [asdict(s) for s in self.decoder_layers]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        return cls(
            variant=d["variant"],
            encoder_layers=tuple(LayerSpec(**s) for s in d["encoder_layers"]),
            decoder_layers=tuple(LayerSpec(**s) for s in d["decoder_layers"]),
            input_shape=tuple(d["input_shape"]),
            output_shape=tuple(d["output_shape"]),
        )


def build_config(variant: str, enc=(32, 64, 128, 256, 160, 128),
                 dec=(128, 64, 32, 8), fc: int | None = None) -> NetworkConfig:
    """Six stride-2-heavy convolutions down to ``enc[-1] x 4 x 4``, then a
    fully connected layer and five transposed convolutions up to ``C x 257 x 11``.

    Reshapes after the fully connected layer and after the third and fourth
    transposed convolutions fold channel pairs into the frequency axis.
    """
    c = enc
    code = c[5] * 16
    fc = fc or code
    if fc % 16:
        raise ValueError("fully connected width must be divisible by 16")
    if dec[2] % 2 or dec[3] % 2:
        raise ValueError("channels before a folding reshape must be even")
    out_c = 2 if variant == "complex" else 1
    d0 = fc // 16
    encoder = (
        conv(4, c[0], (3, 3), (2, 1), (0, 0, 1, 1))       # 128 x 16
        + conv(c[0], c[1], (3, 3), (2, 1), (0, 0, 1, 1))  # 63 x 16
        + conv(c[1], c[2], (3, 3), (2, 2), (0, 0, 1, 1))  # 31 x 8
        + conv(c[2], c[3], (3, 3), (2, 1), (0, 0, 1, 1))  # 15 x 8
        + conv(c[3], c[4], (3, 3), (2, 2), (0, 0, 1, 1))  # 7 x 4
        + conv(c[4], c[5], (4, 1))                        # 4 x 4
        + [LayerSpec("reshape", shape=(code,))]
    )
    decoder = (
        [LayerSpec("fully_connected", channels_in=code, channels_out=fc),
         LayerSpec("relu"), LayerSpec("batch_norm", channels_out=fc),
         LayerSpec("reshape", shape=(d0, 4, 4))]
        + deconv(d0, dec[0], (4, 3))                      # 7 x 6
        + deconv(dec[0], dec[1], (3, 3), (2, 1))          # 15 x 8
        + deconv(dec[1], dec[2], (4, 4), (2, 1))          # 32 x 11
        + [LayerSpec("reshape", shape=(dec[2] // 2, 64, 11))]
        + deconv(dec[2] // 2, dec[3], (3, 1), (2, 1))     # 129 x 11
        + [LayerSpec("reshape", shape=(dec[3] // 2, 258, 11))]
        + deconv(dec[3] // 2, out_c, (3, 1), activate=False)  # 260 x 11
        + [LayerSpec("crop", shape=GAP_SHAPE)]
    )
    return NetworkConfig(variant, tuple(encoder), tuple(decoder))


def canonical_config(variant: str) -> NetworkConfig:
    """Full-size network with a 2048-dimensional code."""
    return build_config(variant)


def toy_config(variant: str) -> NetworkConfig:
    """Same geometry with narrow layers, for desk-scale experiments."""
    return build_config(variant, enc=(8, 16, 16, 32, 32, 16), dec=(32, 32, 32, 8), fc=512)


class NetworkModel:
    """Weights, batch-norm statistics and the training step counter."""

    def __init__(self, config: NetworkConfig, seed: int = 0, dtype=np.float32,
                 output_gain: float = OUTPUT_GAIN):
        self.config = config
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.layers = [spec.build(rng, self.dtype) for spec in config.all_layers()]
        # start near a zero prediction; targets are far smaller than unit-variance features
        last = [layer for layer in self.layers if layer.decayed][-1]
        last.params["weight"] *= self.dtype.type(output_gain)
        self.n_encoder = len(config.encoder_layers)
        self.step = 0
        self._forward_done = False

    def named_params(self):
        for i, layer in enumerate(self.layers):
            for name, p in layer.params.items():
                yield f"{i}.{layer.kind}.{name}", layer, name, p

    def named_buffers(self):
        for i, layer in enumerate(self.layers):
            for name, b in layer.buffers.items():
                yield f"{i}.{layer.kind}.{name}", b

    def decayed_weights(self):
        """Convolution, transposed-convolution and fully connected kernels."""
        for layer in self.layers:
            for name in layer.decayed:
                yield layer.params[name]

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        x = np.asarray(x)
        if x.ndim != 4 or x.shape[1:] != tuple(self.config.input_shape):
            raise ValueError(f"input must be (batch,) + {self.config.input_shape}, got {x.shape}")
        h = x.astype(self.dtype, copy=False)
        for layer in self.layers:
            h = layer.forward(h, training)
        self._forward_done = True
        return h

    __call__ = forward

    def encode(self, x: np.ndarray) -> np.ndarray:
        h = np.asarray(x, dtype=self.dtype)
        for layer in self.layers[:self.n_encoder]:
            h = layer.forward(h, False)
        return h

    def backward(self, dout: np.ndarray, weight_decay: float = 0.0) -> dict:
        """Back-propagate ``dL/d(output)``; returns gradients keyed like :meth:`named_params`.

        ``weight_decay`` adds ``lambda * w`` for every decayed kernel, the
        derivative of ``lambda / 2 * sum(w ** 2)``.
        """
        if not self._forward_done:
            raise RuntimeError("backward called without a recorded forward pass")
        self.zero_grad()
        g = np.asarray(dout, dtype=self.dtype)
        for layer in reversed(self.layers):
            g = layer.backward(g)
        if weight_decay:
            for layer in self.layers:
                for name in layer.decayed:
                    layer.grads[name] += weight_decay * layer.params[name]
        return {key: layer.grads[name] for key, layer, name, _ in self.named_params()}

    def sync_batch_norm(self, x: np.ndarray):
        """Set running statistics to the statistics of batch ``x``."""
        h = np.asarray(x, dtype=self.dtype)
        for layer in self.layers:
            if isinstance(layer, BatchNorm):
                h = layer.forward(h, training=True, momentum=1.0)
            else:
                h = layer.forward(h, training=False)

    def n_params(self) -> int:
        return sum(p.size for *_, p in self.named_params())
