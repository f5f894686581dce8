"""Redundant STFT with the frame layout used for context encoding.

Frame ``k`` of a transform with origin ``o`` covers samples
``[o + k*a, o + k*a + M)``; there is no centering offset and only frames
fully supported on the analysed span are produced. Coefficients are stored
as the half spectrum (bins ``0..M/2``), with the phase referenced to the
first sample of each frame.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .signal import AudioBuffer, Segment, SegmentSpec

TF_MAGIC = b"GFTF"


def hann(M: int) -> np.ndarray:
    """Half-point symmetric Hann window, ``sin^2(pi (n + 1/2) / M)``.

    Unlike the sample-centred variants it has no zero taps, so every sample
    under a frame is recoverable from that frame alone.
    """
    n = np.arange(M)
    return np.sin(np.pi * (n + 0.5) / M) ** 2


def make_hann_pr(M: int, a: int):
    """Analysis window and its canonical dual for hop ``a``.

    The analysis window is Hann scaled to unit DC gain per half spectrum
    (``sum(g) == 2``), so a bin-centred sinusoid of amplitude ``A`` gives a
    coefficient of modulus ``A``. The frame operator of a painless system
    is diagonal, hence the dual is ``g / sum_k g[n + k a]^2``.
    """
    if a <= 0 or M % a:
        raise ValueError(f"hop {a} must divide window length {M}")
    h = hann(M)
    g = 2.0 * h / h.sum()
    diag = (g ** 2).reshape(M // a, a).sum(axis=0)
    gamma = g / np.tile(diag, M // a)
    return g, gamma


@dataclass(frozen=True)
class STFTParams:
    window_len: int = 512
    hop: int = 128
    sample_rate: int = 16000

    def __post_init__(self):
        if self.window_len % 4 or self.hop * 4 != self.window_len:
            raise ValueError("hop must equal window_len / 4")

    @property
    def n_bins(self) -> int:
        return self.window_len // 2 + 1

    @cached_property
    def windows(self):
        return make_hann_pr(self.window_len, self.hop)

    @property
    def window(self) -> np.ndarray:
        return self.windows[0]

    @property
    def synthesis_window(self) -> np.ndarray:
        return self.windows[1]


@dataclass(frozen=True)
class FrameLayout:
    """Frame bookkeeping for one segment geometry, all counts derived.

    Each context is zero-extended by ``M - a`` samples towards the gap so the
    last (first) context frame still ends (starts) at the gap border.
    """

    params: STFTParams
    spec: SegmentSpec

    def __post_init__(self):
        a, M = self.params.hop, self.params.window_len
        if self.spec.context_len % a or self.spec.gap_len % a:
            raise ValueError(f"context and gap lengths must be multiples of the hop {a}")
        if self.spec.context_len < M:
            raise ValueError("context shorter than one window")

    @property
    def pad(self) -> int:
        return self.params.window_len - self.params.hop

    @property
    def context_frames(self) -> int:
        """Frames per zero-extended context side."""
        a, M = self.params.hop, self.params.window_len
        return (self.spec.context_len + self.pad - M) // a + 1

    @property
    def kept_frames(self) -> int:
        """Context frames whose support avoids the zero extension."""
        a, M = self.params.hop, self.params.window_len
        return (self.spec.context_len - M) // a + 1

    @property
    def discarded_frames(self) -> int:
        return self.context_frames - self.kept_frames

    @property
    def total_frames(self) -> int:
        a, M = self.params.hop, self.params.window_len
        return (self.spec.total_len - M) // a + 1

    @property
    def gap_frames(self) -> int:
        """Frames of the full transform whose support intersects the gap."""
        return self.total_frames - 2 * self.kept_frames

    @property
    def gap_slice(self) -> slice:
        return slice(self.kept_frames, self.kept_frames + self.gap_frames)

    @property
    def interior_slice(self) -> slice:
        """Frames whose whole support lies inside the gap."""
        a, M = self.params.hop, self.params.window_len
        first = -(-self.spec.gap_start // a)
        last = (self.spec.gap_stop - M) // a
        if last < first:
            return slice(first, first)
        return slice(first, last + 1)

    @property
    def interior_frames(self) -> int:
        s = self.interior_slice
        return s.stop - s.start

    def frame_span(self, k: int):
        a, M = self.params.hop, self.params.window_len
        return k * a, k * a + M

    @property
    def gap_support(self):
        """Sample span touched by the gap-overlap frames."""
        s = self.gap_slice
        return self.frame_span(s.start)[0], self.frame_span(s.stop - 1)[1]


def default_layout(params: STFTParams | None = None,
                   spec: SegmentSpec | None = None) -> FrameLayout:
    return FrameLayout(params or STFTParams(), spec or SegmentSpec())


@dataclass(frozen=True)
class TFMatrix:
    """Half-spectrum coefficients, ``n_bins x n_frames``."""

    coeffs: np.ndarray
    params: STFTParams = field(default_factory=STFTParams)
    frame_origin: int = 0

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.complex128)
        if c.ndim != 2 or c.shape[0] != self.params.n_bins:
            raise ValueError(
                f"coefficient grid {c.shape} must have {self.params.n_bins} rows")
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "coeffs", c)

    @property
    def n_frames(self) -> int:
        return self.coeffs.shape[1]

    @property
    def shape(self):
        return self.coeffs.shape

    def frames(self, sl: slice) -> "TFMatrix":
        start = sl.start or 0
        return TFMatrix(self.coeffs[:, sl].copy(), self.params,
                        self.frame_origin + start * self.params.hop)

    def __add__(self, other: "TFMatrix") -> "TFMatrix":
        if other.shape != self.shape or other.frame_origin != self.frame_origin:
            raise ValueError("TF matrices are not aligned")
        return TFMatrix(self.coeffs + other.coeffs, self.params, self.frame_origin)


def _frame_indices(params: STFTParams, n_frames: int, frame_origin: int) -> np.ndarray:
    return (frame_origin + params.hop * np.arange(n_frames)[:, None]
            + np.arange(params.window_len)[None, :])


def stft(buffer: AudioBuffer | np.ndarray, params: STFTParams, n_frames: int | None = None,
         frame_origin: int = 0) -> TFMatrix:
    """Analyse ``n_frames`` frames starting at ``frame_origin``.

    Samples outside the buffer read as zero. Without ``n_frames``, every
    frame fully inside ``[frame_origin, len(buffer))`` is computed.
    """
    x = buffer.samples if isinstance(buffer, AudioBuffer) else np.asarray(buffer, float)
    M, a = params.window_len, params.hop
    if n_frames is None:
        n_frames = (len(x) - frame_origin - M) // a + 1
    if n_frames < 0:
        raise ValueError("negative frame count")
    idx = _frame_indices(params, n_frames, frame_origin)
    valid = (idx >= 0) & (idx < len(x))
    frames = np.zeros(idx.shape)
    frames[valid] = x[idx[valid]]
    coeffs = np.fft.rfft(frames * params.window, axis=1).T
    return TFMatrix(coeffs, params, frame_origin)


def overlap_add(frames: np.ndarray, hop: int) -> np.ndarray:
    """Sum rows of ``frames`` placed ``hop`` samples apart."""
    n, M = frames.shape
    out = np.zeros((n - 1) * hop + M if n else 0)
    for k in range(n):
        out[k * hop:k * hop + M] += frames[k]
    return out


def istft(tf: TFMatrix) -> AudioBuffer:
    """Least-squares synthesis over the span ``[frame_origin, frame_origin + (n-1) a + M)``.

    In steady state this is overlap-add with the canonical dual window; at
    the ends of the span the diagonal frame operator of the frames actually
    present is inverted, so analysis followed by synthesis is the identity on
    the whole span.
    """
    params = tf.params
    g = params.window
    frames = np.fft.irfft(tf.coeffs.T, n=params.window_len, axis=1) * g
    num = overlap_add(frames, params.hop)
    den = overlap_add(np.broadcast_to(g ** 2, frames.shape), params.hop)
    out = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return AudioBuffer(out, params.sample_rate)


def project_consistent(coeffs: np.ndarray, params: STFTParams, frame_origin: int = 0) -> np.ndarray:
    """``stft(istft(.))`` on a grid: the orthogonal projection onto consistent coefficients."""
    tf = TFMatrix(coeffs, params, frame_origin)
    y = istft(tf).samples
    return stft(y, params, tf.n_frames, 0).coeffs


@dataclass(frozen=True)
class ContextTensor:
    """Network input: Re/Im of the before- and after-context transforms."""

    before: TFMatrix
    after: TFMatrix

    @property
    def data(self) -> np.ndarray:
        b, a = self.before.coeffs, self.after.coeffs
        return np.stack([b.real, b.imag, a.real, a.imag])

    @property
    def shape(self):
        return self.data.shape


def prepare_context(seg: Segment, params: STFTParams | None = None) -> ContextTensor:
    """Transform both contexts, each zero-extended by ``M - a`` towards the gap.

    The before-context frames start at its first sample; the after-context
    frames start ``M - a`` samples ahead of it (negative local origin).
    """
    params = params or STFTParams(sample_rate=seg.spec.sample_rate)
    layout = FrameLayout(params, seg.spec)
    n = layout.context_frames
    before = stft(seg.before, params, n, 0)
    after = stft(seg.after, params, n, -layout.pad)
    return ContextTensor(before, after)


def assemble_full(before: TFMatrix, gap: TFMatrix, after: TFMatrix,
                  layout: FrameLayout | None = None) -> TFMatrix:
    """Concatenate kept context frames with predicted gap frames.

    The result has one frame per fully supported frame of the segment, with
    origin 0 in segment coordinates.
    """
    layout = layout or default_layout(before.params)
    nc, kept, ng = layout.context_frames, layout.kept_frames, layout.gap_frames
    if before.n_frames != nc or after.n_frames != nc:
        raise ValueError(f"context grids must have {nc} frames")
    if gap.n_frames != ng:
        raise ValueError(f"gap grid must have {ng} frames, got {gap.n_frames}")
    coeffs = np.concatenate([before.coeffs[:, :kept], gap.coeffs,
                             after.coeffs[:, nc - kept:]], axis=1)
    return TFMatrix(coeffs, before.params, 0)


def gap_frames(full: TFMatrix, layout: FrameLayout | None = None) -> TFMatrix:
    """Frames whose entire support lies inside the gap."""
    layout = layout or default_layout(full.params)
    if full.n_frames != layout.total_frames:
        raise ValueError(f"expected {layout.total_frames} frames, got {full.n_frames}")
    return full.frames(layout.interior_slice)


def full_stft(buffer: AudioBuffer, params: STFTParams, layout: FrameLayout) -> TFMatrix:
    if len(buffer) != layout.spec.total_len:
        raise ValueError("buffer length does not match the layout")
    return stft(buffer, params, layout.total_frames, 0)


def write_tf(path: str | Path, tf: TFMatrix) -> None:
    """16-byte header (magic, n_bins, n_frames, flags) then interleaved LE float64."""
    header = TF_MAGIC + struct.pack("<III", tf.shape[0], tf.shape[1], 0)
    body = np.empty(tf.coeffs.shape + (2,), dtype="<f8")
    body[..., 0] = tf.coeffs.real
    body[..., 1] = tf.coeffs.imag
    Path(path).write_bytes(header + body.tobytes(order="C"))


def read_tf(path: str | Path, params: STFTParams | None = None, frame_origin: int = 0) -> TFMatrix:
    raw = Path(path).read_bytes()
    if raw[:4] != TF_MAGIC:
        raise ValueError("not a TF matrix file")
    n_bins, n_frames, _flags = struct.unpack("<III", raw[4:16])
    body = np.frombuffer(raw[16:], dtype="<f8")
    if body.size != n_bins * n_frames * 2:
        raise ValueError("truncated TF matrix file")
    body = body.reshape(n_bins, n_frames, 2)
    params = params or STFTParams(window_len=2 * (n_bins - 1), hop=(n_bins - 1) // 2)
    return TFMatrix(body[..., 0] + 1j * body[..., 1], params, frame_origin)
