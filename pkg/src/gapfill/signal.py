"""Time-domain signal types, segment partitioning and test tones."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

DEFAULT_RATE = 16000


@dataclass(frozen=True)
class AudioBuffer:
    """Mono audio samples with their sampling rate.

    Samples are nominally in [-1, 1] but are never clipped.
    """

    samples: np.ndarray
    sample_rate: int = DEFAULT_RATE

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError(f"samples must be one-dimensional, got shape {x.shape}")
        if int(self.sample_rate) <= 0:
            raise ValueError("sample_rate must be positive")
        if not np.all(np.isfinite(x)):
            raise ValueError("samples must be finite")
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.shape[0]

    def reversed(self) -> "AudioBuffer":
        return AudioBuffer(self.samples[::-1].copy(), self.sample_rate)

    def scaled(self, factor: float) -> "AudioBuffer":
        return AudioBuffer(self.samples * factor, self.sample_rate)


@dataclass(frozen=True)
class SegmentSpec:
    """Geometry of a segment: ``total_len = gap_len + 2 * context_len``."""

    total_len: int = 5120
    gap_len: int = 1024
    context_len: int = 2048
    sample_rate: int = DEFAULT_RATE

    def __post_init__(self):
        if self.gap_len <= 0 or self.context_len <= 0:
            raise ValueError("gap_len and context_len must be positive")
        if self.total_len != self.gap_len + 2 * self.context_len:
            raise ValueError(
                f"total_len {self.total_len} != gap_len {self.gap_len} "
                f"+ 2 * context_len {self.context_len}"
            )
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    @classmethod
    def from_gap(cls, gap_len: int, total_len: int = 5120,
                 sample_rate: int = DEFAULT_RATE) -> "SegmentSpec":
        if (total_len - gap_len) % 2:
            raise ValueError("total_len - gap_len must be even")
        return cls(total_len, gap_len, (total_len - gap_len) // 2, sample_rate)

    @classmethod
    def from_ms(cls, gap_ms: float, total_ms: float = 320.0,
                sample_rate: int = DEFAULT_RATE) -> "SegmentSpec":
        total = int(round(total_ms * sample_rate / 1000))
        gap = int(round(gap_ms * sample_rate / 1000))
        return cls.from_gap(gap, total, sample_rate)

    @property
    def gap_start(self) -> int:
        return self.context_len

    @property
    def gap_stop(self) -> int:
        return self.context_len + self.gap_len


@dataclass(frozen=True)
class Segment:
    before: AudioBuffer
    gap: AudioBuffer
    after: AudioBuffer
    spec: SegmentSpec

    def __post_init__(self):
        spec = self.spec
        lens = (len(self.before), len(self.gap), len(self.after))
        if lens != (spec.context_len, spec.gap_len, spec.context_len):
            raise ValueError(f"part lengths {lens} do not match {spec}")
        rates = {self.before.sample_rate, self.gap.sample_rate, self.after.sample_rate}
        if rates != {spec.sample_rate}:
            raise ValueError("segment parts must share the segment sample rate")

    def full(self) -> AudioBuffer:
        x = np.concatenate([self.before.samples, self.gap.samples, self.after.samples])
        return AudioBuffer(x, self.spec.sample_rate)

    def reversed(self) -> "Segment":
        return Segment(self.after.reversed(), self.gap.reversed(),
                       self.before.reversed(), self.spec)

    def scaled(self, factor: float) -> "Segment":
        return Segment(self.before.scaled(factor), self.gap.scaled(factor),
                       self.after.scaled(factor), self.spec)


def split_segment(buffer: AudioBuffer, spec: SegmentSpec) -> Segment:
    """Partition a buffer of exactly ``spec.total_len`` samples."""
    if len(buffer) != spec.total_len:
        raise ValueError(f"buffer has {len(buffer)} samples, expected {spec.total_len}")
    if buffer.sample_rate != spec.sample_rate:
        raise ValueError("buffer sample rate does not match spec")
    x = buffer.samples
    lc, lg = spec.context_len, spec.gap_len
    fs = buffer.sample_rate
    return Segment(
        AudioBuffer(x[:lc].copy(), fs),
        AudioBuffer(x[lc:lc + lg].copy(), fs),
        AudioBuffer(x[lc + lg:].copy(), fs),
        spec,
    )


def generate_pure_tone(freq: float, phase: float, amplitude: float,
                       duration: int, fs: int = DEFAULT_RATE) -> AudioBuffer:
    """``amplitude * sin(2 pi freq n / fs + phase)`` for ``n < duration``."""
    if not 0 < freq < fs / 2:
        raise ValueError(f"frequency {freq} Hz outside (0, {fs / 2}) Hz (aliasing)")
    n = np.arange(duration)
    return AudioBuffer(amplitude * np.sin(2 * np.pi * freq * n / fs + phase), fs)


def pure_tone_grid(n_freq: int, n_phase: int, n_amp: int,
                   fmin: float = 20.0, fmax: float = 8000.0,
                   amin: float = 0.1, amax: float = 1.0):
    """Frequency-major Cartesian grid of ``(freq, phase, amplitude)`` triples.

    Frequencies are log-spaced on ``[fmin, fmax]``, phases linear on
    ``[0, pi]``, amplitudes linear on ``[amin, amax]``. Note that the top
    frequency sits at Nyquist for 16 kHz; callers synthesizing tones must
    drop or nudge it.
    """
    if min(n_freq, n_phase, n_amp) < 2:
        raise ValueError("grid counts must be at least 2")
    freqs = np.geomspace(fmin, fmax, n_freq)
    phases = np.linspace(0.0, np.pi, n_phase)
    amps = np.linspace(amin, amax, n_amp)
    return [(float(f), float(p), float(a))
            for f, p, a in itertools.product(freqs, phases, amps)]


def rms(buffer: AudioBuffer | np.ndarray) -> float:
    x = buffer.samples if isinstance(buffer, AudioBuffer) else np.asarray(buffer)
    if x.size == 0:
        raise ValueError("rms of an empty buffer is undefined")
    return float(np.sqrt(np.mean(np.square(x, dtype=np.float64))))


def read_wav(path: str | Path) -> AudioBuffer:
    """Read a PCM16 / float32 WAV file, averaging channels to mono."""
    fs, data = wavfile.read(str(path))
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif np.issubdtype(data.dtype, np.floating):
        x = data.astype(np.float64)
    else:
        raise ValueError(f"unsupported WAV sample type {data.dtype}")
    if x.ndim == 2:
        x = x.mean(axis=1)
    return AudioBuffer(x, int(fs))


def write_wav(path: str | Path, buffer: AudioBuffer, subtype: str = "PCM_16") -> None:
    """Write mono WAV as 16-bit PCM (``"PCM_16"``) or 32-bit float (``"FLOAT"``)."""
    if subtype == "PCM_16":
        data = np.clip(np.round(buffer.samples * 32768.0), -32768, 32767).astype(np.int16)
    elif subtype == "FLOAT":
        data = buffer.samples.astype(np.float32)
    else:
        raise ValueError(f"unknown subtype {subtype!r}")
    wavfile.write(str(path), buffer.sample_rate, data)
