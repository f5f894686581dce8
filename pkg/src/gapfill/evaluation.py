"""Restoration metrics, dataset evaluation, gap extension and the pure-tone probe."""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .lpc import lpc_restore
from .phase import RetrievalConfig
from .signal import AudioBuffer, Segment, SegmentSpec, generate_pure_tone, split_segment
from .tf import FrameLayout, STFTParams, TFMatrix, full_stft, gap_frames

SNR_CAP_DB = 300.0
REPORT_SCHEMA = "gapfill.eval-report"
REPORT_VERSION = 1
SMOOTHING_POINTS = 25


class UndefinedSNR(ValueError):
    """Reference signal has zero energy."""


def _as_array(x) -> np.ndarray:
    if isinstance(x, AudioBuffer):
        return x.samples
    if isinstance(x, TFMatrix):
        return x.coeffs
    return np.asarray(x)


def snr(x, x_hat) -> float:
    """``10 log10(||x||^2 / ||x - x_hat||^2)`` in dB, capped at :data:`SNR_CAP_DB`."""
    x, x_hat = _as_array(x), _as_array(x_hat)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {x_hat.shape}")
    ref = float(np.sum(np.abs(x) ** 2))
    if ref == 0.0:
        raise UndefinedSNR("reference has zero energy")
    err = float(np.sum(np.abs(x - x_hat) ** 2))
    if err == 0.0:
        return SNR_CAP_DB
    return float(min(10.0 * np.log10(ref / err), SNR_CAP_DB))


def _check_restored(seg: Segment, restored: AudioBuffer):
    if len(restored) != seg.spec.total_len:
        raise ValueError(f"restored signal has {len(restored)} samples, "
                         f"expected {seg.spec.total_len}")


def snr_td(seg: Segment, restored: AudioBuffer) -> float:
    """SNR over the gap samples."""
    _check_restored(seg, restored)
    return snr(seg.gap.samples, restored.samples[seg.spec.gap_start:seg.spec.gap_stop])


def snr_ms(seg: Segment, restored: AudioBuffer, params: STFTParams | None = None) -> float:
    """SNR between magnitude spectrograms of the frames lying wholly inside the gap."""
    _check_restored(seg, restored)
    params = params or STFTParams(sample_rate=seg.spec.sample_rate)
    layout = FrameLayout(params, seg.spec)
    ref = np.abs(gap_frames(full_stft(seg.full(), params, layout), layout).coeffs)
    est = np.abs(gap_frames(full_stft(restored, params, layout), layout).coeffs)
    return snr(ref, est)


# gap extension ---------------------------------------------------------------

class GapExtensionMode(str, Enum):
    FORWARD = "forward"
    BACKWARD = "backward"
    CENTERED = "centered"


SHORT_GAP_SPEC = SegmentSpec(5120, 768, 2176)
LONG_GAP_SPEC = SegmentSpec()


@dataclass(frozen=True)
class ExtendedGap:
    """A short-gap segment re-partitioned around a longer gap.

    ``samples`` are the original samples, untouched. The long gap covers
    ``[gap_start, gap_start + gap_len)``; the original gap is ``eval_span``.
    """

    samples: AudioBuffer
    gap_start: int
    gap_len: int
    eval_span: tuple
    target: SegmentSpec

    @property
    def shift(self) -> int:
        return self.gap_start - self.target.gap_start

    def network_segment(self) -> Segment:
        """The ``target``-geometry window centred on the long gap.

        Samples that fall outside the original window are zero.
        """
        x = self.samples.samples
        out = np.zeros(self.target.total_len)
        lo = self.shift
        src = slice(max(lo, 0), min(lo + self.target.total_len, len(x)))
        out[src.start - lo:src.stop - lo] = x[src]
        lo_e, hi_e = self.eval_span
        # the original gap must be unknown to the restorer
        out[lo_e - lo:hi_e - lo] = 0.0
        return split_segment(AudioBuffer(out, self.samples.sample_rate), self.target)

    def merge(self, restored: AudioBuffer) -> AudioBuffer:
        """Map a restored ``network_segment`` back: keep the original samples
        everywhere except the original gap."""
        out = self.samples.samples.copy()
        lo_e, hi_e = self.eval_span
        out[lo_e:hi_e] = restored.samples[lo_e - self.shift:hi_e - self.shift]
        return AudioBuffer(out, self.samples.sample_rate)


def extend_gap(seg: Segment, mode: GapExtensionMode | str,
               target: SegmentSpec = LONG_GAP_SPEC) -> ExtendedGap:
    """Grow the gap of ``seg`` to ``target.gap_len`` after, before or around it."""
    mode = GapExtensionMode(mode)
    spec = seg.spec
    if spec.total_len != target.total_len or spec.gap_len >= target.gap_len:
        raise ValueError(f"cannot extend {spec} to {target}")
    extra = target.gap_len - spec.gap_len
    if mode is GapExtensionMode.CENTERED and extra % 2:
        raise ValueError("centered extension needs an even length difference")
    before = {"forward": 0, "backward": extra, "centered": extra // 2}[mode.value]
    start = spec.gap_start - before
    return ExtendedGap(seg.full(), start, target.gap_len, (spec.gap_start, spec.gap_stop), target)


# restoration methods -----------------------------------------------------------

class Method:
    """A restorer; ``native_spec`` is set when it only handles one geometry."""

    name = "method"
    native_spec: SegmentSpec | None = None

    def restore_many(self, segments) -> list:
        return [self.restore(s) for s in segments]

    def restore(self, seg: Segment) -> AudioBuffer:
        raise NotImplementedError


class IdentityMethod(Method):
    name = "identity"

    def restore(self, seg):
        return seg.full()


class ZeroMethod(Method):
    name = "zero"

    def restore(self, seg):
        x = seg.full().samples.copy()
        x[seg.spec.gap_start:seg.spec.gap_stop] = 0.0
        return AudioBuffer(x, seg.spec.sample_rate)


class LPCMethod(Method):
    name = "lpc"

    def __init__(self, order: int = 1000):
        self.order = order

    def restore(self, seg):
        return lpc_restore(seg, min(self.order, seg.spec.context_len - 1))


class NetworkMethod(Method):
    def __init__(self, model, retrieval: RetrievalConfig = RetrievalConfig(),
                 params: STFTParams | None = None, native_spec: SegmentSpec = LONG_GAP_SPEC):
        self.model, self.retrieval, self.params = model, retrieval, params
        self.name = model.config.variant
        self.native_spec = native_spec

    def restore_many(self, segments):
        from .nn.inpaint import inpaint_many
        return inpaint_many(self.model, segments, self.retrieval, self.params)

    def restore(self, seg):
        return self.restore_many([seg])[0]


# reports ----------------------------------------------------------------------

@dataclass
class EvalRecord:
    segment_id: int
    method: str
    snr_td_db: float
    snr_ms_db: float

    @property
    def capped(self) -> bool:
        return self.snr_td_db >= SNR_CAP_DB or self.snr_ms_db >= SNR_CAP_DB


def _stats(values) -> dict:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return {"n": 0, "mean": None, "std": None}
    return {"n": int(v.size), "mean": float(v.mean()), "std": float(v.std())}


def _metric_stats(values) -> dict:
    v = np.asarray(values, dtype=np.float64)
    out = _stats(v)
    out["n_capped"] = int(np.sum(v >= SNR_CAP_DB))
    out["uncapped"] = _stats(v[v < SNR_CAP_DB])
    return out


@dataclass
class EvalReport:
    records: list = field(default_factory=list)
    excluded: dict = field(default_factory=dict)  # method tag -> count

    def methods(self) -> list:
        return sorted({r.method for r in self.records} | set(self.excluded))

    def aggregates(self) -> dict:
        out = {}
        for m in self.methods():
            rows = [r for r in self.records if r.method == m]
            out[m] = {"snr_td_db": _metric_stats([r.snr_td_db for r in rows]),
                      "snr_ms_db": _metric_stats([r.snr_ms_db for r in rows]),
                      "excluded": self.excluded.get(m, 0)}
        return out

    def extension_aggregates(self) -> dict:
        """For ``name/mode`` tags: records pooled over modes, and per-segment
        means over modes."""
        pooled, averaged = {}, {}
        bases = sorted({r.method.split("/")[0] for r in self.records if "/" in r.method})
        for base in bases:
            rows = [r for r in self.records if r.method.startswith(base + "/")]
            pooled[base] = {k: _metric_stats([getattr(r, k) for r in rows])
                            for k in ("snr_td_db", "snr_ms_db")}
            per_seg = {}
            for r in rows:
                per_seg.setdefault(r.segment_id, []).append((r.snr_td_db, r.snr_ms_db))
            means = np.array([np.mean(v, axis=0) for v in per_seg.values()])
            averaged[base] = {"snr_td_db": _metric_stats(means[:, 0]),
                              "snr_ms_db": _metric_stats(means[:, 1])}
        return {"pooled": pooled, "mode_averaged": averaged}

    def to_dict(self) -> dict:
        return {"schema": REPORT_SCHEMA, "version": REPORT_VERSION, "snr_cap_db": SNR_CAP_DB,
                "methods": self.aggregates(), "extension": self.extension_aggregates()}

    def write(self, csv_path: str | Path, json_path: str | Path):
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["segment_id", "method", "snr_td_db", "snr_ms_db", "capped_flag"])
            for r in self.records:
                w.writerow([r.segment_id, r.method, repr(r.snr_td_db), repr(r.snr_ms_db),
                            int(r.capped)])
        Path(json_path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def read_csv(cls, path: str | Path) -> "EvalReport":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls([EvalRecord(int(r["segment_id"]), r["method"], float(r["snr_td_db"]),
                               float(r["snr_ms_db"])) for r in rows])


def _restore_chunk(args):
    method, segments = args
    return method.restore_many(segments)


def _restore_all(method: Method, segments: list, jobs: int) -> list:
    if jobs <= 1 or len(segments) < 2:
        return method.restore_many(segments)
    chunks = [segments[i::jobs] for i in range(jobs)]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        parts = list(pool.map(_restore_chunk, [(method, c) for c in chunks]))
    out = [None] * len(segments)
    for i, part in enumerate(parts):
        out[i::jobs] = part
    return out


def evaluate_dataset(segments, methods, extension=None, params: STFTParams | None = None,
                     jobs: int = 1) -> EvalReport:
    """Score every method on every ``(segment_id, Segment)`` pair.

    Methods bound to a longer native gap (networks on short-gap segments)
    are run once per extension mode in ``extension`` (default: all three)
    and tagged ``name/mode``; metrics always cover the original gap.
    Records whose reference is silent are excluded and counted.
    """
    segments = list(segments)
    if not segments:
        raise ValueError("no segments to evaluate")
    report = EvalReport()
    if extension is None:
        modes = list(GapExtensionMode)
    elif isinstance(extension, (str, GapExtensionMode)):
        modes = [GapExtensionMode(extension)]
    else:
        modes = [GapExtensionMode(m) for m in extension]

    for method in methods:
        segs = [s for _, s in segments]
        runs = []
        if method.native_spec is not None and segs[0].spec != method.native_spec:
            for mode in modes:
                ext = [extend_gap(s, mode, method.native_spec) for s in segs]
                restored = _restore_all(method, [e.network_segment() for e in ext], jobs)
                runs.append((f"{method.name}/{mode.value}",
                             [e.merge(r) for e, r in zip(ext, restored)]))
        else:
            runs.append((method.name, _restore_all(method, segs, jobs)))
        for tag, restored in runs:
            for (sid, seg), rec in zip(segments, restored):
                try:
                    report.records.append(EvalRecord(int(sid), tag, snr_td(seg, rec),
                                                     snr_ms(seg, rec, params)))
                except UndefinedSNR:
                    report.excluded[tag] = report.excluded.get(tag, 0) + 1
    return report


# pure-tone probe ----------------------------------------------------------------

def moving_average(values, points: int = SMOOTHING_POINTS) -> np.ndarray:
    """Centred moving average whose window shrinks symmetrically at the edges."""
    v = np.asarray(values, dtype=np.float64)
    half = points // 2
    out = np.empty_like(v)
    n = len(v)
    for i in range(n):
        h = min(half, i, n - 1 - i)
        out[i] = v[i - h:i + h + 1].mean()
    return out


@dataclass
class ProbeCurve:
    freqs: np.ndarray
    raw: np.ndarray
    smoothed: np.ndarray

    def write_csv(self, path: str | Path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["freq_hz", "snr_ms_db", "snr_ms_smoothed_db"])
            for row in zip(self.freqs, self.raw, self.smoothed):
                w.writerow([repr(float(v)) for v in row])


def tone_segment(freq: float, phase: float, amplitude: float,
                 spec: SegmentSpec = LONG_GAP_SPEC) -> Segment:
    return split_segment(generate_pure_tone(freq, phase, amplitude, spec.total_len,
                                            spec.sample_rate), spec)


def probe_tones(method: Method, grid, params: STFTParams | None = None,
                spec: SegmentSpec = LONG_GAP_SPEC, points: int = SMOOTHING_POINTS) -> ProbeCurve:
    """Mean SNR-MS per frequency over a ``(freq, phase, amplitude)`` grid.

    Tones at or above Nyquist are skipped.
    """
    tones = [t for t in grid if 0 < t[0] < spec.sample_rate / 2]
    segs = [tone_segment(f, p, a, spec) for f, p, a in tones]
    restored = method.restore_many(segs)
    per_freq = {}
    for (f, _, _), seg, rec in zip(tones, segs, restored):
        per_freq.setdefault(f, []).append(snr_ms(seg, rec, params))
    freqs = np.array(sorted(per_freq))
    raw = np.array([np.mean(per_freq[f]) for f in freqs])
    return ProbeCurve(freqs, raw, moving_average(raw, points))
