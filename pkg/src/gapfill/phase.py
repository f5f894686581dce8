"""Phase retrieval from STFT magnitudes: PGHI start, fast Griffin-Lim refinement."""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .tf import STFTParams, TFMatrix, project_consistent

# Time-frequency ratio of the Gaussian best matching a Hann window, in units of M^2.
HANN_TFR = 0.25645


@dataclass(frozen=True)
class MagnitudeGrid:
    mags: np.ndarray
    params: STFTParams = STFTParams()
    frame_origin: int = 0

    def __post_init__(self):
        m = np.asarray(self.mags, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != self.params.n_bins:
            raise ValueError(f"magnitude grid {m.shape} must have {self.params.n_bins} rows")
        if not np.all(np.isfinite(m)) or np.any(m < 0):
            raise ValueError("magnitudes must be finite and nonnegative")
        object.__setattr__(self, "mags", m)

    @classmethod
    def of(cls, tf: TFMatrix) -> "MagnitudeGrid":
        return cls(np.abs(tf.coeffs), tf.params, tf.frame_origin)

    @property
    def shape(self):
        return self.mags.shape


@dataclass(frozen=True)
class RetrievalConfig:
    fgl_iterations: int = 100
    fgl_momentum: float = 0.99
    pghi_rel_tolerance: float = 1e-7
    pghi_tfr: float = HANN_TFR
    seed: int = 0
    clamp_context: bool = True

    def __post_init__(self):
        if self.fgl_iterations < 0:
            raise ValueError("fgl_iterations must be >= 0")
        if not 0 <= self.fgl_momentum < 1:
            raise ValueError("fgl_momentum must lie in [0, 1)")
        if not 0 < self.pghi_rel_tolerance < 1:
            raise ValueError("pghi_rel_tolerance must lie in (0, 1)")
        if self.pghi_tfr <= 0:
            raise ValueError("pghi_tfr must be positive")


def phase_gradients(mag: MagnitudeGrid, tfr: float = HANN_TFR):
    """Phase increments per frame step and per bin step estimated from log-magnitude.

    Uses the Gaussian-window relations between the phase gradient and the
    log-magnitude gradient, with ``lam = tfr * M**2``. The frequency-direction
    increment includes the offset from referencing phase to the frame start
    rather than the window centre.
    """
    M, a = mag.params.window_len, mag.params.hop
    lam = tfr * M ** 2
    logs = np.log(mag.mags + np.finfo(float).tiny)
    n_bins, n_frames = mag.shape
    ds_dm = np.gradient(logs, axis=0) if n_bins > 1 else np.zeros_like(logs)
    ds_dk = np.gradient(logs, axis=1) if n_frames > 1 else np.zeros_like(logs)
    m = np.arange(n_bins)[:, None]
    t_step = a * M / lam * ds_dm + 2 * np.pi * a * m / M
    centre = (M - 1) / 2
    f_step = -lam / (a * M) * ds_dk - 2 * np.pi * centre / M
    return t_step, f_step


def pghi(mag: MagnitudeGrid, config: RetrievalConfig = RetrievalConfig(),
         known_phase: np.ndarray | None = None,
         known_mask: np.ndarray | None = None) -> np.ndarray:
    """Phase gradient heap integration.

    Points are integrated in order of decreasing magnitude starting from the
    global maximum (or from all ``known_mask`` points, whose phase is taken
    from ``known_phase``). Points below ``pghi_rel_tolerance * max`` get a
    uniformly random phase.
    """
    s = mag.mags
    n_bins, n_frames = s.shape
    phase = np.zeros(s.shape)
    peak = s.max() if s.size else 0.0
    if peak <= 0:
        return phase
    rng = np.random.default_rng(config.seed)
    t_step, f_step = phase_gradients(mag, config.pghi_tfr)

    big = s > config.pghi_rel_tolerance * peak
    phase[~big] = rng.uniform(-np.pi, np.pi, size=int((~big).sum()))
    done = ~big
    heap: list = []
    if known_mask is not None:
        known_mask = np.asarray(known_mask, bool)
        phase[known_mask] = np.asarray(known_phase)[known_mask]
        done |= known_mask
        for m, k in zip(*np.nonzero(known_mask & big)):
            heapq.heappush(heap, (-s[m, k], int(m), int(k)))

    remaining = int((~done).sum())
    order = None
    while remaining:
        if not heap:
            if order is None:
                order = np.argsort(-s, axis=None, kind="stable")
                pos = 0
            while done.flat[order[pos]]:
                pos += 1
            m, k = divmod(int(order[pos]), n_frames)
            phase[m, k] = 0.0
            done[m, k] = True
            remaining -= 1
            heapq.heappush(heap, (-s[m, k], m, k))
        _, m, k = heapq.heappop(heap)
        for dm, dk in ((0, 1), (0, -1), (1, 0), (-1, 0)):
            mm, kk = m + dm, k + dk
            if not (0 <= mm < n_bins and 0 <= kk < n_frames) or done[mm, kk]:
                continue
            if dk:
                phase[mm, kk] = phase[m, k] + dk * 0.5 * (t_step[m, k] + t_step[mm, kk])
            else:
                phase[mm, kk] = phase[m, k] + dm * 0.5 * (f_step[m, k] + f_step[mm, kk])
            done[mm, kk] = True
            remaining -= 1
            heapq.heappush(heap, (-s[mm, kk], mm, kk))
    return phase


def _project_magnitude(t, mag, known, known_mask):
    out = mag * np.exp(1j * np.angle(t))
    if known_mask is not None:
        out[known_mask] = known[known_mask]
    return out


def fast_griffin_lim(mag: MagnitudeGrid, init_phase: np.ndarray,
                     config: RetrievalConfig = RetrievalConfig(),
                     known: np.ndarray | None = None,
                     known_mask: np.ndarray | None = None,
                     callback=None) -> TFMatrix:
    """Accelerated alternating projections between magnitude and consistency sets.

    ``c_n = P_C(P_A(t_{n-1}))``, ``t_n = c_n + alpha (c_n - c_{n-1})``; the
    returned grid is ``P_A(t_N)``. Entries under ``known_mask`` are replaced
    by ``known`` in every magnitude projection. ``fgl_momentum = 0`` gives
    plain Griffin-Lim.
    """
    if init_phase.shape != mag.shape:
        raise ValueError("phase and magnitude shapes differ")
    params, origin = mag.params, mag.frame_origin
    alpha = config.fgl_momentum
    t = mag.mags * np.exp(1j * init_phase)
    c_prev = None
    for it in range(config.fgl_iterations):
        c = project_consistent(_project_magnitude(t, mag.mags, known, known_mask),
                               params, origin)
        t = c if c_prev is None else c + alpha * (c - c_prev)
        c_prev = c
        if callback is not None:
            callback(it, c)
    return TFMatrix(_project_magnitude(t, mag.mags, known, known_mask), params, origin)


def griffin_lim(mag: MagnitudeGrid, init_phase: np.ndarray | None = None,
                iterations: int = 100) -> TFMatrix:
    if init_phase is None:
        init_phase = np.zeros(mag.shape)
    cfg = RetrievalConfig(fgl_iterations=iterations, fgl_momentum=0.0)
    return fast_griffin_lim(mag, init_phase, cfg)


def reconstruct_from_magnitude(mag: MagnitudeGrid, config: RetrievalConfig = RetrievalConfig(),
                               known: np.ndarray | None = None,
                               known_mask: np.ndarray | None = None) -> TFMatrix:
    """PGHI initial phase refined by fast Griffin-Lim.

    With ``known``/``known_mask`` given, those coefficients anchor the heap
    integration and stay fixed during the iterations.
    """
    if known_mask is not None:
        known_mask = np.asarray(known_mask, bool)
        known = np.asarray(known, complex)
        if known.shape != mag.shape or known_mask.shape != mag.shape:
            raise ValueError("known coefficients must match the magnitude grid")
    phase = pghi(mag, config, None if known is None else np.angle(known), known_mask)
    return fast_griffin_lim(mag, phase, config, known, known_mask)


def spectral_convergence(mag: MagnitudeGrid, coeffs: np.ndarray) -> float:
    """``|| |A| - |stft(istft(c))| || / || |A| ||`` on the grid of ``mag``."""
    rebuilt = np.abs(project_consistent(coeffs, mag.params, mag.frame_origin))
    return float(np.linalg.norm(mag.mags - rebuilt) / np.linalg.norm(mag.mags))
