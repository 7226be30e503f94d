"""Fundamental-frequency tracking and construction of the candidate cycle set.

The tracker is a plain YIN detector (cumulative-mean-normalized difference
function, absolute threshold, parabolic refinement).  It is meant for clean
excitation only; synthetic experiments can bypass it entirely with
:meth:`PitchTrack.from_constant`.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .cyclic import CyclicFreqGrid
from .errors import EmptyTrackError
from .signals import Signal, StftParams, frame_matrix, write_csv

logger = logging.getLogger(__name__)

__all__ = ["PitchTrack", "CycleSet", "estimate_f0", "build_cycle_set", "yin_defaults"]

DEFAULT_THRESHOLD = 0.15
_TWO_PI = 2.0 * np.pi


@dataclass(frozen=True, eq=False)
class PitchTrack:
    """Per-frame f0 in Hz (NaN where unvoiced) with summary statistics."""

    f0_hz: np.ndarray
    times_s: np.ndarray
    sample_rate_hz: float

    def __post_init__(self):
        f0 = np.asarray(self.f0_hz, dtype=float)
        times = np.asarray(self.times_s, dtype=float)
        if f0.shape != times.shape:
            raise ValueError("f0_hz and times_s must have the same shape")
        object.__setattr__(self, "f0_hz", f0)
        object.__setattr__(self, "times_s", times)

    @classmethod
    def from_constant(cls, f0_hz: float, sample_rate_hz: float) -> "PitchTrack":
        """Ground-truth track with a single voiced frame (sigma0 = 0)."""
        return cls(np.array([f0_hz]), np.array([0.0]), sample_rate_hz)

    @property
    def voiced(self) -> np.ndarray:
        return np.isfinite(self.f0_hz)

    @property
    def omega0(self) -> np.ndarray:
        """Voiced-frame estimates in rad/sample."""
        return _TWO_PI * self.f0_hz[self.voiced] / self.sample_rate_hz

    @property
    def mu0(self) -> float:
        w = self.omega0
        if w.size == 0:
            raise EmptyTrackError("pitch track has no voiced frames")
        return float(np.mean(w))

    @property
    def sigma0(self) -> float:
        w = self.omega0
        if w.size == 0:
            raise EmptyTrackError("pitch track has no voiced frames")
        return float(np.std(w))

    @property
    def mean_f0_hz(self) -> float:
        return self.mu0 * self.sample_rate_hz / _TWO_PI

    def to_csv(self, path) -> None:
        rows = ((t, f, int(v)) for t, f, v in zip(self.times_s, self.f0_hz, self.voiced))
        write_csv(path, ("time_s", "f0_hz", "voiced_flag"), rows)


def yin_defaults(sample_rate_hz: float, f_min: float) -> StftParams:
    """Frame of four longest periods, hop of a quarter frame."""
    period = int(math.ceil(sample_rate_hz / f_min))
    frame = 4 * period
    return StftParams(frame, max(1, frame // 4), "rectangular")


def _cmndf(frames: np.ndarray, width: int, max_lag: int) -> np.ndarray:
    """Cumulative-mean-normalized difference, shape (F, max_lag + 1)."""
    nfft = 1 << int(math.ceil(math.log2(frames.shape[1] + width)))
    spec_full = np.fft.rfft(frames, nfft, axis=1)
    spec_head = np.fft.rfft(frames[:, :width], nfft, axis=1)
    # r[tau] = sum_{j<W} x[j] x[j+tau]
    corr = np.fft.irfft(np.conj(spec_head) * spec_full, nfft, axis=1)[:, :max_lag + 1]
    sq = np.concatenate([np.zeros((frames.shape[0], 1)), np.cumsum(frames ** 2, axis=1)], axis=1)
    lags = np.arange(max_lag + 1)
    energy0 = sq[:, width][:, None]
    energy_tau = sq[:, lags + width] - sq[:, lags]
    diff = np.maximum(energy0 + energy_tau - 2.0 * corr, 0.0)
    out = np.ones_like(diff)
    csum = np.cumsum(diff[:, 1:], axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        out[:, 1:] = np.where(csum > 0, diff[:, 1:] * lags[1:] / csum, 1.0)
    return out


def estimate_f0(x: Signal, band=(40.0, 500.0), params: StftParams | None = None,
                threshold: float = DEFAULT_THRESHOLD) -> PitchTrack:
    """YIN pitch track of a clean signal.

    Parameters
    ----------
    x : Signal
        Input; only the real part is analysed.
    band : (float, float)
        Search range ``[f_min, f_max]`` in Hz.
    params : StftParams, optional
        Frame length and hop.  Defaults to :func:`yin_defaults`; the frame
        must be longer than the longest searched period.
    threshold : float
        Absolute threshold on the normalized difference; frames whose
        best dip stays above it are unvoiced.

    Returns
    -------
    PitchTrack
    """
    f_min, f_max = map(float, band)
    fs = x.sample_rate_hz
    if not 0 < f_min < f_max:
        raise ValueError(f"empty pitch band [{f_min}, {f_max}]")
    if f_max > fs / 2:
        raise ValueError(f"pitch band upper edge {f_max} Hz exceeds Nyquist {fs / 2} Hz")
    params = params or yin_defaults(fs, f_min)
    max_lag = int(math.ceil(fs / f_min))
    min_lag = max(2, int(math.floor(fs / f_max)))
    width = params.dft_len - max_lag - 1
    if width < max_lag:
        raise ValueError(f"frame of {params.dft_len} samples too short for f_min={f_min} Hz")
    frames = np.array(frame_matrix(x.real, params.dft_len, params.hop))
    d = _cmndf(frames, width, max_lag + 1)

    f0 = np.full(frames.shape[0], np.nan)
    for i, row in enumerate(d):
        below = np.flatnonzero(row[min_lag:max_lag + 1] < threshold)
        if below.size == 0:
            continue
        tau = min_lag + below[0]
        while tau + 1 <= max_lag and row[tau + 1] < row[tau]:
            tau += 1
        a, b, c = row[tau - 1], row[tau], row[tau + 1]
        den = a - 2.0 * b + c
        shift = 0.5 * (a - c) / den if den > 0 else 0.0
        est = fs / (tau + float(np.clip(shift, -0.5, 0.5)))
        if f_min <= est <= f_max:
            f0[i] = est
    times = (np.arange(frames.shape[0]) * params.hop + params.dft_len / 2) / fs
    track = PitchTrack(f0, times, fs)
    logger.debug("yin: threshold=%.3f frame=%d hop=%d voiced=%d/%d", threshold,
                 params.dft_len, params.hop, int(track.voiced.sum()), f0.size)
    return track


@dataclass(frozen=True, eq=False)
class CycleSet:
    """Candidate cyclic frequencies grouped by harmonic index.

    ``bands[h-1]`` is the interval searched for harmonic ``h``; ``alphas``
    lists every grid frequency kept (0 first), with ``harmonics`` giving the
    harmonic each one was taken for (0 for the zero cycle).
    """

    bands: np.ndarray
    alphas: np.ndarray
    harmonics: np.ndarray
    delta_alpha: float
    mu0: float
    sigma0: float

    @property
    def num_harmonics(self) -> int:
        return self.bands.shape[0]

    @property
    def grid(self) -> CyclicFreqGrid:
        return CyclicFreqGrid(self.alphas, self.delta_alpha)

    @classmethod
    def zero_only(cls, delta_alpha: float) -> "CycleSet":
        return cls(np.zeros((0, 2)), np.zeros(1), np.zeros(1, dtype=int), delta_alpha, 0.0, 0.0)


def build_cycle_set(track: PitchTrack, grid: CyclicFreqGrid | float, f_cap_hz: float = 4000.0,
                    num_harmonics: int | None = None) -> CycleSet:
    """Grid cyclic frequencies near multiples of the tracked fundamental.

    Band ``h`` is ``[(mu0 - sigma0) h, (mu0 + sigma0) h]``.  The number of
    harmonics is the largest H with ``H (mu0 + sigma0)`` not above the cap,
    unless ``num_harmonics`` is given.  A band too narrow to hold any grid
    point is widened to the grid point nearest ``h * mu0``, so each
    harmonic contributes at least one cycle.

    Raises
    ------
    EmptyTrackError
        If the track has no voiced frames.
    """
    mu, sig = track.mu0, track.sigma0
    step = grid.delta_alpha if isinstance(grid, CyclicFreqGrid) else float(grid)
    if num_harmonics is None:
        cap = _TWO_PI * f_cap_hz / track.sample_rate_hz
        num_harmonics = int(math.floor(cap / (mu + sig) * (1 + 1e-12)))
    if num_harmonics < 1:
        raise ValueError(f"fundamental {track.mean_f0_hz:.1f} Hz leaves no harmonic below the cap")

    bands = np.empty((num_harmonics, 2))
    seen: dict[int, int] = {0: 0}
    for h in range(1, num_harmonics + 1):
        lo, hi = (mu - sig) * h, (mu + sig) * h
        m_lo = math.ceil(lo / step - 1e-9)
        m_hi = math.floor(hi / step + 1e-9)
        if m_lo > m_hi:
            m_lo = m_hi = int(round(mu * h / step))
            lo, hi = min(lo, m_lo * step), max(hi, m_lo * step)
        bands[h - 1] = lo, hi
        for m in range(m_lo, m_hi + 1):
            if 0 < m * step <= np.pi:
                seen.setdefault(m, h)
    ms = np.array(sorted(seen))
    return CycleSet(bands, ms * step, np.array([seen[m] for m in ms]), step, mu, sig)
