"""Spectral correlation density by the time-averaged cyclic periodogram.

For each cyclic frequency ``alpha`` the second signal is modulated by
``exp(1j*alpha*n)`` in the time domain, both signals are framed with the
same window and hop, and the conjugate products of their STFTs are
averaged over frames::

    S_yx(alpha, w_k) = 1/L * sum_l Y(w_k, l) * conj(X(w_k - alpha, l))

At ``alpha = 0`` this is exactly Welch's (unnormalized) cross-PSD.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .signals import (
    Signal,
    StftParams,
    frame_count,
    frame_matrix,
    stft,
    write_csv,
    write_json,
)

logger = logging.getLogger(__name__)

__all__ = [
    "CyclicFreqGrid",
    "CyclicSpectrum",
    "cyclic_resolution",
    "snap_to_grid",
    "acp_estimate",
    "acp_cross_spectra",
    "AcpPlan",
    "welch_psd",
    "cyclic_coherence",
    "resolution_ratio",
    "MIN_RESOLUTION_RATIO",
    "off_zero_ratio_db",
    "support_entries",
    "map_cosine_similarity",
]

MIN_RESOLUTION_RATIO = 4.0
_TWO_PI = 2.0 * np.pi


def cyclic_resolution(num_frames: int, hop: int) -> float:
    """Cyclic grid step ``2*pi / (L*R)`` in rad/sample."""
    if num_frames < 1 or hop < 1:
        raise ValueError("num_frames and hop must be >= 1")
    return _TWO_PI / (num_frames * hop)


def snap_to_grid(alpha_target: float, num_frames: int, hop: int) -> float:
    """Nearest multiple of ``2*pi/(L*R)``; exact half-steps round toward zero."""
    step = cyclic_resolution(num_frames, hop)
    q = round(alpha_target / step, 9)
    m = math.copysign(math.ceil(abs(q) - 0.5), q)
    return m * step + 0.0


def resolution_ratio(n_samples: int, p: StftParams) -> float:
    """Spectral over cyclic resolution, ``(2*pi/K) / (2*pi/(L*R)) = L*R/K``."""
    num = frame_count(n_samples, p.dft_len, p.hop)
    return num * p.hop / p.dft_len


@dataclass(frozen=True, eq=False)
class CyclicFreqGrid:
    """Sorted, distinct cyclic frequencies in (-pi, pi], always containing 0."""

    alphas: np.ndarray
    delta_alpha: float

    def __post_init__(self):
        alphas = np.asarray(self.alphas, dtype=float).ravel()
        if not self.delta_alpha > 0:
            raise ValueError("delta_alpha must be positive")
        if np.any(alphas <= -np.pi) or np.any(alphas > np.pi):
            raise ValueError("cyclic frequencies must lie in (-pi, pi]")
        alphas = np.unique(np.concatenate([alphas, [0.0]]))
        alphas.setflags(write=False)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "delta_alpha", float(self.delta_alpha))

    def __len__(self) -> int:
        return self.alphas.size

    @classmethod
    def for_signal(cls, n_samples: int, p: StftParams, targets=(),
                   max_alpha: float | None = None) -> "CyclicFreqGrid":
        """Grid matched to a record of ``n_samples`` analysed with ``p``.

        ``targets`` are snapped to the grid and deduplicated.  With
        ``max_alpha`` every grid multiple in ``[-max_alpha, max_alpha]`` is
        included as well.
        """
        num = frame_count(n_samples, p.dft_len, p.hop)
        step = cyclic_resolution(num, p.hop)
        alphas = [snap_to_grid(a, num, p.hop) for a in np.atleast_1d(targets)]
        if max_alpha is not None:
            m = int(math.floor(min(max_alpha, np.pi) / step + 1e-9))
            alphas.extend(np.arange(-m, m + 1) * step)
        alphas = [a for a in alphas if -np.pi < a <= np.pi]
        return cls(np.asarray(alphas, dtype=float), step)

    def index_of(self, alpha: float) -> int:
        idx = int(np.argmin(np.abs(self.alphas - alpha)))
        if abs(self.alphas[idx] - alpha) > 1e-9 * max(1.0, abs(alpha)):
            raise KeyError(f"alpha {alpha} not on grid")
        return idx

    @property
    def zero_index(self) -> int:
        return self.index_of(0.0)


@dataclass(frozen=True, eq=False)
class CyclicSpectrum:
    """Complex spectral correlation estimate, rows indexed by alpha, columns by bin."""

    values: np.ndarray
    grid: CyclicFreqGrid
    params: StftParams
    sample_rate_hz: float
    kind: str = "cross"
    num_frames: int = 0

    def __post_init__(self):
        if self.values.shape != (len(self.grid), self.params.dft_len):
            raise ValueError(
                f"values shape {self.values.shape} does not match "
                f"({len(self.grid)}, {self.params.dft_len})")
        if self.kind not in ("auto", "cross"):
            raise ValueError("kind must be 'auto' or 'cross'")

    def row(self, alpha: float) -> np.ndarray:
        return self.values[self.grid.index_of(alpha)]

    @property
    def alphas_hz(self) -> np.ndarray:
        return self.grid.alphas * self.sample_rate_hz / _TWO_PI

    @property
    def freqs_hz(self) -> np.ndarray:
        return np.arange(self.params.dft_len) * self.sample_rate_hz / self.params.dft_len

    def one_sided(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Rows with alpha >= 0 and bins 0..K/2, for plotting real-signal maps."""
        rows = self.grid.alphas >= 0
        cols = np.arange(self.params.dft_len // 2 + 1)
        return self.alphas_hz[rows], self.freqs_hz[cols], self.values[np.ix_(rows, cols)]

    def csv_rows(self, one_sided: bool = False, prefix=()):
        if one_sided:
            alphas, freqs, vals = self.one_sided()
        else:
            alphas, freqs, vals = self.alphas_hz, self.freqs_hz, self.values
        for i, a in enumerate(alphas):
            for j, f in enumerate(freqs):
                v = vals[i, j]
                yield (*prefix, a, f, v.real, v.imag)

    def to_csv(self, path, one_sided: bool = False) -> None:
        write_csv(path, ("alpha_hz", "freq_hz", "re", "im"), self.csv_rows(one_sided))

    def save(self, stem) -> None:
        """JSON header plus a ``.npy`` matrix, for grids too large for CSV."""
        stem = Path(stem)
        np.save(stem.with_suffix(".npy"), self.values)
        write_json({
            "kind": self.kind,
            "sample_rate_hz": self.sample_rate_hz,
            "dft_len": self.params.dft_len,
            "hop": self.params.hop,
            "window": self.params.window.value,
            "num_frames": self.num_frames,
            "delta_alpha": self.grid.delta_alpha,
            "alphas": self.grid.alphas,
            "matrix": stem.with_suffix(".npy").name,
        }, stem.with_suffix(".json"))

    @classmethod
    def load(cls, stem) -> "CyclicSpectrum":
        import json

        stem = Path(stem)
        with open(stem.with_suffix(".json"), encoding="utf-8") as fh:
            head = json.load(fh)
        values = np.load(stem.with_suffix(".npy"))
        params = StftParams(head["dft_len"], head["hop"], head["window"])
        grid = CyclicFreqGrid(np.asarray(head["alphas"]), head["delta_alpha"])
        return cls(values, grid, params, head["sample_rate_hz"], head["kind"], head["num_frames"])


def _check_pair(y: Signal, x: Signal) -> None:
    if len(y) != len(x):
        raise ValueError(f"signal lengths differ: {len(y)} vs {len(x)}")
    if y.sample_rate_hz != x.sample_rate_hz:
        raise ValueError(f"sample rates differ: {y.sample_rate_hz} vs {x.sample_rate_hz}")


def _warn_resolution(n_samples: int, p: StftParams) -> float:
    ratio = resolution_ratio(n_samples, p)
    if ratio < MIN_RESOLUTION_RATIO:
        logger.warning("spectral/cyclic resolution ratio %.2f is below %.0f; "
                       "cyclic estimates will have high variance", ratio, MIN_RESOLUTION_RATIO)
    else:
        logger.debug("spectral/cyclic resolution ratio %.2f", ratio)
    return ratio


class AcpPlan:
    """Precomputed modulation factors for one (record length, STFT, grid) triple.

    Modulating by ``exp(1j*alpha*n)`` and then framing equals multiplying
    frame ``l`` by ``exp(1j*alpha*l*R)`` and its samples by
    ``exp(1j*alpha*n)``, ``0 <= n < K``.  Both factors are cached here so
    repeated estimates (Monte Carlo averaging, auto plus cross spectra) only
    pay for the FFTs.
    """

    def __init__(self, n_samples: int, p: StftParams, grid: CyclicFreqGrid, chunk: int = 16):
        self.n_samples = int(n_samples)
        self.params = p
        self.grid = grid
        self.chunk = chunk
        self.num_frames = frame_count(self.n_samples, p.dft_len, p.hop)
        self.ratio = _warn_resolution(self.n_samples, p)
        alphas = grid.alphas
        self._kernel = p.window_values()[None, :] * np.exp(
            1j * np.outer(alphas, np.arange(p.dft_len)))
        self._frame_phase = np.exp(
            1j * np.outer(alphas, np.arange(self.num_frames) * p.hop))

    def _frames(self, x: Signal) -> np.ndarray:
        if len(x) != self.n_samples:
            raise ValueError(f"plan built for {self.n_samples} samples, got {len(x)}")
        return frame_matrix(x.samples, self.params.dft_len, self.params.hop)

    def shifted_stft(self, x: Signal, sl: slice) -> np.ndarray:
        """STFT of ``x`` modulated by each alpha in ``grid.alphas[sl]``, shape (A, L, K)."""
        frames = self._frames(x)
        spec = np.fft.fft(frames[None, :, :] * self._kernel[sl, None, :], axis=-1)
        return spec * self._frame_phase[sl, :, None]

    def cross_spectra(self, ys, x: Signal, with_shifted_psd: bool = False):
        """Rows ``mean_l Y(w_k, l) conj(X(w_k - alpha, l))`` for each ``y`` in ``ys``.

        With ``with_shifted_psd`` also returns ``mean_l |X(w_k - alpha, l)|^2``,
        the PSD of ``x`` at the shifted frequency, as a second value.
        """
        ys = list(ys)
        for y in ys:
            _check_pair(y, x)
        y_stfts = [stft(y, self.params).frames for y in ys]
        shape = (len(self.grid), self.params.dft_len)
        out = [np.empty(shape, dtype=np.complex128) for _ in ys]
        power = np.empty(shape) if with_shifted_psd else None
        for start in range(0, len(self.grid), self.chunk):
            sl = slice(start, min(start + self.chunk, len(self.grid)))
            xs_conj = np.conj(self.shifted_stft(x, sl))
            for o, yf in zip(out, y_stfts):
                o[sl] = np.mean(yf[None, :, :] * xs_conj, axis=1)
            if power is not None:
                power[sl] = np.mean(xs_conj.real ** 2 + xs_conj.imag ** 2, axis=1)
        if with_shifted_psd:
            return out, power
        return out

    def estimate(self, y: Signal, x: Signal) -> CyclicSpectrum:
        values = self.cross_spectra([y], x)[0]
        return CyclicSpectrum(values, self.grid, self.params, x.sample_rate_hz,
                              "auto" if y is x else "cross", self.num_frames)


def acp_cross_spectra(ys, x: Signal, p: StftParams, grid: CyclicFreqGrid) -> list[CyclicSpectrum]:
    """Cyclic cross-spectra of several signals ``ys`` against one shifted ``x``.

    The shifted STFT of ``x`` is computed once per alpha and shared by all
    of ``ys``.
    """
    ys = list(ys)
    plan = AcpPlan(len(x), p, grid)
    values = plan.cross_spectra(ys, x)
    return [
        CyclicSpectrum(v, grid, p, x.sample_rate_hz, "auto" if y is x else "cross", plan.num_frames)
        for v, y in zip(values, ys)
    ]


def acp_estimate(y: Signal, x: Signal, p: StftParams, grid: CyclicFreqGrid) -> CyclicSpectrum:
    """Averaged cyclic periodogram of ``y`` against ``x`` on ``grid``.

    Passing the same object for ``y`` and ``x`` yields the auto-spectrum.

    Raises
    ------
    ValueError
        If the signals differ in length or sample rate.
    """
    return acp_cross_spectra([y], x, p, grid)[0]


def welch_psd(x: Signal, p: StftParams) -> np.ndarray:
    """Welch PSD (unnormalized frame average of ``|X|^2``), all K bins."""
    grid = CyclicFreqGrid(np.zeros(1), cyclic_resolution(frame_count(len(x), p.dft_len, p.hop), p.hop))
    row = acp_estimate(x, x, p, grid).values[0]
    scale = np.max(np.abs(row)) if row.size else 0.0
    if scale > 0 and np.max(np.abs(row.imag)) > 1e-9 * scale:
        raise AssertionError("auto-PSD has a non-negligible imaginary part")
    return row.real.copy()


def cyclic_coherence(sxz, sx0, sz_alpha, eps: float = 1e-12) -> np.ndarray:
    """Squared cyclic coherence ``|S_xz(w, a)|^2 / (S_x(w) * S_z(w - a))``.

    Parameters
    ----------
    sxz : CyclicSpectrum or ndarray
        Cross-spectrum between output and shifted input, shape ``(P, K)``.
    sx0 : ndarray
        Output PSD, shape ``(K,)``.
    sz_alpha : CyclicSpectrum or ndarray
        Power of the input at the shifted frequency ``w_k - a`` for every
        row of the grid, shape ``(P, K)`` (see ``AcpPlan.cross_spectra``).
        Complex entries are replaced by their magnitude.
    eps : float
        Denominators below ``eps * max(denominator)`` are clamped to that floor.

    Returns
    -------
    ndarray
        Nonnegative, finite real matrix of shape ``(P, K)``; bounded by one
        when ``sz_alpha`` holds genuine shifted powers.
    """
    num = np.abs(getattr(sxz, "values", sxz)) ** 2
    szv = np.abs(getattr(sz_alpha, "values", sz_alpha))
    sx0 = np.abs(np.asarray(sx0, dtype=float))
    if num.shape != szv.shape or num.ndim != 2 or sx0.shape != (num.shape[1],):
        raise ValueError(f"incompatible shapes {num.shape}, {sx0.shape}, {szv.shape}")
    den = sx0[None, :] * szv
    peak = np.max(den) if den.size else 0.0
    floor = eps * peak if peak > 0 else np.finfo(float).tiny
    return num / np.maximum(den, floor)


def _values(spec) -> np.ndarray:
    return np.asarray(getattr(spec, "values", spec))


def off_zero_ratio_db(spec, grid: CyclicFreqGrid) -> float:
    """Largest off-zero magnitude relative to the largest zero-cycle magnitude, in dB.

    Returns ``-inf`` when there is no off-zero content and ``nan`` for an
    all-zero map.
    """
    mag = np.abs(_values(spec))
    zi = grid.zero_index
    ridge = mag[zi].max()
    off = np.delete(mag, zi, axis=0)
    peak = off.max() if off.size else 0.0
    if ridge == 0:
        return float("nan") if peak == 0 else float("inf")
    if peak == 0:
        return float("-inf")
    return float(20.0 * np.log10(peak / ridge))


def support_entries(spec, grid: CyclicFreqGrid, rel_db: float = 10.0) -> np.ndarray:
    """(row, bin) indices of off-zero entries within ``rel_db`` dB of the off-zero peak."""
    mag = np.abs(_values(spec)).copy()
    mag[grid.zero_index] = 0.0
    peak = mag.max()
    if peak == 0:
        return np.zeros((0, 2), dtype=int)
    return np.argwhere(mag >= peak * 10.0 ** (-rel_db / 20.0))


def map_cosine_similarity(a, b) -> float:
    """Cosine similarity of two magnitude maps, flattened."""
    ma, mb = np.abs(_values(a)).ravel(), np.abs(_values(b)).ravel()
    den = np.linalg.norm(ma) * np.linalg.norm(mb)
    return float(ma @ mb / den) if den > 0 else float("nan")
