"""Transfer-function estimation from noisy input/output records.

Two estimators are provided:

* :func:`estimate_wiener` -- cross-PSD over input PSD.
* :func:`estimate_cyclic` -- per-cycle ratios of cyclic cross- and
  auto-spectra, combined with weights proportional to the squared cyclic
  coherence.  Stationary input noise averages out of the cyclic input
  spectrum at nonzero cycles, so these ratios are not biased by it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .cyclic import AcpPlan, CyclicFreqGrid, cyclic_coherence, cyclic_resolution, welch_psd
from .errors import DegenerateInputError
from .pitch import CycleSet
from .signals import Signal, StftParams, frame_count, write_csv, write_json
from .synth import LtiSystem

logger = logging.getLogger(__name__)

__all__ = [
    "IoRecord",
    "TransferEstimate",
    "estimate_wiener",
    "estimate_cyclic",
    "rmse",
    "eval_bins",
    "WIENER_EPS",
    "PRUNE_EPS",
]

WIENER_EPS = 1e-12
PRUNE_EPS = 1e-3


@dataclass(frozen=True, eq=False)
class IoRecord:
    """Noisy input ``z`` and noisy output ``x`` of one system, optional ground truth."""

    z: Signal
    x: Signal
    truth: LtiSystem | None = None

    def __post_init__(self):
        if len(self.z) != len(self.x):
            raise ValueError(f"input and output lengths differ: {len(self.z)} vs {len(self.x)}")
        if self.z.sample_rate_hz != self.x.sample_rate_hz:
            raise ValueError("input and output sample rates differ")

    @property
    def sample_rate_hz(self) -> float:
        return self.z.sample_rate_hz


@dataclass(frozen=True, eq=False)
class TransferEstimate:
    a_hat: np.ndarray
    method: str
    params: StftParams
    sample_rate_hz: float
    alphas: np.ndarray = field(default_factory=lambda: np.zeros(1))
    weights: np.ndarray | None = None
    coherence: np.ndarray | None = None

    @property
    def freqs_hz(self) -> np.ndarray:
        k = self.params.dft_len
        return np.arange(k) * self.sample_rate_hz / k

    def csv_rows(self):
        for f, a in zip(self.freqs_hz, self.a_hat):
            yield f, a.real, a.imag, abs(a), self.method

    def to_csv(self, path) -> None:
        write_csv(path, ("freq_hz", "re", "im", "abs", "method"), self.csv_rows())

    def to_json(self, path) -> None:
        record = {
            "method": self.method,
            "sample_rate_hz": self.sample_rate_hz,
            "dft_len": self.params.dft_len,
            "hop": self.params.hop,
            "window": self.params.window.value,
            "a_hat_re": self.a_hat.real,
            "a_hat_im": self.a_hat.imag,
            "alphas": self.alphas,
        }
        if self.weights is not None:
            record["weights"] = self.weights
            record["coherence"] = self.coherence
        write_json(record, path)


def _check_input(rec: IoRecord) -> None:
    if not np.any(rec.z.samples):
        raise DegenerateInputError("input signal is identically zero")


def _guarded_psd(psd: np.ndarray) -> np.ndarray:
    peak = np.max(psd)
    return np.maximum(psd, WIENER_EPS * peak)


def estimate_wiener(rec: IoRecord, p: StftParams) -> TransferEstimate:
    """Cross-PSD of output and input over the input PSD, per bin."""
    _check_input(rec)
    step = cyclic_resolution(frame_count(len(rec.z), p.dft_len, p.hop), p.hop)
    plan = AcpPlan(len(rec.z), p, CyclicFreqGrid(np.zeros(1), step))
    sxz, sz = plan.cross_spectra([rec.x, rec.z], rec.z)
    a_hat = sxz[0] / _guarded_psd(sz[0].real)
    return TransferEstimate(a_hat, "wiener", p, rec.sample_rate_hz)


def estimate_cyclic(rec: IoRecord, p: StftParams, cycles: CycleSet | CyclicFreqGrid,
                    prune_eps: float = PRUNE_EPS) -> TransferEstimate:
    """Coherence-weighted combination of per-cycle transfer ratios.

    For each cycle ``a`` in the set the ratio ``S_xz(w, a) / S_z(w, a)`` is
    formed; ratios whose denominator magnitude is below
    ``prune_eps * S_z(w, 0)`` are dropped at that bin.  The rest are averaged
    with weights ``gamma^2 / sum(gamma^2)``, where
    ``gamma^2 = |S_xz(w, a)|^2 / (S_x(w) S_z(w - a))``.  Bins where every
    cycle is dropped fall back to the zero cycle.

    Raises
    ------
    ValueError
        If the cycle set is empty.
    DegenerateInputError
        If the input is identically zero.
    """
    if len(cycles.alphas) == 0:
        raise ValueError("cycle set is empty")
    grid = cycles.grid if isinstance(cycles, CycleSet) else cycles
    _check_input(rec)
    plan = AcpPlan(len(rec.z), p, grid)
    (sxz, sz), sz_shifted = plan.cross_spectra([rec.x, rec.z], rec.z, with_shifted_psd=True)
    zi = grid.zero_index

    den0 = _guarded_psd(sz[zi].real)
    mag = np.abs(sz)
    keep = mag >= prune_eps * den0[None, :]
    keep[zi] = True
    ratios = np.zeros_like(sxz)
    np.divide(sxz, sz, out=ratios, where=keep)
    ratios[zi] = sxz[zi] / den0

    gamma2 = cyclic_coherence(sxz, welch_psd(rec.x, p), sz_shifted)
    weights = np.where(keep, gamma2, 0.0)
    total = weights.sum(axis=0)
    empty = total <= 0
    if np.any(empty):
        logger.info("all cycles pruned at %d bins; using the zero cycle there", int(empty.sum()))
        weights[:, empty] = 0.0
        weights[zi, empty] = 1.0
        total = np.where(empty, 1.0, total)
    weights /= total[None, :]
    a_hat = np.sum(weights * ratios, axis=0)
    return TransferEstimate(a_hat, "cyclic", p, rec.sample_rate_hz,
                            alphas=grid.alphas.copy(), weights=weights, coherence=gamma2)


def eval_bins(cycles: CycleSet, dft_len: int, mode: str = "harmonics") -> np.ndarray:
    """Bins used to score an estimate.

    ``"harmonics"`` keeps the positive-frequency bins whose centre lies within
    half a bin of some harmonic band; ``"all"`` keeps every bin.
    """
    if mode == "all":
        return np.arange(dft_len)
    if mode != "harmonics":
        raise ValueError(f"unknown eval-bin mode {mode!r}")
    centres = 2.0 * np.pi * np.arange(dft_len // 2 + 1) / dft_len
    half = np.pi / dft_len
    hit = np.zeros(centres.size, dtype=bool)
    for lo, hi in cycles.bands:
        hit |= (centres >= lo - half) & (centres <= hi + half)
    return np.flatnonzero(hit)


def rmse(est: TransferEstimate | np.ndarray, truth: LtiSystem | np.ndarray, bins) -> float:
    """Root-mean-square complex error over ``bins``."""
    bins = np.asarray(bins, dtype=int)
    if bins.size == 0:
        raise ValueError("no evaluation bins")
    a_hat = est.a_hat if isinstance(est, TransferEstimate) else np.asarray(est)
    a = truth.frequency_response if isinstance(truth, LtiSystem) else np.asarray(truth)
    return float(np.sqrt(np.mean(np.abs(a_hat[bins] - a[bins]) ** 2)))
