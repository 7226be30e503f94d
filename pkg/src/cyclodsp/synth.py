"""Generators for harmonic excitations, random FIR systems and additive noise."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .signals import Signal

__all__ = [
    "AmpProcessSpec",
    "HarmonicModelSpec",
    "LtiSystem",
    "gen_wss_harmonic",
    "gen_cs_harmonic",
    "amplitude_processes",
    "ma_autocovariance",
    "gen_lti_system",
    "add_noise_at_snr",
    "filter_signal",
]


@dataclass(frozen=True)
class AmpProcessSpec:
    """White Gaussian amplitudes smoothed by a unit-DC-gain moving average.

    ``std`` is the standard deviation of the white draws *before* smoothing;
    the default variance of 10 around a mean of 0.5 gives slow amplitude
    fluctuations once averaged over ``ma_taps`` samples.
    """

    mean: float = 0.5
    std: float = math.sqrt(10.0)
    ma_taps: int = 1

    def __post_init__(self):
        if not self.std >= 0:
            raise ValueError(f"std must be nonnegative, got {self.std}")
        if int(self.ma_taps) != self.ma_taps or self.ma_taps < 1:
            raise ValueError(f"ma_taps must be a positive integer, got {self.ma_taps}")
        object.__setattr__(self, "ma_taps", int(self.ma_taps))

    @classmethod
    def for_sample_rate(cls, sample_rate_hz: float, mean: float = 0.5,
                        std: float = math.sqrt(10.0)) -> "AmpProcessSpec":
        """Moving average spanning a tenth of a second."""
        return cls(mean, std, max(1, int(math.floor(0.1 * sample_rate_hz))))


@dataclass(frozen=True, eq=False)
class HarmonicModelSpec:
    """Parameters shared by the random-phase and random-amplitude harmonic models.

    Parameters
    ----------
    omega0 : float
        Fundamental in radians/sample.
    num_harmonics : int
        Number of harmonics H; all of ``h * omega0`` must stay below pi.
    amplitudes : array_like, optional
        Fixed amplitudes of the random-phase model (default all ones).
    phases : array_like, optional
        Fixed phases of the random-amplitude model.  When omitted each call
        draws fresh phases, so callers that want them frozen across
        realizations should pass them explicitly.
    amp_process : AmpProcessSpec
        Amplitude process of the random-amplitude model.
    """

    omega0: float
    num_harmonics: int
    amplitudes: np.ndarray | None = None
    phases: np.ndarray | None = None
    amp_process: AmpProcessSpec = field(default_factory=AmpProcessSpec)

    def __post_init__(self):
        if not self.omega0 > 0:
            raise ValueError(f"omega0 must be positive, got {self.omega0}")
        if int(self.num_harmonics) != self.num_harmonics or self.num_harmonics < 1:
            raise ValueError(f"num_harmonics must be a positive integer, got {self.num_harmonics}")
        h = int(self.num_harmonics)
        object.__setattr__(self, "num_harmonics", h)
        if self.omega0 * h >= np.pi:
            raise ValueError(
                f"harmonic {h} at {self.omega0 * h:.4f} rad/sample is not below Nyquist")
        amps = np.ones(h) if self.amplitudes is None else np.asarray(self.amplitudes, float)
        if amps.shape != (h,) or not np.all(np.isfinite(amps)):
            raise ValueError("amplitudes must be a finite vector of length num_harmonics")
        object.__setattr__(self, "amplitudes", amps)
        if self.phases is not None:
            phases = np.asarray(self.phases, float)
            if phases.shape != (h,):
                raise ValueError("phases must have length num_harmonics")
            object.__setattr__(self, "phases", phases)

    @classmethod
    def from_hz(cls, f0_hz: float, sample_rate_hz: float, num_harmonics: int, **kwargs):
        return cls(2.0 * np.pi * f0_hz / sample_rate_hz, num_harmonics, **kwargs)

    @property
    def harmonic_freqs(self) -> np.ndarray:
        return self.omega0 * np.arange(1, self.num_harmonics + 1)


def _harmonic_matrix(spec: HarmonicModelSpec, len_n: int, phases: np.ndarray) -> np.ndarray:
    n = np.arange(len_n)
    return np.cos(np.outer(spec.harmonic_freqs, n) + phases[:, None])


def gen_wss_harmonic(spec: HarmonicModelSpec, len_n: int, rng: np.random.Generator,
                     sample_rate_hz: float = 1.0) -> Signal:
    """One realization of ``sum_h b_h cos(omega0*h*n + Phi_h)`` with Phi_h ~ U(-pi, pi)."""
    if len_n < 1:
        raise ValueError("len_n must be >= 1")
    phases = rng.uniform(-np.pi, np.pi, spec.num_harmonics)
    s = spec.amplitudes @ _harmonic_matrix(spec, len_n, phases)
    return Signal(s, sample_rate_hz)


def amplitude_processes(proc: AmpProcessSpec, num: int, len_n: int,
                        rng: np.random.Generator) -> np.ndarray:
    """``num`` independent stationary amplitude streams, shape ``(num, len_n)``.

    The moving average is run in 'valid' mode over ``ma_taps - 1`` extra
    leading draws, so the output is stationary from the first sample.
    """
    m = proc.ma_taps
    white = rng.normal(proc.mean, proc.std, size=(num, len_n + m - 1))
    if m == 1:
        return white
    csum = np.cumsum(white, axis=1)
    csum = np.concatenate([np.zeros((num, 1)), csum], axis=1)
    return (csum[:, m:] - csum[:, :-m]) / m


def ma_autocovariance(proc: AmpProcessSpec, lags) -> np.ndarray:
    """Autocovariance of :func:`amplitude_processes` output at integer ``lags``."""
    lags = np.abs(np.asarray(lags))
    m = proc.ma_taps
    return np.where(lags < m, proc.std ** 2 * (m - lags) / m ** 2, 0.0)


def gen_cs_harmonic(spec: HarmonicModelSpec, len_n: int, rng: np.random.Generator,
                    sample_rate_hz: float = 1.0) -> Signal:
    """One realization of ``sum_h B_h(n) cos(omega0*h*n + phi_h)``.

    The B_h are mutually independent streams from :func:`amplitude_processes`.
    """
    if len_n < 1:
        raise ValueError("len_n must be >= 1")
    phases = spec.phases
    if phases is None:
        phases = rng.uniform(-np.pi, np.pi, spec.num_harmonics)
    amps = amplitude_processes(spec.amp_process, spec.num_harmonics, len_n, rng)
    s = np.sum(amps * _harmonic_matrix(spec, len_n, phases), axis=0)
    return Signal(s, sample_rate_hz)


@dataclass(frozen=True, eq=False)
class LtiSystem:
    """Real FIR system with unit-energy impulse response."""

    impulse_response: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.impulse_response, dtype=float)
        if a.ndim != 1 or a.size < 1:
            raise ValueError("impulse response must be a non-empty vector")
        a = a.copy()
        a.setflags(write=False)
        object.__setattr__(self, "impulse_response", a)

    @property
    def dft_len(self) -> int:
        return self.impulse_response.size

    @property
    def frequency_response(self) -> np.ndarray:
        return np.fft.fft(self.impulse_response)

    def response_at(self, omega) -> np.ndarray:
        """DTFT of the impulse response at arbitrary angular frequencies."""
        omega = np.atleast_1d(np.asarray(omega, dtype=float))
        n = np.arange(self.dft_len)
        return np.exp(-1j * np.outer(omega, n)) @ self.impulse_response


def gen_lti_system(len_k: int, rng: np.random.Generator) -> LtiSystem:
    """Random decaying FIR: U(-1, 1) taps times ``exp(-10 n / K)``, unit energy."""
    if len_k < 1:
        raise ValueError("len_k must be >= 1")
    n = np.arange(len_k)
    a = rng.uniform(-1.0, 1.0, len_k) * np.exp(-10.0 * n / len_k)
    energy = np.sum(a ** 2)
    while energy == 0.0:  # measure-zero, but keep normalization defined
        a = rng.uniform(-1.0, 1.0, len_k) * np.exp(-10.0 * n / len_k)
        energy = np.sum(a ** 2)
    return LtiSystem(a / np.sqrt(energy))


def filter_signal(system: LtiSystem, x: Signal) -> Signal:
    """Causal convolution, truncated to the input length."""
    from scipy.signal import lfilter

    return x.with_samples(lfilter(system.impulse_response, [1.0], x.samples))


def add_noise_at_snr(x: Signal, snr_db: float, rng: np.random.Generator) -> Signal:
    """Add white Gaussian noise so that the record-level SNR equals ``snr_db``.

    The drawn noise is rescaled to hit the target mean-square exactly.  Real
    inputs get real noise, complex inputs circular complex noise.  An SNR of
    ``+inf`` returns the input unchanged.
    """
    if snr_db == np.inf:
        return x
    p_x = x.power
    if p_x == 0.0:
        raise ValueError("cannot set an SNR relative to a zero-energy signal")
    n = len(x)
    if x.is_real:
        v = rng.standard_normal(n)
    else:
        v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    target = p_x / 10.0 ** (snr_db / 10.0)
    v *= np.sqrt(target / np.mean(np.abs(v) ** 2))
    return x.with_samples(x.samples + v)
