"""Sampled signals, windows, STFT framing and file I/O.

All transforms are unnormalized: frame ``l``, bin ``k`` of the STFT holds
``sum_n x(n + l*R) w(n) exp(-2j*pi*k*n/K)``.  Every estimator built on top
of it is a ratio of such sums, so the missing scale factor cancels.
"""

from __future__ import annotations

import csv
import enum
import json
import logging
import math
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.io import wavfile

from .errors import UnsupportedEncodingError, WavHeaderError, WavNotFoundError

logger = logging.getLogger(__name__)

__all__ = [
    "WindowKind",
    "Signal",
    "StftParams",
    "StftGrid",
    "make_window",
    "frame_count",
    "stft",
    "modulate",
    "frame_matrix",
    "read_wav",
    "write_wav",
    "write_csv",
    "write_json",
]


class WindowKind(str, enum.Enum):
    HANN = "hann"
    RECTANGULAR = "rectangular"


def _frozen_array(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Signal:
    """Uniformly sampled time series.

    Samples are always stored as complex128; real signals simply carry a
    zero imaginary part.
    """

    samples: np.ndarray
    sample_rate_hz: float

    def __post_init__(self):
        samples = np.asarray(self.samples)
        if samples.ndim != 1:
            raise ValueError(f"samples must be one-dimensional, got shape {samples.shape}")
        if samples.size < 1:
            raise ValueError("a signal needs at least one sample")
        if not self.sample_rate_hz > 0:
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        object.__setattr__(self, "samples", _frozen_array(samples, np.complex128))
        object.__setattr__(self, "sample_rate_hz", float(self.sample_rate_hz))

    def __len__(self) -> int:
        return self.samples.size

    @property
    def is_real(self) -> bool:
        return not np.any(self.samples.imag)

    @property
    def real(self) -> np.ndarray:
        return self.samples.real

    @property
    def power(self) -> float:
        """Mean square over the record."""
        return float(np.mean(np.abs(self.samples) ** 2))

    def with_samples(self, samples) -> "Signal":
        return Signal(samples, self.sample_rate_hz)


@dataclass(frozen=True)
class StftParams:
    """Analysis parameters; the window length always equals the DFT length."""

    dft_len: int
    hop: int
    window: WindowKind = WindowKind.HANN

    def __post_init__(self):
        if int(self.dft_len) != self.dft_len or self.dft_len < 1:
            raise ValueError(f"dft_len must be a positive integer, got {self.dft_len}")
        if int(self.hop) != self.hop or not 1 <= self.hop <= self.dft_len:
            raise ValueError(f"hop must satisfy 1 <= hop <= dft_len, got {self.hop}")
        object.__setattr__(self, "dft_len", int(self.dft_len))
        object.__setattr__(self, "hop", int(self.hop))
        object.__setattr__(self, "window", WindowKind(self.window))

    @classmethod
    def default_for(cls, dft_len: int, window=WindowKind.HANN) -> "StftParams":
        """Hop of a third of the window, as used for Hann-weighted averaging."""
        return cls(dft_len, max(1, dft_len // 3), window)

    def window_values(self) -> np.ndarray:
        return make_window(self.window, self.dft_len)


@dataclass(frozen=True, eq=False)
class StftGrid:
    frames: np.ndarray
    params: StftParams
    sample_rate_hz: float
    n_samples: int = field(default=0)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    def bin_freqs_hz(self) -> np.ndarray:
        return np.arange(self.params.dft_len) * self.sample_rate_hz / self.params.dft_len


def make_window(kind: WindowKind | str, len_k: int) -> np.ndarray:
    """Analysis window of length ``len_k``.

    Hann is the periodic variant ``0.5 * (1 - cos(2*pi*n/K))``, which makes
    overlapped frames at hop K/3 sum to a constant.
    """
    if int(len_k) != len_k or len_k < 1:
        raise ValueError(f"window length must be a positive integer, got {len_k}")
    kind = WindowKind(kind)
    if kind is WindowKind.RECTANGULAR:
        return np.ones(len_k)
    n = np.arange(len_k)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * n / len_k))


def frame_count(n_samples: int, dft_len: int, hop: int) -> int:
    """Number of frames ``ceil(1 + (N - K) / R)``; short records give one padded frame."""
    if n_samples <= dft_len:
        return 1
    return 1 + -(-(n_samples - dft_len) // hop)


def _padded(samples: np.ndarray, dft_len: int, hop: int) -> np.ndarray:
    n = samples.shape[-1]
    total = (frame_count(n, dft_len, hop) - 1) * hop + dft_len
    if total == n:
        return samples
    pad = [(0, 0)] * (samples.ndim - 1) + [(0, total - n)]
    return np.pad(samples, pad)


def frame_matrix(samples: np.ndarray, dft_len: int, hop: int) -> np.ndarray:
    """Read-only ``(..., L, K)`` view of zero-padded overlapping frames."""
    padded = _padded(samples, dft_len, hop)
    return sliding_window_view(padded, dft_len, axis=-1)[..., ::hop, :]


def stft(x: Signal, p: StftParams) -> StftGrid:
    """Short-time Fourier transform with zero-padded tail.

    Returns an ``L x K`` grid with ``L = frame_count(len(x), K, R)``.
    """
    frames = frame_matrix(x.samples, p.dft_len, p.hop) * p.window_values()
    return StftGrid(np.fft.fft(frames, axis=-1), p, x.sample_rate_hz, len(x))


def modulate(x: Signal, alpha: float) -> Signal:
    """Multiply by ``exp(1j * alpha * n)``; shifts the spectrum up by ``alpha`` rad/sample."""
    n = np.arange(len(x))
    return x.with_samples(x.samples * np.exp(1j * alpha * n))


# --------------------------------------------------------------------------
# File I/O

_WAVE_FORMAT_PCM = 1
_WAVE_FORMAT_IEEE_FLOAT = 3
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


def _probe_wav(path: Path) -> tuple[int, int, int]:
    """Return (format_tag, channels, bits_per_sample) from the fmt chunk."""
    with open(path, "rb") as fh:
        head = fh.read(12)
        if len(head) < 12 or head[:4] not in (b"RIFF", b"RIFX") or head[8:12] != b"WAVE":
            raise WavHeaderError(f"{path}: not a RIFF/WAVE file")
        while True:
            chunk = fh.read(8)
            if len(chunk) < 8:
                raise WavHeaderError(f"{path}: no fmt chunk")
            cid, size = chunk[:4], struct.unpack("<I", chunk[4:])[0]
            if cid == b"fmt ":
                body = fh.read(size)
                if len(body) < 16:
                    raise WavHeaderError(f"{path}: truncated fmt chunk")
                tag, channels, _, _, _, bits = struct.unpack("<HHIIHH", body[:16])
                if tag == _WAVE_FORMAT_EXTENSIBLE and len(body) >= 26:
                    tag = struct.unpack("<H", body[24:26])[0]
                return tag, channels, bits
            fh.seek(size + (size & 1), 1)


def read_wav(path) -> Signal:
    """Read a mono or stereo WAV as a float signal in [-1, 1].

    Accepts PCM 16/24-bit and 32-bit float.  For multi-channel files only
    channel 0 is kept and a warning is issued.
    """
    path = Path(path)
    if not path.is_file():
        raise WavNotFoundError(f"no such WAV file: {path}")
    tag, channels, bits = _probe_wav(path)
    supported = {(_WAVE_FORMAT_PCM, 16), (_WAVE_FORMAT_PCM, 24), (_WAVE_FORMAT_IEEE_FLOAT, 32)}
    if (tag, bits) not in supported:
        raise UnsupportedEncodingError(f"{path}: format tag {tag} with {bits} bits is not supported")
    if channels not in (1, 2):
        raise UnsupportedEncodingError(f"{path}: {channels} channels is not supported")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", wavfile.WavFileWarning)
            rate, data = wavfile.read(path)
    except ValueError as exc:
        raise WavHeaderError(f"{path}: {exc}") from exc
    if data.ndim == 2:
        warnings.warn(f"{path}: {data.shape[1]} channels, using channel 0", stacklevel=2)
        data = data[:, 0]
    if data.dtype == np.int16:
        values = data / 32768.0
    elif data.dtype == np.int32:
        # scipy left-justifies 24-bit samples into int32
        values = data / 2147483648.0
    else:
        values = np.clip(data.astype(np.float64), -1.0, 1.0)
    if values.size == 0:
        raise WavHeaderError(f"{path}: no samples")
    return Signal(values, rate)


def write_wav(path, x: Signal | np.ndarray, sample_rate_hz: float | None = None,
              bits: int = 16) -> None:
    """Write a real signal as PCM16 or float32 WAV."""
    if isinstance(x, Signal):
        sample_rate_hz = x.sample_rate_hz if sample_rate_hz is None else sample_rate_hz
        values = x.real
    else:
        values = np.asarray(x, dtype=float)
    if sample_rate_hz is None:
        raise ValueError("sample_rate_hz is required for raw arrays")
    if bits == 16:
        data = np.clip(np.round(values * 32768.0), -32768, 32767).astype(np.int16)
    elif bits == 32:
        data = values.astype(np.float32)
    else:
        raise ValueError("bits must be 16 or 32")
    wavfile.write(path, int(round(sample_rate_hz)), data)


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Write UTF-8 comma-separated rows below a header line.

    Floats are written with ``repr`` so identical inputs give identical bytes.
    """
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _finite_or_none(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _finite_or_none(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite_or_none(v) for v in obj]
    return obj


def write_json(record, path) -> None:
    text = json.dumps(record, default=_json_default, indent=2, sort_keys=True)
    # round-trip once so NaN/inf become null instead of invalid JSON
    clean = _finite_or_none(json.loads(text))
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(clean, fh, indent=2, sort_keys=True)
        fh.write("\n")
