"""Cyclostationary modelling of harmonic signals and cyclic system identification."""

__version__ = "0.1.0"

from .cyclic import (  # noqa: E402
    AcpPlan,
    CyclicFreqGrid,
    CyclicSpectrum,
    acp_estimate,
    cyclic_coherence,
    snap_to_grid,
    welch_psd,
)
from .pitch import CycleSet, PitchTrack, build_cycle_set, estimate_f0  # noqa: E402
from .signals import Signal, StftParams, WindowKind, make_window, modulate, stft  # noqa: E402
from .sysid import IoRecord, TransferEstimate, estimate_cyclic, estimate_wiener, rmse  # noqa: E402

__all__ = [
    "AcpPlan", "CyclicFreqGrid", "CyclicSpectrum", "acp_estimate", "cyclic_coherence",
    "snap_to_grid", "welch_psd", "CycleSet", "PitchTrack", "build_cycle_set", "estimate_f0",
    "Signal", "StftParams", "WindowKind", "make_window", "modulate", "stft", "IoRecord",
    "TransferEstimate", "estimate_cyclic", "estimate_wiener", "rmse",
]
