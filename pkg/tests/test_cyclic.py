import csv
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cyclodsp.cyclic import (
    AcpPlan,
    CyclicFreqGrid,
    CyclicSpectrum,
    acp_estimate,
    cyclic_coherence,
    cyclic_resolution,
    map_cosine_similarity,
    off_zero_ratio_db,
    resolution_ratio,
    snap_to_grid,
    support_entries,
    welch_psd,
)
from cyclodsp.signals import Signal, StftParams, frame_count, make_window, modulate, stft

from conftest import complex_signal, real_signal


def loop_welch_cross(y, x, k, r, window):
    """Frame-by-frame cross-periodogram average, written without the library helpers."""
    n = len(x)
    frames = 1 if n <= k else 1 + int(np.ceil((n - k) / r))
    total = (frames - 1) * r + k
    yp = np.zeros(total, complex)
    xp = np.zeros(total, complex)
    yp[:n], xp[:n] = y, x
    w = make_window(window, k)
    acc = np.zeros(k, complex)
    for ell in range(frames):
        seg = slice(ell * r, ell * r + k)
        acc += np.fft.fft(w * yp[seg]) * np.conj(np.fft.fft(w * xp[seg]))
    return acc / frames


def zero_grid(n, p):
    return CyclicFreqGrid([0.0], cyclic_resolution(frame_count(n, p.dft_len, p.hop), p.hop))


def test_alpha_zero_is_welch(rng):
    for _ in range(5):
        n = int(rng.integers(200, 3000))
        k = int(rng.choice([32, 64, 128]))
        p = StftParams(k, int(rng.integers(1, k + 1)), rng.choice(["hann", "rectangular"]))
        x, y = complex_signal(rng, n), complex_signal(rng, n)
        est = acp_estimate(y, x, p, zero_grid(n, p)).values[0]
        ref = loop_welch_cross(y.samples, x.samples, k, p.hop, p.window)
        assert np.max(np.abs(est - ref)) <= 1e-12 * np.max(np.abs(ref))


def test_plan_matches_modulate_then_stft(rng):
    n, p = 1500, StftParams(64, 21)
    x, y = complex_signal(rng, n), real_signal(rng, n)
    grid = CyclicFreqGrid.for_signal(n, p, targets=[0.37, -1.1, 2.9], max_alpha=0.1)
    est = acp_estimate(y, x, p, grid).values
    ys = stft(y, p).frames
    for i, a in enumerate(grid.alphas):
        xs = stft(modulate(x, a), p).frames
        np.testing.assert_allclose(est[i], np.mean(ys * np.conj(xs), axis=0), rtol=1e-10,
                                   atol=1e-10)


def test_zero_signal_spectrum():
    p = StftParams(64, 21)
    z = Signal(np.zeros(1000), 1.0)
    grid = CyclicFreqGrid.for_signal(1000, p, max_alpha=0.3)
    spec = acp_estimate(z, z, p, grid)
    assert not np.any(spec.values)
    assert support_entries(spec, grid).shape == (0, 2)
    assert np.isnan(off_zero_ratio_db(spec, grid))
    np.testing.assert_array_equal(welch_psd(z, p), np.zeros(64))


def test_mismatched_inputs_rejected(rng):
    p = StftParams(32, 8)
    grid = zero_grid(100, p)
    with pytest.raises(ValueError):
        acp_estimate(real_signal(rng, 100), real_signal(rng, 101), p, grid)
    with pytest.raises(ValueError):
        acp_estimate(real_signal(rng, 100, fs=8000), real_signal(rng, 100, fs=16000), p, grid)


def test_tone_concentrates_on_expected_cycles():
    k, n = 256, 256 * 60
    p = StftParams(k, k // 4)
    w0 = 2 * np.pi * 16 / k
    x = Signal(np.cos(w0 * np.arange(n) + 0.3), 1.0)
    grid = CyclicFreqGrid.for_signal(n, p, targets=[w0, 2 * w0, -2 * w0, 0.5 * w0, 3 * w0],
                                     max_alpha=0.02)
    spec = acp_estimate(x, x, p, grid)
    mag = np.abs(spec.values)
    peak = mag.max()
    on = [grid.index_of(0.0), grid.index_of(snap_to_grid(2 * w0, spec.num_frames, p.hop)),
          grid.index_of(snap_to_grid(-2 * w0, spec.num_frames, p.hop))]
    off = np.delete(mag, on, axis=0)
    assert 20 * np.log10(off.max() / peak) < -20
    assert mag[on[1]].max() > 0.3 * peak
    # alpha = 0 ridge peaks at the tone bins
    assert set(np.argsort(mag[on[0]])[-2:]) == {16, k - 16}


def test_welch_white_noise_flat(rng):
    k, frames, sigma = 64, 400, 1.7
    p = StftParams(k, k, "rectangular")
    x = Signal(sigma * rng.standard_normal(k * frames), 1.0)
    psd = welch_psd(x, p)
    expected = sigma ** 2 * k
    # each bin averages `frames` independent chi-square-like periodogram values
    se = expected / np.sqrt(frames)
    assert np.all(np.abs(psd - expected) < 4 * se * np.sqrt(2))
    assert abs(psd.mean() - expected) < 4 * se / np.sqrt(k / 2)


def test_welch_tone_peak():
    k = 128
    x = Signal(np.cos(2 * np.pi * 10 * np.arange(4096) / k), 1.0)
    psd = welch_psd(x, StftParams(k, k // 3))
    assert np.argmax(psd[:k // 2]) == 10


def test_self_coherence_is_one(rng):
    n, p = 4000, StftParams(64, 21)
    x = real_signal(rng, n)
    plan = AcpPlan(n, p, zero_grid(n, p))
    (sxx,), shifted = plan.cross_spectra([x], x, with_shifted_psd=True)
    g = cyclic_coherence(sxx, welch_psd(x, p), shifted)
    np.testing.assert_allclose(g, 1.0, rtol=1e-10)


def test_independent_coherence_small(rng):
    n, p = 64 * 500, StftParams(64, 64, "rectangular")
    x, z = real_signal(rng, n), real_signal(rng, n)
    plan = AcpPlan(n, p, zero_grid(n, p))
    (sxz,), shifted = plan.cross_spectra([x], z, with_shifted_psd=True)
    g = cyclic_coherence(sxz, welch_psd(x, p), shifted)
    num = frame_count(n, 64, 64)
    assert g.mean() < 5 / num


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31), st.booleans())
def test_coherence_finite_nonnegative(seed, zero_out):
    rng = np.random.default_rng(seed)
    n, p = 600, StftParams(32, 10)
    x, z = complex_signal(rng, n), real_signal(rng, n)
    if zero_out:
        z = z.with_samples(np.zeros(n))
    grid = CyclicFreqGrid.for_signal(n, p, max_alpha=0.2)
    plan = AcpPlan(n, p, grid)
    (sxz,), shifted = plan.cross_spectra([x], z, with_shifted_psd=True)
    g = cyclic_coherence(sxz, welch_psd(x, p), shifted)
    assert np.all(np.isfinite(g)) and np.all(g >= 0)
    assert np.all(g <= 1 + 1e-9)


def test_coherence_shape_mismatch():
    with pytest.raises(ValueError):
        cyclic_coherence(np.ones((2, 4)), np.ones(3), np.ones((2, 4)))


def test_snap_examples():
    ell, r = 37, 11
    step = 2 * np.pi / (ell * r)
    assert snap_to_grid(0.0, ell, r) == 0.0
    assert snap_to_grid(3.4 * step, ell, r) == pytest.approx(3 * step)
    assert snap_to_grid(3.5 * step, ell, r) == pytest.approx(3 * step)
    assert snap_to_grid(-3.5 * step, ell, r) == pytest.approx(-3 * step)
    assert snap_to_grid(3.6 * step, ell, r) == pytest.approx(4 * step)


def test_grid_dedupes_and_contains_zero():
    p = StftParams(64, 16)
    step = cyclic_resolution(frame_count(1000, 64, 16), 16)
    grid = CyclicFreqGrid.for_signal(1000, p, targets=[1.02 * step, 0.98 * step, 5 * step])
    np.testing.assert_allclose(grid.alphas, [0, step, 5 * step])
    assert grid.zero_index == 0
    with pytest.raises(KeyError):
        grid.index_of(2 * step)
    with pytest.raises(ValueError):
        CyclicFreqGrid([-np.pi], step)


def test_real_input_symmetry(rng):
    n, p = 3000, StftParams(64, 21)
    x = real_signal(rng, n)
    grid = CyclicFreqGrid.for_signal(n, p, max_alpha=0.25)
    spec = acp_estimate(x, x, p, grid).values
    bins = np.arange(64)
    for i, a in enumerate(grid.alphas):
        j = grid.index_of(-a)
        np.testing.assert_allclose(spec[j, (-bins) % 64], np.conj(spec[i]), atol=1e-9)


def test_resolution_warning(caplog):
    p = StftParams(256, 85)
    assert resolution_ratio(800, p) < 4
    with caplog.at_level(logging.WARNING, logger="cyclodsp.cyclic"):
        AcpPlan(800, p, zero_grid(800, p))
    assert any("resolution" in rec.message for rec in caplog.records)


def test_cyclic_spectrum_export_roundtrip(tmp_path, rng):
    n, p = 900, StftParams(32, 8)
    x = real_signal(rng, n, fs=8000)
    grid = CyclicFreqGrid.for_signal(n, p, max_alpha=0.1)
    spec = acp_estimate(x, x, p, grid)
    assert spec.kind == "auto"
    spec.save(tmp_path / "map")
    back = CyclicSpectrum.load(tmp_path / "map")
    np.testing.assert_array_equal(back.values, spec.values)
    np.testing.assert_array_equal(back.grid.alphas, grid.alphas)
    spec.to_csv(tmp_path / "map.csv", one_sided=True)
    with open(tmp_path / "map.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["alpha_hz", "freq_hz", "re", "im"]
    assert len(rows) - 1 == np.sum(grid.alphas >= 0) * (32 // 2 + 1)


def test_map_cosine_similarity():
    a = np.array([[1.0, 2.0], [0.0, 1.0]])
    assert map_cosine_similarity(a, 3 * a) == pytest.approx(1.0)
    assert map_cosine_similarity(a, -a) == pytest.approx(1.0)
    assert map_cosine_similarity(np.eye(2), 1 - np.eye(2)) == 0.0
