import csv
import json

import numpy as np
import pytest
from click.testing import CliRunner
from hypothesis import given
from hypothesis import strategies as st

from cyclodsp import harness
from cyclodsp.cli import main
from cyclodsp.errors import ConfigError
from cyclodsp.signals import write_wav
from cyclodsp.synth import AmpProcessSpec, HarmonicModelSpec, gen_cs_harmonic

SMALL_SWEEP = """
trials = 3
sweep_values = [128, 256]
duration_s = 0.5
"""

SMALL_MAPS = """
realizations = 3
duration_s = 0.1
scd_max_alpha_hz = 400.0
"""


def write_toml(tmp_path, text, name="cfg.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def invoke(*args):
    res = CliRunner().invoke(main, list(args))
    return res


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# --- config ------------------------------------------------------------------

def test_load_config(tmp_path):
    cfg = harness.load_config(write_toml(tmp_path, SMALL_SWEEP + 'window = "rectangular"\n'))
    assert cfg.trials == 3 and cfg.sweep_values == (128, 256) and cfg.window == "rectangular"
    assert cfg.fs == 16000 and cfg.n_samples == 8000
    assert cfg.stft_params(256).hop == 85


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="unknown"):
        harness.load_config(write_toml(tmp_path, "bogus = 1\n"))
    with pytest.raises(ConfigError):
        harness.load_config(write_toml(tmp_path, "trials = [\n", "bad.toml"))
    with pytest.raises(ConfigError):
        harness.load_config(tmp_path / "missing.toml")
    with pytest.raises(ConfigError):
        harness.ExperimentConfig(excitation="wav")


def test_config_hash_ignores_workers():
    a = harness.ExperimentConfig()
    assert a.config_hash() == a.replace(workers=4).config_hash()
    assert a.config_hash() != a.replace(seed=1).config_hash()
    assert len(a.config_hash()) == 16


def test_trial_streams_reproducible_and_independent():
    a = [g.random(3) for g in harness.trial_streams(5, 2)]
    b = [g.random(3) for g in harness.trial_streams(5, 2)]
    c = [g.random(3) for g in harness.trial_streams(5, 3)]
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)
    assert len({tuple(v) for v in a}) == 4


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=50))
def test_ci_brackets_mean(values):
    s = harness.summarize(values)
    assert s["ci_low"] <= s["mean"] <= s["ci_high"]
    assert s["n"] == len(values)


def test_paired_p_value():
    assert np.isnan(harness.paired_p_value([1.0, 2.0], [2.0, 3.0]))
    assert harness.paired_p_value([0.1, 0.2, 0.15, 0.1], [0.5, 0.4, 0.6, 0.55]) < 0.01


# --- sysid sweep ---------------------------------------------------------------

def test_noiseless_single_trial_is_accurate():
    cfg = harness.ExperimentConfig(trials=1, input_snr_db=float("inf"),
                                   output_snr_db=float("inf"), sweep_values=(512,))
    t = harness.run_trial(cfg, 512, cfg.input_snr_db, 0)
    # the harmonic-line excitation only pins the response near each harmonic,
    # so the error against bin centres stays well above float noise
    assert t["rmse_cyclic"] < 0.25 and t["rmse_wiener"] < 0.25


def test_sysid_cli_deterministic(tmp_path):
    cfg = write_toml(tmp_path, SMALL_SWEEP)
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        res = invoke("sysid-sweep", "--config", cfg, "--out", str(out), "--seed", "7")
        assert res.exit_code == 0, res.output
    for name in ("results.csv", "trials.csv", "results.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    rows = read_rows(outs[0] / "results.csv")
    assert {r["method"] for r in rows} == {"wiener", "cyclic"}
    assert len(rows) == 4
    h = json.loads((outs[0] / "meta.json").read_text())["config_hash"]
    assert all(r["config_hash"] == h for r in rows)
    for r in rows:
        assert float(r["ci_low"]) <= float(r["mean_rmse"]) <= float(r["ci_high"])


def test_sysid_parallel_matches_serial(tmp_path):
    cfg = harness.load_config(write_toml(tmp_path, SMALL_SWEEP))
    serial = harness.run_sysid_sweep(cfg)
    parallel = harness.run_sysid_sweep(cfg.replace(workers=2))
    assert serial.points == parallel.points
    assert serial.config_hash == parallel.config_hash


def test_overwrite_refused_without_force(tmp_path):
    cfg = write_toml(tmp_path, "trials = 2\nsweep_values = [128]\nduration_s = 0.5\n")
    out = str(tmp_path / "out")
    assert invoke("sysid-sweep", "--config", cfg, "--out", out, "--seed", "1").exit_code == 0
    again = invoke("sysid-sweep", "--config", cfg, "--out", out, "--seed", "1")
    assert again.exit_code == 0
    clash = invoke("sysid-sweep", "--config", cfg, "--out", out, "--seed", "2")
    assert clash.exit_code != 0 and "--force" in clash.output
    forced = invoke("sysid-sweep", "--config", cfg, "--out", out, "--seed", "2", "--force")
    assert forced.exit_code == 0


def test_empty_wav_dir(tmp_path):
    (tmp_path / "wavs").mkdir()
    res = invoke("sysid-sweep", "--out", str(tmp_path / "o"), "--wav-dir", str(tmp_path / "wavs"),
                 "--trials", "1")
    assert res.exit_code != 0 and "no .wav files" in res.output
    cfg = harness.ExperimentConfig(excitation="wav", wav_dir=str(tmp_path / "wavs"))
    with pytest.raises(ConfigError):
        harness.run_sysid_sweep(cfg)


def test_wav_excitation_sweep(tmp_path):
    fs = 16000
    rng = np.random.default_rng(4)
    wavs = tmp_path / "wavs"
    wavs.mkdir()
    for i, f0 in enumerate((110.0, 180.0)):
        spec = HarmonicModelSpec.from_hz(f0, fs, 20, phases=rng.uniform(-np.pi, np.pi, 20),
                                         amp_process=AmpProcessSpec(0.5, 0.3, 1600))
        s = gen_cs_harmonic(spec, fs, rng, fs).real
        write_wav(wavs / f"v{i}.wav", 0.5 * s / np.max(np.abs(s)), fs)
    cfg = harness.ExperimentConfig(excitation="wav", wav_dir=str(wavs), trials=2,
                                   sweep_values=(256,))
    res = harness.run_sysid_sweep(cfg)
    trials = res.point(256)["trials"]
    assert all(min(abs(t["f0_hz"] - 110), abs(t["f0_hz"] - 180)) < 3 for t in trials)
    assert all(np.isfinite(t["rmse_cyclic"]) for t in trials)


# --- maps and waveforms --------------------------------------------------------

def test_scd_maps_cli_deterministic(tmp_path):
    cfg = write_toml(tmp_path, SMALL_MAPS)
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        res = invoke("scd-maps", "--config", cfg, "--out", str(out))
        assert res.exit_code == 0, res.output
    assert (outs[0] / "results.csv").read_bytes() == (outs[1] / "results.csv").read_bytes()
    rows = read_rows(outs[0] / "results.csv")
    assert {(r["signal"], r["mode"]) for r in rows} == {
        ("s_ph", "single"), ("s_ph", "average"), ("s_amp", "single"), ("s_amp", "average")}
    assert min(float(r["alpha_hz"]) for r in rows) == 0.0


def test_scd_maps_zero_recording_has_empty_support(tmp_path):
    write_wav(tmp_path / "silence.wav", np.zeros(4800), 48000)
    cfg = harness.ExperimentConfig(kind="scd_maps", realizations=2, duration_s=0.1,
                                   scd_max_alpha_hz=300.0, wav_path=str(tmp_path / "silence.wav"))
    res = harness.run_scd_maps(cfg)
    assert res["diagnostics"]["s_real/single"]["support_size"] == 0
    assert not np.any(res["maps"][("s_real", "single")])


def test_waveforms(tmp_path):
    out = tmp_path / "wf"
    res = invoke("waveforms", "--out", str(out))
    assert res.exit_code == 0, res.output
    rows = read_rows(out / "results.csv")
    assert all(r["label"] in ("s_ph", "s_amp") for r in rows)
    s_ph = np.array([float(r["value"]) for r in rows if r["label"] == "s_ph"])
    s_amp = np.array([float(r["value"]) for r in rows if r["label"] == "s_amp"])
    k = harness.ExperimentConfig().waveform_frame_len
    assert s_ph.size == s_amp.size == 3 * k
    jumps = np.abs(np.diff(s_ph))
    boundary = jumps[[k - 1, 2 * k - 1]]
    interior = np.delete(jumps, [k - 1, 2 * k - 1])
    assert boundary.min() > interior.max()

    again = tmp_path / "wf2"
    invoke("waveforms", "--out", str(again))
    assert (out / "results.csv").read_bytes() == (again / "results.csv").read_bytes()


def test_waveforms_with_recording(tmp_path):
    fs = 48000
    t = np.arange(fs) / fs
    write_wav(tmp_path / "v.wav", 0.3 * np.sin(2 * np.pi * 120 * t) + 0.1 * np.sin(2 * np.pi * 3000 * t), fs)
    cfg = harness.ExperimentConfig(kind="waveforms", wav_path=str(tmp_path / "v.wav"))
    res = harness.run_waveforms(cfg)
    assert res["s_real"].size == 3 * cfg.waveform_frame_len
    # the 3 kHz component is removed by the 600 Hz low-pass
    spec = np.abs(np.fft.rfft(res["s_real"]))
    freqs = np.fft.rfftfreq(res["s_real"].size, 1 / fs)
    assert spec[np.argmin(abs(freqs - 3000))] < 1e-3 * spec.max()


def test_verbose_flag_and_meta(tmp_path):
    out = tmp_path / "o"
    res = invoke("-v", "waveforms", "--out", str(out), "--seed", "3")
    assert res.exit_code == 0
    meta = json.loads((out / "meta.json").read_text())
    assert meta["config"]["seed"] == 3
    assert "spawn_key" in meta["seed_rule"]
