"""Experiment runner: system-identification sweeps, SCD maps and waveforms.

Reproducibility rule: trial ``t`` of a run seeded with ``seed`` draws from
``SeedSequence(seed, spawn_key=(t,))``, whose four children feed, in order,
the excitation, the system, the input noise and the output noise.  The same
trial index therefore reuses the same excitation at every sweep point.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats
from scipy.signal import butter, sosfiltfilt

from . import __version__
from .cyclic import AcpPlan, CyclicFreqGrid, cyclic_resolution, map_cosine_similarity, \
    off_zero_ratio_db, support_entries
from .errors import ConfigError
from .pitch import PitchTrack, build_cycle_set, estimate_f0
from .signals import Signal, StftParams, frame_count, read_wav, write_csv, write_json
from .synth import (
    AmpProcessSpec,
    HarmonicModelSpec,
    add_noise_at_snr,
    filter_signal,
    gen_cs_harmonic,
    gen_lti_system,
    gen_wss_harmonic,
)
from .sysid import IoRecord, estimate_cyclic, estimate_wiener, eval_bins, rmse

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

logger = logging.getLogger(__name__)

KINDS = ("waveforms", "scd_maps", "sysid_sweep")
SWEEP_AXES = ("dft_len", "input_snr_db", "none")
Z_95 = 1.959963984540054


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str = "sysid_sweep"
    seed: int = 0
    # sysid sweep
    sweep_axis: str = "dft_len"
    sweep_values: tuple = (128, 256, 512, 1024)
    trials: int = 40
    dft_len: int = 256
    window: str = "hann"
    input_snr_db: float = 0.0
    output_snr_db: float = 40.0
    f0_min_hz: float = 90.0
    f0_max_hz: float = 250.0
    f_cap_hz: float = 4000.0
    excitation: str = "synthetic"
    wav_dir: str | None = None
    estimate_f0: bool = False
    pitch_band_hz: tuple = (60.0, 400.0)
    eval_bins: str = "harmonics"
    prune_eps: float = 1e-3
    # shared signal settings; None picks the per-kind default
    sample_rate_hz: float | None = None
    duration_s: float | None = None
    amp_mean: float = 0.5
    amp_var: float = 10.0
    ma_seconds: float = 0.1
    # scd maps / waveforms
    f0_hz: float = 115.0
    num_harmonics: int = 5
    realizations: int = 200
    scd_max_alpha_hz: float = 1250.0
    scd_average: str = "complex"
    wav_path: str | None = None
    waveform_frame_len: int = 4096
    waveform_frames: int = 3
    lowpass_hz: float = 600.0
    # execution only, not part of the hash
    workers: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.sweep_axis not in SWEEP_AXES:
            raise ConfigError(f"sweep_axis must be one of {SWEEP_AXES}, got {self.sweep_axis!r}")
        if int(self.trials) != self.trials or self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.excitation not in ("synthetic", "wav"):
            raise ConfigError("excitation must be 'synthetic' or 'wav'")
        if self.excitation == "wav" and not self.wav_dir:
            raise ConfigError("excitation 'wav' needs wav_dir")
        if self.eval_bins not in ("harmonics", "all"):
            raise ConfigError("eval_bins must be 'harmonics' or 'all'")
        if self.scd_average not in ("complex", "magnitude"):
            raise ConfigError("scd_average must be 'complex' or 'magnitude'")
        if not 0 < self.f0_min_hz <= self.f0_max_hz:
            raise ConfigError("need 0 < f0_min_hz <= f0_max_hz")
        object.__setattr__(self, "sweep_values", tuple(self.sweep_values))
        object.__setattr__(self, "pitch_band_hz", tuple(self.pitch_band_hz))

    @property
    def fs(self) -> float:
        if self.sample_rate_hz is not None:
            return float(self.sample_rate_hz)
        return 16000.0 if self.kind == "sysid_sweep" else 48000.0

    @property
    def duration(self) -> float:
        if self.duration_s is not None:
            return float(self.duration_s)
        return 1.0 if self.kind == "sysid_sweep" else 0.25

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * self.fs))

    def stft_params(self, dft_len: int | None = None) -> StftParams:
        k = int(dft_len or self.dft_len)
        return StftParams(k, max(1, k // 3), self.window)

    def amp_process(self) -> AmpProcessSpec:
        taps = max(1, int(math.floor(self.ma_seconds * self.fs)))
        return AmpProcessSpec(self.amp_mean, math.sqrt(self.amp_var), taps)

    def sweep_points(self) -> list[tuple[int, float]]:
        """(dft_len, input_snr_db) for every sweep point."""
        if self.sweep_axis == "dft_len":
            return [(int(v), self.input_snr_db) for v in self.sweep_values]
        if self.sweep_axis == "input_snr_db":
            return [(self.dft_len, float(v)) for v in self.sweep_values]
        return [(self.dft_len, self.input_snr_db)]

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **{k: v for k, v in changes.items() if v is not None})

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["sample_rate_hz"] = self.fs
        d["duration_s"] = self.duration
        return d

    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("workers")
        text = json.dumps(d, sort_keys=True, default=str)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def load_config(path, **overrides) -> ExperimentConfig:
    """Read a flat TOML document of ExperimentConfig fields."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}")
    for key, value in raw.items():
        if isinstance(value, dict):
            raise ConfigError(f"{path}: key {key!r} must be a scalar or list")
    cfg = ExperimentConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()})
    return cfg.replace(**overrides)


def trial_streams(seed: int, trial: int) -> list[np.random.Generator]:
    """Excitation, system, input-noise and output-noise generators for one trial."""
    ss = np.random.SeedSequence(seed, spawn_key=(trial,))
    return [np.random.default_rng(s) for s in ss.spawn(4)]


# --------------------------------------------------------------------------
# system identification

def _wav_files(cfg: ExperimentConfig) -> list[Path]:
    files = sorted(Path(cfg.wav_dir).glob("*.wav"))
    if not files:
        raise ConfigError(f"no .wav files in {cfg.wav_dir}")
    return files


def draw_excitation(cfg: ExperimentConfig, rng: np.random.Generator):
    """Clean excitation for one trial and its true f0 (None for recordings)."""
    fs, n = cfg.fs, cfg.n_samples
    if cfg.excitation == "wav":
        files = _wav_files(cfg)
        sig = read_wav(files[int(rng.integers(len(files)))])
        if sig.sample_rate_hz != fs:
            raise ConfigError(f"WAV rate {sig.sample_rate_hz} Hz differs from configured {fs} Hz")
        return sig.with_samples(sig.real[:n]), None
    f0 = float(rng.uniform(cfg.f0_min_hz, cfg.f0_max_hz))
    h = max(1, int(math.floor(min(cfg.f_cap_hz, fs / 2 * 0.999) / f0)))
    spec = HarmonicModelSpec.from_hz(f0, fs, h, phases=rng.uniform(-np.pi, np.pi, h),
                                     amp_process=cfg.amp_process())
    return gen_cs_harmonic(spec, n, rng, fs), f0


def run_trial(cfg: ExperimentConfig, dft_len: int, input_snr_db: float, trial: int) -> dict:
    """One Monte Carlo trial: returns RMSE of both estimators and bookkeeping."""
    rng_exc, rng_sys, rng_in, rng_out = trial_streams(cfg.seed, trial)
    s, f0 = draw_excitation(cfg, rng_exc)
    system = gen_lti_system(dft_len, rng_sys)
    z = add_noise_at_snr(s, input_snr_db, rng_in)
    x = add_noise_at_snr(filter_signal(system, s), cfg.output_snr_db, rng_out)

    p = cfg.stft_params(dft_len)
    step = cyclic_resolution(frame_count(len(s), p.dft_len, p.hop), p.hop)
    if cfg.estimate_f0 or f0 is None:
        track = estimate_f0(s, cfg.pitch_band_hz)
    else:
        track = PitchTrack.from_constant(f0, s.sample_rate_hz)
    cycles = build_cycle_set(track, step, cfg.f_cap_hz)
    rec = IoRecord(z, x, system)
    bins = eval_bins(cycles, dft_len, cfg.eval_bins)
    wie = estimate_wiener(rec, p)
    cyc = estimate_cyclic(rec, p, cycles, cfg.prune_eps)
    return {
        "trial": trial,
        "f0_hz": f0 if f0 is not None else track.mean_f0_hz,
        "num_cycles": int(cycles.alphas.size),
        "num_eval_bins": int(bins.size),
        "rmse_wiener": rmse(wie, system, bins),
        "rmse_cyclic": rmse(cyc, system, bins),
    }


def summarize(values) -> dict:
    """Mean with a normal-approximation 95% confidence interval."""
    v = np.asarray(values, dtype=float)
    mean = float(np.mean(v))
    half = Z_95 * float(np.std(v, ddof=1)) / math.sqrt(v.size) if v.size > 1 else 0.0
    return {"mean": mean, "ci_low": mean - half, "ci_high": mean + half, "n": int(v.size)}


def paired_p_value(cyclic, wiener) -> float:
    """One-sided paired t-test p-value for mean(cyclic - wiener) < 0."""
    c, w = np.asarray(cyclic, float), np.asarray(wiener, float)
    if c.size < 2 or np.all(c - w == (c - w)[0]):
        return float("nan")
    return float(stats.ttest_rel(c, w, alternative="less").pvalue)


@dataclass
class SweepResult:
    config: ExperimentConfig
    points: list = field(default_factory=list)
    started: float = 0.0
    finished: float = 0.0

    @property
    def config_hash(self) -> str:
        return self.config.config_hash()

    def point(self, value) -> dict:
        for pt in self.points:
            if pt["value"] == value:
                return pt
        raise KeyError(value)

    def csv_rows(self):
        h = self.config_hash
        for pt in self.points:
            for method in ("wiener", "cyclic"):
                s = pt[method]
                yield (h, self.config.sweep_axis, pt["value"], method,
                       s["mean"], s["ci_low"], s["ci_high"], s["n"])

    def trial_rows(self):
        h = self.config_hash
        for pt in self.points:
            for t in pt["trials"]:
                yield (h, self.config.sweep_axis, pt["value"], t["trial"], t["f0_hz"],
                       t["num_cycles"], t["num_eval_bins"], t["rmse_wiener"], t["rmse_cyclic"])

    def payload(self) -> dict:
        return {"config_hash": self.config_hash, "config": self.config.to_dict(),
                "points": self.points}

    def write(self, out) -> None:
        out = Path(out)
        write_csv(out / "results.csv",
                  ("config_hash", "axis", "value", "method", "mean_rmse", "ci_low", "ci_high",
                   "trials"), self.csv_rows())
        write_csv(out / "trials.csv",
                  ("config_hash", "axis", "value", "trial", "f0_hz", "num_cycles",
                   "num_eval_bins", "rmse_wiener", "rmse_cyclic"), self.trial_rows())
        write_json(self.payload(), out / "results.json")


def _run_point(args):
    cfg, dft_len, snr, trial = args
    return run_trial(cfg, dft_len, snr, trial)


def run_sysid_sweep(cfg: ExperimentConfig) -> SweepResult:
    """Monte Carlo comparison of both estimators at every sweep point."""
    if cfg.excitation == "wav":
        _wav_files(cfg)
    result = SweepResult(cfg, started=time.time())
    points = cfg.sweep_points()
    jobs = [(cfg, k, snr, t) for k, snr in points for t in range(cfg.trials)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            trials = list(pool.map(_run_point, jobs, chunksize=4))
    else:
        trials = [_run_point(j) for j in jobs]
    for i, (k, snr) in enumerate(points):
        chunk = trials[i * cfg.trials:(i + 1) * cfg.trials]
        wie = [t["rmse_wiener"] for t in chunk]
        cyc = [t["rmse_cyclic"] for t in chunk]
        value = k if cfg.sweep_axis == "dft_len" else snr
        result.points.append({
            "value": value,
            "dft_len": k,
            "hop": cfg.stft_params(k).hop,
            "input_snr_db": snr,
            "wiener": summarize(wie),
            "cyclic": summarize(cyc),
            "mean_gap": float(np.mean(np.subtract(wie, cyc))),
            "p_value_cyclic_better": paired_p_value(cyc, wie),
            "trials": chunk,
        })
        logger.info("%s=%s wiener=%.4f cyclic=%.4f", cfg.sweep_axis, value,
                    result.points[-1]["wiener"]["mean"], result.points[-1]["cyclic"]["mean"])
    result.finished = time.time()
    return result


# --------------------------------------------------------------------------
# cyclic-spectrum maps

def scd_grid(cfg: ExperimentConfig, p: StftParams) -> CyclicFreqGrid:
    """Nonnegative grid cycles up to ``scd_max_alpha_hz``."""
    full = CyclicFreqGrid.for_signal(cfg.n_samples, p,
                                     max_alpha=2 * np.pi * cfg.scd_max_alpha_hz / cfg.fs)
    return CyclicFreqGrid(full.alphas[full.alphas >= 0], full.delta_alpha)


def _model_spec(cfg: ExperimentConfig, rng) -> HarmonicModelSpec:
    h = cfg.num_harmonics
    return HarmonicModelSpec.from_hz(cfg.f0_hz, cfg.fs, h, phases=rng.uniform(-np.pi, np.pi, h),
                                     amp_process=cfg.amp_process())


def averaged_scd(generate, plan: AcpPlan, realizations: int, mode: str = "complex"):
    """Single-realization map and the average over ``realizations`` draws.

    ``mode='complex'`` averages complex estimates (then takes magnitudes for
    display); ``'magnitude'`` averages magnitudes.
    """
    total = None
    single = None
    for _ in range(realizations):
        s = generate()
        v = plan.cross_spectra([s], s)[0]
        if single is None:
            single = v
        v = v if mode == "complex" else np.abs(v)
        total = v.astype(complex) if total is None else total + v
    return single, total / realizations


def _lowpass(x: Signal, cutoff_hz: float) -> Signal:
    sos = butter(4, cutoff_hz, fs=x.sample_rate_hz, output="sos")
    return x.with_samples(sosfiltfilt(sos, x.real))


def run_scd_maps(cfg: ExperimentConfig) -> dict:
    """Cyclic spectra of the random-phase and random-amplitude harmonic models.

    Returns a dict with the grid, a ``maps`` mapping ``(signal, mode) ->
    matrix`` and per-signal diagnostics.
    """
    p = cfg.stft_params()
    grid = scd_grid(cfg, p)
    plan = AcpPlan(cfg.n_samples, p, grid)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    spec = _model_spec(cfg, rng)
    fs, n = cfg.fs, cfg.n_samples

    maps = {}
    gens = {
        "s_ph": lambda: gen_wss_harmonic(spec, n, rng, fs),
        "s_amp": lambda: gen_cs_harmonic(spec, n, rng, fs),
    }
    for name, gen in gens.items():
        single, avg = averaged_scd(gen, plan, cfg.realizations, cfg.scd_average)
        maps[(name, "single")] = single
        maps[(name, "average")] = avg
    if cfg.wav_path:
        real = read_wav(cfg.wav_path)
        if real.sample_rate_hz != fs:
            raise ConfigError(f"WAV rate {real.sample_rate_hz} Hz differs from configured {fs} Hz")
        seg = np.zeros(n)
        seg[:min(n, len(real))] = real.real[:n]
        s_real = Signal(seg, fs)
        maps[("s_real", "single")] = plan.cross_spectra([s_real], s_real)[0]

    omega0 = 2 * np.pi * cfg.f0_hz / fs
    diagnostics = {}
    for (name, mode), values in maps.items():
        sup = support_entries(values, grid)
        alphas = grid.alphas[sup[:, 0]] if sup.size else np.zeros(0)
        dist = np.abs(alphas - omega0 * np.round(alphas / omega0))
        diagnostics[f"{name}/{mode}"] = {
            "off_zero_ratio_db": off_zero_ratio_db(values, grid),
            "support_size": int(sup.shape[0]),
            "support_max_offset_cycles": float(dist.max() / grid.delta_alpha) if dist.size else 0.0,
        }
    for name in gens:
        diagnostics[f"{name}/cosine_single_vs_average"] = map_cosine_similarity(
            maps[(name, "single")], maps[(name, "average")])
    return {"grid": grid, "params": p, "maps": maps, "diagnostics": diagnostics}


def write_scd_maps(cfg: ExperimentConfig, res: dict, out) -> None:
    out = Path(out)
    grid, p, h = res["grid"], res["params"], cfg.config_hash()
    freqs = np.arange(p.dft_len // 2 + 1) * cfg.fs / p.dft_len
    alphas_hz = grid.alphas * cfg.fs / (2 * np.pi)

    def rows():
        for (name, mode), values in res["maps"].items():
            vals = values[:, :freqs.size]
            for i, a in enumerate(alphas_hz):
                for j, f in enumerate(freqs):
                    v = vals[i, j]
                    yield h, name, mode, a, f, v.real, v.imag

    write_csv(out / "results.csv",
              ("config_hash", "signal", "mode", "alpha_hz", "freq_hz", "re", "im"), rows())
    write_json({"config_hash": h, "config": cfg.to_dict(), "diagnostics": res["diagnostics"],
                "delta_alpha_hz": grid.delta_alpha * cfg.fs / (2 * np.pi),
                "num_alphas": len(grid)}, out / "results.json")


# --------------------------------------------------------------------------
# waveforms

def run_waveforms(cfg: ExperimentConfig) -> dict:
    """Concatenated random-phase frames, one random-amplitude record, optional recording."""
    fs, k, m = cfg.fs, cfg.waveform_frame_len, cfg.waveform_frames
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    spec = _model_spec(cfg, rng)
    frames = [gen_wss_harmonic(spec, k, rng, fs).real for _ in range(m)]
    out = {
        "s_ph": np.concatenate(frames),
        "s_amp": gen_cs_harmonic(spec, k * m, rng, fs).real,
        "boundaries": np.arange(1, m) * k,
    }
    if cfg.wav_path:
        real = read_wav(cfg.wav_path)
        out["s_real"] = _lowpass(real, cfg.lowpass_hz).real[:k * m]
    return out


def write_waveforms(cfg: ExperimentConfig, res: dict, out) -> None:
    out = Path(out)
    h = cfg.config_hash()

    def rows():
        for label in ("s_real", "s_ph", "s_amp"):
            if label not in res:
                continue
            for i, v in enumerate(res[label]):
                yield i / cfg.fs, v, label, h

    write_csv(out / "results.csv", ("time_s", "value", "label", "config_hash"), rows())
    write_json({"config_hash": h, "config": cfg.to_dict(),
                "frame_boundaries": res["boundaries"],
                "labels": [lab for lab in ("s_real", "s_ph", "s_amp") if lab in res]},
               out / "results.json")


# --------------------------------------------------------------------------
# output directories

def prepare_out_dir(out, cfg: ExperimentConfig, force: bool = False) -> Path:
    """Create ``out``; refuse to reuse it for a different config unless forced."""
    out = Path(out)
    meta = out / "meta.json"
    if meta.exists() and not force:
        with open(meta, encoding="utf-8") as fh:
            old = json.load(fh).get("config_hash")
        if old != cfg.config_hash():
            raise ConfigError(f"{out} holds results for config {old}; use --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_meta(out, cfg: ExperimentConfig, started: float, finished: float) -> None:
    write_json({
        "config_hash": cfg.config_hash(),
        "config": cfg.to_dict(),
        "package_version": __version__,
        "numpy_version": np.__version__,
        "seed_rule": "trial t uses SeedSequence(seed, spawn_key=(t,)).spawn(4): "
                     "excitation, system, input noise, output noise",
        "started_unix": started,
        "finished_unix": finished,
    }, Path(out) / "meta.json")
