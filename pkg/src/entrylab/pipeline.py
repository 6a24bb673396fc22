"""Training-data pipeline and the iterative retraining loop.

Builds network samples from closed-loop trajectories (measurement sequences
plus pseudodensity-profile targets), computes the nested-average z-score
normalization statistics, persists datasets, and runs the outer curriculum
loop that regenerates data with the latest network in the guidance loop until
the terminal range-to-go statistics stabilize.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import atmos
from .atmos import (
    AtmoSample,
    AtmosphereProfile,
    ExponentialModel,
    GasModel,
    PSEUDO_GRID_KM,
    PseudodensityProfile,
    SurrogateConfig,
)
from .dynamics import PlanetModel, VehicleParams
from .estimators import (
    FEATURE_NAMES,  # noqa: F401  (module surface)
    N_FEATURES,
    NoiseSpec,
    inject_noise,
    make_estimator,
    stagnation_pressure_feature,
)
from .neural.lstm import NormStats
from .sim import Mission, TrajectoryResult, simulate_entry

# re-exported measurement-model op (defined next to the Measurement type)
__all__ = [
    "FEATURE_NAMES",
    "stagnation_pressure_feature",
    "TrajectorySample",
    "Dataset",
    "extract_features",
    "interpolate_targets",
    "compute_norm_stats",
    "normalize_features",
    "denormalize_features",
    "normalize_targets",
    "denormalize_targets",
    "generate_dataset",
    "save_dataset",
    "load_dataset",
    "CurriculumConfig",
    "CurriculumState",
    "CurriculumDiverged",
    "curriculum_loop",
]


@dataclass(frozen=True)
class TrajectorySample:
    """One network training sample with provenance."""

    features: np.ndarray  # (N, 10) measurement vectors, activation onward
    times: np.ndarray  # (N,) seconds
    target_eta: np.ndarray  # (39,) pseudodensity of the truth profile
    sample: AtmoSample
    s_f_rad: float
    terminal_altitude_km: float

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[1] != N_FEATURES:
            raise ValueError("features must be (N, 10)")
        if self.features.shape[0] == 0:
            raise ValueError("empty feature sequence")
        if np.any(np.diff(self.times) <= 0.0):
            raise ValueError("timestamps must be strictly increasing")


def extract_features(log_rows, profile, gas: GasModel,
                     activation_load: float = 1.47) -> np.ndarray:
    """Rebuild the measurement matrix from a (noiseless) trajectory log.

    Rows follow sim.LOG_COLUMNS; output starts at the first guidance-active
    cycle. The stagnation-pressure feature is recomputed from the profile.
    """
    feats = []
    for row in log_rows:
        if isinstance(row, dict):
            vals = [row[k] for k in ("t", "r", "theta", "phi", "V", "gamma",
                                     "psi", "h", "a_x", "a_y", "a_z")]
        else:
            vals = list(row[:11])
        t, r, theta, phi, v, gamma, psi, h, ax, ay, az = vals
        load = math.sqrt(ax * ax + ay * ay + az * az)
        if load < activation_load:
            continue
        if isinstance(profile, AtmosphereProfile):
            rho = float(atmos.density_at(profile, h))
        else:
            rho = profile.surface_density * math.exp(-h / profile.scale_height)
        p_static = rho * gas.specific_gas_constant * gas.reference_temperature
        p02 = stagnation_pressure_feature(v, p_static, gas)
        feats.append([r, theta, phi, v, gamma, psi, ax, ay, az, p02])
    return np.array(feats) if feats else np.empty((0, N_FEATURES))


def interpolate_targets(profile: AtmosphereProfile,
                        terminal_altitude_km: float) -> PseudodensityProfile:
    """Pseudodensity targets on the prediction grid.

    Nodes below the terminal altitude were never flown through; they are
    filled by linear extrapolation (in eta vs altitude) from the two lowest
    flown-through nodes.
    """
    eta = np.sqrt(-np.log10(atmos.density_at(profile, PSEUDO_GRID_KM)))
    flown = PSEUDO_GRID_KM >= terminal_altitude_km
    n_flown = int(np.count_nonzero(flown))
    if n_flown < PSEUDO_GRID_KM.size and n_flown >= 2:
        i0 = PSEUDO_GRID_KM.size - n_flown  # first flown node index
        h0, h1 = PSEUDO_GRID_KM[i0], PSEUDO_GRID_KM[i0 + 1]
        e0, e1 = eta[i0], eta[i0 + 1]
        slope = (e1 - e0) / (h1 - h0)
        below = ~flown
        eta[below] = e0 + slope * (PSEUDO_GRID_KM[below] - h0)
    return PseudodensityProfile(np.maximum(eta, 0.0))


def compute_norm_stats(samples: list[TrajectorySample],
                       eps: float = 1e-12) -> NormStats:
    """Nested-average z-score statistics.

    Feature means/stds weight every sample equally (1/K outer) and every
    time step within a sample equally (1/N inner); target statistics average
    across samples only. Zero spreads are guarded to eps with a warning.
    """
    if not samples:
        raise ValueError("empty dataset")
    k = len(samples)
    f_mean = np.zeros(N_FEATURES)
    for s in samples:
        f_mean += s.features.mean(axis=0)
    f_mean /= k
    f_var = np.zeros(N_FEATURES)
    for s in samples:
        f_var += ((s.features - f_mean) ** 2).mean(axis=0)
    f_var /= k

    targets = np.stack([s.target_eta for s in samples])
    t_mean = targets.mean(axis=0)
    t_var = ((targets - t_mean) ** 2).mean(axis=0)

    f_std = np.sqrt(f_var)
    t_std = np.sqrt(t_var)
    if np.any(f_std <= eps) or np.any(t_std <= eps):
        import warnings

        warnings.warn("degenerate spread in normalization statistics; "
                      f"guarding at {eps}")
    return NormStats(f_mean, np.maximum(f_std, eps),
                     t_mean, np.maximum(t_std, eps))


def normalize_features(stats: NormStats, features: np.ndarray) -> np.ndarray:
    return (features - stats.feature_mean) / stats.feature_std


def denormalize_features(stats: NormStats, normed: np.ndarray) -> np.ndarray:
    return normed * stats.feature_std + stats.feature_mean


def normalize_targets(stats: NormStats, eta: np.ndarray) -> np.ndarray:
    return (eta - stats.target_mean) / stats.target_std


def denormalize_targets(stats: NormStats, normed: np.ndarray) -> np.ndarray:
    return normed * stats.target_std + stats.target_mean


@dataclass
class Dataset:
    samples: list
    master_seed: int
    estimator_kind: str
    failures: int = 0
    stats: NormStats | None = None

    def __len__(self):
        return len(self.samples)

    def ensure_stats(self) -> NormStats:
        if self.stats is None:
            self.stats = compute_norm_stats(self.samples)
        return self.stats

    def network_samples(self, stats: NormStats | None = None) -> list:
        """(X_normalized, y_normalized) pairs for the trainer."""
        stats = stats or self.ensure_stats()
        return [(normalize_features(stats, s.features),
                 normalize_targets(stats, s.target_eta)) for s in self.samples]

    def split(self, train_fraction: float = 0.8) -> tuple["Dataset", "Dataset"]:
        """Deterministic head/tail split (cases are i.i.d. by construction)."""
        n_train = max(1, int(round(len(self.samples) * train_fraction)))
        head = Dataset(self.samples[:n_train], self.master_seed,
                       self.estimator_kind, self.failures, self.stats)
        tail = Dataset(self.samples[n_train:], self.master_seed,
                       self.estimator_kind, self.failures, self.stats)
        return head, tail

    def with_noisy_features(self, spec: NoiseSpec, seed: int,
                            g0: float) -> "Dataset":
        """Copy with i.i.d. measurement noise injected into every sequence."""
        rng = np.random.default_rng(seed)
        noisy = []
        for s in self.samples:
            feats = inject_noise(s.features, spec, rng, g0)
            noisy.append(TrajectorySample(feats, s.times, s.target_eta,
                                          s.sample, s.s_f_rad,
                                          s.terminal_altitude_km))
        return Dataset(noisy, self.master_seed, self.estimator_kind + "+noise",
                       self.failures, None)


def draw_atmo_sample(rng: np.random.Generator,
                     perturbation_scale: float = 2.0) -> AtmoSample:
    """One draw from the surrogate-atmosphere dispersion distributions."""
    return AtmoSample(
        dust_level=rng.uniform(0.1, 3.0),
        wave_offset=rng.uniform(1.5, 2.5),
        seed=int(rng.integers(1, 9 * 10**8, endpoint=True)),
        perturbation_scale=perturbation_scale)


def case_seed_sequences(master_seed: int, count: int) -> list:
    return np.random.SeedSequence(master_seed).spawn(count)


def run_case(mission: Mission, estimator_kind: str, atmo_sample: AtmoSample,
             *, vehicle: VehicleParams, planet: PlanetModel, gas: GasModel,
             surrogate: SurrogateConfig = SurrogateConfig(),
             model=None, noise: NoiseSpec | None = None,
             noise_seed: int | None = None,
             exp_model: ExponentialModel | None = None,
             record_log: bool = False) -> tuple[TrajectoryResult, AtmosphereProfile]:
    """Simulate one dispersed case with a freshly built estimator."""
    profile = atmos.generate_profile(atmo_sample, gas, surrogate)
    estimator = make_estimator(estimator_kind, exponential_model=exp_model,
                               vehicle=vehicle, planet=planet, model=model)
    noise_rng = np.random.default_rng(noise_seed) if noise is not None else None
    result = simulate_entry(mission, estimator, profile, vehicle=vehicle,
                            planet=planet, gas=gas, noise=noise,
                            noise_rng=noise_rng, record_log=record_log)
    return result, profile


def parallel_map(fn, items: list, jobs: int = 1) -> list:
    """Order-preserving map, optionally over a process pool.

    Per-item work must be a module-level function of one picklable argument;
    results are identical for any jobs value because each item carries its
    own seed material.
    """
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    import multiprocessing as mp

    ctx = mp.get_context("fork")
    chunk = max(1, len(items) // (4 * jobs))
    with ctx.Pool(jobs) as pool:
        return pool.map(fn, items, chunksize=chunk)


def _dataset_case(args) -> tuple:
    (seq, mission, estimator_kind, vehicle, planet, gas, surrogate,
     perturbation_scale, model, noise) = args
    atmo_rng = np.random.default_rng(seq.spawn(1)[0])
    atmo_sample = draw_atmo_sample(atmo_rng, perturbation_scale)
    noise_seed = int(atmo_rng.integers(2**63)) if noise is not None else None
    result, profile = run_case(
        mission, estimator_kind, atmo_sample, vehicle=vehicle,
        planet=planet, gas=gas, surrogate=surrogate, model=model,
        noise=noise, noise_seed=noise_seed)
    if result.failed or not result.activated or result.features.shape[0] == 0:
        return None
    h_f = (result.terminal.r - planet.radius) / 1000.0
    target = interpolate_targets(profile, h_f)
    return TrajectorySample(result.features, result.feature_times, target.eta,
                            atmo_sample, result.s_f_rad, h_f)


def generate_dataset(count: int, estimator_kind: str, master_seed: int, *,
                     mission: Mission = Mission(),
                     vehicle: VehicleParams = VehicleParams(),
                     planet: PlanetModel = PlanetModel(),
                     gas: GasModel = GasModel(),
                     surrogate: SurrogateConfig = SurrogateConfig(),
                     perturbation_scale: float = 2.0,
                     model=None, noise: NoiseSpec | None = None,
                     jobs: int = 1) -> Dataset:
    """Fly `count` dispersed closed-loop cases and package network samples.

    Per-case randomness derives from the master seed through spawned seed
    sequences, so regeneration is reproducible and independent of ordering
    and parallelism. Cases whose trajectory fails (or never activates
    guidance) are excluded and counted.
    """
    seqs = case_seed_sequences(master_seed, count)
    args = [(seq, mission, estimator_kind, vehicle, planet, gas, surrogate,
             perturbation_scale, model, noise) for seq in seqs]
    out = parallel_map(_dataset_case, args, jobs)
    samples = [s for s in out if s is not None]
    return Dataset(samples, master_seed, estimator_kind,
                   failures=count - len(samples))


_RECORD_MAGIC = b"ELTR"


def save_dataset(directory, dataset: Dataset, config_hash: str = "") -> None:
    """Manifest JSON + one length-prefixed binary record per trajectory +
    normalization statistics JSON."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, s in enumerate(dataset.samples):
        name = f"traj_{i:05d}.bin"
        n = s.features.shape[0]
        with open(directory / name, "wb") as f:
            f.write(_RECORD_MAGIC)
            f.write(struct.pack("<IQ", 1, n))
            f.write(s.features.astype("<f8").tobytes())
            f.write(s.times.astype("<f8").tobytes())
            f.write(s.target_eta.astype("<f8").tobytes())
            f.write(struct.pack("<dd", s.s_f_rad, s.terminal_altitude_km))
        entries.append({
            "file": name,
            "steps": int(n),
            "dust_level": s.sample.dust_level,
            "wave_offset": s.sample.wave_offset,
            "seed": s.sample.seed,
            "perturbation_scale": s.sample.perturbation_scale,
        })
    manifest = {
        "format": "entrylab-dataset-v1",
        "master_seed": dataset.master_seed,
        "estimator": dataset.estimator_kind,
        "count": len(dataset.samples),
        "failures": dataset.failures,
        "config_hash": config_hash,
        "trajectories": entries,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))
    if dataset.stats is not None:
        stats = dataset.stats
        (directory / "norm_stats.json").write_text(json.dumps({
            "feature_mean": stats.feature_mean.tolist(),
            "feature_std": stats.feature_std.tolist(),
            "target_mean": stats.target_mean.tolist(),
            "target_std": stats.target_std.tolist(),
        }, indent=2))


def dataset_manifest_hash(directory) -> str:
    payload = (Path(directory) / "manifest.json").read_bytes()
    return hashlib.sha256(payload).hexdigest()


def load_dataset(directory) -> Dataset:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    if manifest.get("format") != "entrylab-dataset-v1":
        raise ValueError(f"unrecognized dataset directory: {directory}")
    samples = []
    for entry in manifest["trajectories"]:
        with open(directory / entry["file"], "rb") as f:
            if f.read(4) != _RECORD_MAGIC:
                raise ValueError(f"corrupt record {entry['file']}")
            _ver, n = struct.unpack("<IQ", f.read(12))
            feats = np.frombuffer(f.read(8 * n * N_FEATURES), dtype="<f8")
            feats = feats.reshape(n, N_FEATURES).copy()
            times = np.frombuffer(f.read(8 * n), dtype="<f8").copy()
            eta = np.frombuffer(f.read(8 * PSEUDO_GRID_KM.size), dtype="<f8").copy()
            s_f_rad, h_f = struct.unpack("<dd", f.read(16))
        samples.append(TrajectorySample(
            feats, times, eta,
            AtmoSample(entry["dust_level"], entry["wave_offset"],
                       entry["seed"], entry["perturbation_scale"]),
            s_f_rad, h_f))
    ds = Dataset(samples, manifest["master_seed"], manifest["estimator"],
                 manifest["failures"])
    stats_path = directory / "norm_stats.json"
    if stats_path.exists():
        raw = json.loads(stats_path.read_text())
        ds.stats = NormStats(*(np.array(raw[k]) for k in
                               ("feature_mean", "feature_std",
                                "target_mean", "target_std")))
    return ds


@dataclass(frozen=True)
class CurriculumConfig:
    tolerance: float = 0.03  # relative change in both mean and std
    max_iterations: int = 15
    divergence_patience: int = 3  # consecutive mean increases before abort


@dataclass
class CurriculumState:
    iteration: int
    mu_km: float
    sigma_km: float
    converged: bool


class CurriculumDiverged(RuntimeError):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


def curriculum_loop(initial_dataset: Dataset, cfg: CurriculumConfig,
                    train_fn, stats_fn, regen_fn, log=None):
    """Iterative retraining until terminal range-to-go statistics stabilize.

    train_fn(model_or_None, dataset) -> model      (one training period)
    stats_fn(model) -> (mu_km, sigma_km)           (dispersion campaign)
    regen_fn(model, iteration) -> Dataset          (data with model in loop)

    Convergence: both |d mu| and |d sigma| relative changes fall at or below
    the tolerance. Divergence guard: the mean increasing on
    `divergence_patience` consecutive iterations aborts with history.
    """
    dataset = initial_dataset
    model = None
    history: list[CurriculumState] = []
    mu_prev = sigma_prev = None
    increases = 0
    for iteration in range(1, cfg.max_iterations + 1):
        model = train_fn(model, dataset)
        mu, sigma = stats_fn(model)
        converged = False
        if mu_prev is not None:
            dmu = abs(mu - mu_prev) / abs(mu_prev) if mu_prev != 0 else 0.0
            dsig = abs(sigma - sigma_prev) / abs(sigma_prev) if sigma_prev != 0 else 0.0
            converged = dmu <= cfg.tolerance and dsig <= cfg.tolerance
            increases = increases + 1 if mu > mu_prev else 0
        history.append(CurriculumState(iteration, mu, sigma, converged))
        if log is not None:
            log(history[-1])
        if converged:
            break
        if increases >= cfg.divergence_patience:
            raise CurriculumDiverged(
                f"mean |s_f| grew {increases} consecutive iterations", history)
        mu_prev, sigma_prev = mu, sigma
        if iteration < cfg.max_iterations:
            dataset = regen_fn(model, iteration)
    return model, history


def save_curriculum_history(path, history: list[CurriculumState]) -> None:
    import csv

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["iteration", "mu_km", "sigma_km", "converged"])
        for st in history:
            writer.writerow([st.iteration, repr(st.mu_km), repr(st.sigma_km),
                             st.converged])
