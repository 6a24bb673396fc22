"""Mars atmosphere models.

Nominal exponential density law, a seedable stochastic surrogate generator
(dust / wave / random-perturbation parameterization), an isothermal CO2 gas
model, and the pseudodensity transform used as the network target.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# Fixed prediction-altitude grid for pseudodensity targets: 4..80 km, 2 km step.
PSEUDO_GRID_KM = np.arange(4.0, 80.0 + 1.0, 2.0)
PSEUDO_GRID_KM.setflags(write=False)
N_PSEUDO_NODES = PSEUDO_GRID_KM.size  # 39


@dataclass(frozen=True)
class ExponentialModel:
    """Single-scale-height exponential density law rho0 * exp(-h/H)."""

    surface_density: float = 2.63e-2  # kg/m^3
    scale_height: float = 10.15  # km

    def __post_init__(self):
        if self.surface_density <= 0.0 or self.scale_height <= 0.0:
            raise ValueError("surface_density and scale_height must be positive")


@dataclass(frozen=True)
class AtmoSample:
    """Draw of the stochastic atmosphere settings (one truth profile)."""

    dust_level: float
    wave_offset: float
    seed: int
    perturbation_scale: float = 2.0

    def __post_init__(self):
        if not 0.1 <= self.dust_level <= 3.0:
            raise ValueError(f"dust_level {self.dust_level} outside [0.1, 3.0]")
        if not 1.5 <= self.wave_offset <= 2.5:
            raise ValueError(f"wave_offset {self.wave_offset} outside [1.5, 2.5]")
        if not 1 <= self.seed <= 9 * 10**8:
            raise ValueError(f"seed {self.seed} outside [1, 9e8]")
        if not 0.0 <= self.perturbation_scale <= 2.0:
            raise ValueError(
                f"perturbation_scale {self.perturbation_scale} outside [0, 2]"
            )


@dataclass(frozen=True)
class GasModel:
    """Isothermal ideal-gas properties of the CO2 atmosphere."""

    ratio_of_specific_heats: float = 1.28
    specific_gas_constant: float = 188.92  # J/(kg K)
    reference_temperature: float = 210.0  # K

    def __post_init__(self):
        if self.ratio_of_specific_heats <= 1.0:
            raise ValueError("ratio_of_specific_heats must exceed 1")
        if self.specific_gas_constant <= 0.0 or self.reference_temperature <= 0.0:
            raise ValueError("gas constant and temperature must be positive")


@dataclass(frozen=True)
class SurrogateConfig:
    """Tuning knobs of the stochastic profile generator.

    The generator perturbs log10-density of a dust-modified exponential mean
    profile with a smooth sinusoid plus a first-order Gauss-Markov process in
    altitude whose standard deviation grows linearly with altitude.
    """

    top_altitude_km: float = 130.0
    grid_step_km: float = 0.5
    dust_reference: float = 1.55
    dust_scale_height_coeff: float = 0.03
    # dominant dispersion component: a near-constant multiplicative density
    # bias (dust loading), the part a sensed/expected-ratio filter can absorb
    dust_surface_density_coeff: float = 0.20
    wave_amplitude_dex: float = 0.02
    wave_period_km: float = 60.0
    correlation_length_km: float = 20.0
    sigma_surface_dex: float = 0.005
    sigma_top_dex: float = 0.05
    density_cap: float = 0.9  # kg/m^3, keeps -log10(rho) > 0


@dataclass(frozen=True)
class AtmosphereProfile:
    """Truth atmosphere tabulated on an ascending altitude grid."""

    altitude_km: np.ndarray
    density: np.ndarray  # kg/m^3
    temperature: np.ndarray  # K
    pressure: np.ndarray  # Pa

    def __post_init__(self):
        for name in ("altitude_km", "density", "temperature", "pressure"):
            arr = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, arr)
            arr.setflags(write=False)
        if self.altitude_km.ndim != 1 or self.altitude_km.size < 2:
            raise ValueError("altitude grid must be a 1-D array with >= 2 nodes")
        if np.any(np.diff(self.altitude_km) <= 0.0):
            raise ValueError("altitude grid must be strictly ascending")
        if self.density.shape != self.altitude_km.shape:
            raise ValueError("density shape mismatch")
        if np.any(self.density <= 0.0):
            raise ValueError("density must be strictly positive")
        if np.any(self.density >= 1.0):
            raise ValueError("density must stay below 1 kg/m^3")
        if np.any(~np.isfinite(self.pressure)) or np.any(self.pressure <= 0.0):
            raise ValueError("pressure must be finite and positive")
        if np.any(self.temperature <= 0.0):
            raise ValueError("temperature must be positive")
        # ideal-gas consistency: the implied gas constant P/(rho T) must be
        # the same at every node
        r_implied = self.pressure / (self.density * self.temperature)
        if np.max(r_implied) - np.min(r_implied) > 1e-9 * np.max(r_implied):
            raise ValueError("pressure inconsistent with rho * R * T")

    @property
    def log10_density(self) -> np.ndarray:
        return np.log10(self.density)


@dataclass(frozen=True)
class PseudodensityProfile:
    """eta(h) = sqrt(-log10 rho(h)) on the fixed 39-node prediction grid."""

    eta: np.ndarray
    altitude_km: np.ndarray = field(default_factory=lambda: PSEUDO_GRID_KM)

    def __post_init__(self):
        eta = np.asarray(self.eta, dtype=float)
        object.__setattr__(self, "eta", eta)
        eta.setflags(write=False)
        if self.altitude_km.shape != PSEUDO_GRID_KM.shape or not np.array_equal(
            self.altitude_km, PSEUDO_GRID_KM
        ):
            raise ValueError("pseudodensity grid must be the fixed 4..80 km grid")
        if eta.shape != PSEUDO_GRID_KM.shape:
            raise ValueError("eta shape mismatch")
        if np.any(eta < 0.0) or np.any(~np.isfinite(eta)):
            raise ValueError("eta must be finite and non-negative")


def exp_density(model: ExponentialModel, h_km):
    """Density of the exponential law at altitude h (km). h must be >= 0."""
    h = np.asarray(h_km, dtype=float)
    if np.any(h < 0.0):
        raise ValueError("altitude must be non-negative")
    out = model.surface_density * np.exp(-h / model.scale_height)
    return float(out) if np.isscalar(h_km) or h.ndim == 0 else out


def mean_profile_model(sample: AtmoSample, cfg: SurrogateConfig = SurrogateConfig()) -> ExponentialModel:
    """Dust-modified exponential law forming the generator's mean profile."""
    d = sample.dust_level - cfg.dust_reference
    return ExponentialModel(
        surface_density=2.63e-2 * (1.0 + cfg.dust_surface_density_coeff * d),
        scale_height=10.15 * (1.0 + cfg.dust_scale_height_coeff * d),
    )


def _perturbation_sigma_dex(h_km: np.ndarray, sample: AtmoSample, cfg: SurrogateConfig) -> np.ndarray:
    frac = h_km / cfg.top_altitude_km
    base = cfg.sigma_surface_dex + (cfg.sigma_top_dex - cfg.sigma_surface_dex) * frac
    return base * (sample.perturbation_scale / 2.0)


def generate_profile(
    sample: AtmoSample,
    gas: GasModel = GasModel(),
    cfg: SurrogateConfig = SurrogateConfig(),
) -> AtmosphereProfile:
    """Sample one truth atmosphere. Deterministic for a fixed AtmoSample.

    log10 rho(h) = log10 mean(h) + wave bias + Gauss-Markov perturbation,
    where the perturbation is an altitude-correlated AR(1) sequence whose
    marginal standard deviation grows linearly with altitude and scales with
    sample.perturbation_scale.
    """
    n = int(round(cfg.top_altitude_km / cfg.grid_step_km)) + 1
    h = np.linspace(0.0, cfg.top_altitude_km, n)

    mean_model = mean_profile_model(sample, cfg)
    log_rho = np.log10(exp_density(mean_model, h))
    log_rho += (
        cfg.wave_amplitude_dex
        * sample.wave_offset
        * np.sin(2.0 * math.pi * h / cfg.wave_period_km)
    )

    sigma = _perturbation_sigma_dex(h, sample, cfg)
    rng = np.random.default_rng(sample.seed)
    z = rng.standard_normal(n)
    ar = np.zeros(n)
    phi = math.exp(-cfg.grid_step_km / cfg.correlation_length_km)
    ar[0] = sigma[0] * z[0]
    for i in range(1, n):
        # innovation variance chosen so the marginal std equals sigma[i]
        var = sigma[i] ** 2 - (phi * sigma[i - 1]) ** 2
        ar[i] = phi * ar[i - 1] + math.sqrt(max(var, 0.0)) * z[i]
    log_rho += ar

    density = np.minimum(10.0**log_rho, cfg.density_cap)
    temperature = np.full(n, gas.reference_temperature)
    pressure = density * gas.specific_gas_constant * temperature
    return AtmosphereProfile(h, density, temperature, pressure)


def profile_from_model(
    model: ExponentialModel,
    gas: GasModel = GasModel(),
    cfg: SurrogateConfig = SurrogateConfig(),
) -> AtmosphereProfile:
    """Tabulate a deterministic exponential law on the generator grid."""
    n = int(round(cfg.top_altitude_km / cfg.grid_step_km)) + 1
    h = np.linspace(0.0, cfg.top_altitude_km, n)
    density = exp_density(model, h)
    temperature = np.full(n, gas.reference_temperature)
    pressure = density * gas.specific_gas_constant * temperature
    return AtmosphereProfile(h, density, temperature, pressure)


def _interp_log_density(h_grid: np.ndarray, log_rho: np.ndarray, h):
    """Piecewise-linear in (h, log10 rho); end segments extend beyond the grid."""
    h = np.asarray(h, dtype=float)
    scalar = h.ndim == 0
    hq = np.atleast_1d(h)
    idx = np.searchsorted(h_grid, hq, side="right") - 1
    idx = np.clip(idx, 0, h_grid.size - 2)
    h0 = h_grid[idx]
    h1 = h_grid[idx + 1]
    w = (hq - h0) / (h1 - h0)
    out = log_rho[idx] * (1.0 - w) + log_rho[idx + 1] * w
    return float(out[0]) if scalar else out


def density_at(profile: AtmosphereProfile, h_km):
    """Log-linear interpolation of density; log-linear extrapolation outside."""
    out = 10.0 ** _interp_log_density(profile.altitude_km, profile.log10_density, h_km)
    return out


def to_pseudodensity(profile: AtmosphereProfile) -> PseudodensityProfile:
    """eta(h_j) = sqrt(-log10 rho(h_j)) on the fixed prediction grid."""
    rho = density_at(profile, PSEUDO_GRID_KM)
    if np.any(rho >= 1.0):
        raise ValueError("density must be below 1 kg/m^3 for the pseudodensity transform")
    return PseudodensityProfile(np.sqrt(-np.log10(rho)))


def from_pseudodensity(pseudo: PseudodensityProfile) -> np.ndarray:
    """Inverse transform: density rho(h_j) = 10**(-eta^2) on the grid."""
    eta = np.asarray(pseudo.eta, dtype=float)
    if np.any(eta < 0.0):
        raise ValueError("eta must be non-negative")
    return 10.0 ** (-(eta**2))


def pseudo_from_eta(eta: np.ndarray) -> PseudodensityProfile:
    """Wrap a raw eta vector (clipped at zero) as a PseudodensityProfile."""
    return PseudodensityProfile(np.maximum(np.asarray(eta, dtype=float), 0.0))


def speed_of_sound(gas: GasModel, h_km: float = 0.0) -> float:
    """a = sqrt(gamma R T); constant under the isothermal assumption."""
    del h_km
    return math.sqrt(
        gas.ratio_of_specific_heats
        * gas.specific_gas_constant
        * gas.reference_temperature
    )


def pressure_at(gas: GasModel, profile: AtmosphereProfile, h_km):
    """Static pressure rho(h) * R * T under the isothermal gas model."""
    return density_at(profile, h_km) * gas.specific_gas_constant * gas.reference_temperature


def save_profile(directory, profile: AtmosphereProfile, sample: AtmoSample | None = None,
                 gas: GasModel = GasModel()) -> None:
    """Write manifest.json + profile.csv (h_km, density, temperature, pressure)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": "entrylab-profile-v1",
        "sample": None
        if sample is None
        else {
            "dust_level": sample.dust_level,
            "wave_offset": sample.wave_offset,
            "seed": sample.seed,
            "perturbation_scale": sample.perturbation_scale,
        },
        "gas": {
            "ratio_of_specific_heats": gas.ratio_of_specific_heats,
            "specific_gas_constant": gas.specific_gas_constant,
            "reference_temperature": gas.reference_temperature,
        },
        "nodes": int(profile.altitude_km.size),
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))
    with open(directory / "profile.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["h_km", "density", "temperature", "pressure"])
        for row in zip(profile.altitude_km, profile.density, profile.temperature, profile.pressure):
            writer.writerow([repr(float(v)) for v in row])


def load_profile(directory) -> AtmosphereProfile:
    directory = Path(directory)
    cols = {"h_km": [], "density": [], "temperature": [], "pressure": []}
    with open(directory / "profile.csv", newline="") as f:
        for row in csv.DictReader(f):
            for key in cols:
                cols[key].append(float(row[key]))
    return AtmosphereProfile(
        np.array(cols["h_km"]),
        np.array(cols["density"]),
        np.array(cols["temperature"]),
        np.array(cols["pressure"]),
    )
