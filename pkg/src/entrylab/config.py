"""Run configuration: one human-editable TOML file with mission, vehicle,
guidance, atmosphere, training, and campaign blocks plus a seed manifest.

Defaults reproduce the reference setup at paper scale; `--scale desk`
switches to the CI-sized profile used by the acceptance suite. Unknown keys
are rejected.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .atmos import ExponentialModel, GasModel, SurrogateConfig
from .dynamics import PlanetModel, VehicleParams
from .estimators import NoiseSpec
from .neural.train import TrainConfig
from .pipeline import CurriculumConfig
from .sim import Mission, make_guidance_config

SCALES = ("desk", "paper")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GuidanceSettings:
    """Guidance block (angles in degrees in the file; converted on build)."""

    sigma_f_deg: float = 70.0
    epsilon: float = 1e-6
    frequency_hz: float = 1.0
    activation_load: float = 1.47
    deadband0_deg: float = 2.0
    deadbandf_deg: float = 1.5
    predictor_steps: int = 200
    fd_delta_deg: float = 1.0
    max_halvings: int = 20
    max_iterations: int = 20
    initial_sigma0_deg: float = 45.0


@dataclass(frozen=True)
class AtmosphereSettings:
    gas: GasModel = GasModel()
    surrogate: SurrogateConfig = SurrogateConfig()
    nominal: ExponentialModel = ExponentialModel()
    dust_min: float = 0.1
    dust_max: float = 3.0
    wave_min: float = 1.5
    wave_max: float = 2.5
    seed_max: int = 9 * 10**8
    perturbation_scale: float = 2.0


@dataclass(frozen=True)
class TrainingSettings:
    hidden_size: int = 256
    minibatch: int = 128
    epochs: int = 500
    dataset_size: int = 5000
    test_size: int = 1000
    validation_fraction: float = 0.2
    dropout_rate: float = 0.2
    hidden_activation: str = "sigmoid"
    learning_rate0: float = 1e-3
    decay: float = 1e-3
    grad_norm_cap: float = 1.0
    seed: int = 7
    noisy_retrain_seed: int = 8

    def train_config(self, epochs: int | None = None) -> TrainConfig:
        return TrainConfig(epochs=epochs or self.epochs,
                           minibatch=self.minibatch,
                           learning_rate0=self.learning_rate0,
                           decay=self.decay,
                           grad_norm_cap=self.grad_norm_cap,
                           seed=self.seed)


@dataclass(frozen=True)
class CampaignSettings:
    count: int = 5000
    stats_count: int = 5000  # curriculum range-to-go statistics campaigns
    noise: bool = False
    curriculum_tolerance: float = 0.03
    curriculum_max_iterations: int = 15
    curriculum_divergence_patience: int = 3


@dataclass(frozen=True)
class SeedManifest:
    dataset: int = 1000
    test_set: int = 2000
    campaign: int = 5000
    curriculum_stats: int = 6000
    noise_retrain: int = 777


@dataclass(frozen=True)
class RunConfig:
    scale: str = "paper"
    mission: Mission = Mission()
    vehicle: VehicleParams = VehicleParams()
    planet: PlanetModel = PlanetModel()
    guidance: GuidanceSettings = GuidanceSettings()
    atmosphere: AtmosphereSettings = AtmosphereSettings()
    training: TrainingSettings = TrainingSettings()
    campaign: CampaignSettings = CampaignSettings()
    seeds: SeedManifest = SeedManifest()

    def guidance_config(self):
        g = self.guidance
        return make_guidance_config(
            self.mission, self.planet,
            sigma_f=math.radians(g.sigma_f_deg),
            epsilon=g.epsilon,
            frequency_hz=g.frequency_hz,
            activation_load=g.activation_load,
            deadband_width0=math.radians(g.deadband0_deg),
            deadband_widthf=math.radians(g.deadbandf_deg),
            predictor_steps=g.predictor_steps,
            fd_delta=math.radians(g.fd_delta_deg),
            max_halvings=g.max_halvings,
            max_iterations=g.max_iterations,
            initial_sigma0=math.radians(g.initial_sigma0_deg))

    def noise_spec(self) -> NoiseSpec:
        return NoiseSpec()

    def curriculum_config(self) -> CurriculumConfig:
        c = self.campaign
        return CurriculumConfig(tolerance=c.curriculum_tolerance,
                                max_iterations=c.curriculum_max_iterations,
                                divergence_patience=c.curriculum_divergence_patience)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        payload = json.dumps(self.as_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()


_DESK_TRAINING = dict(hidden_size=32, minibatch=16, epochs=50,
                      dataset_size=200, test_size=100)
_DESK_CAMPAIGN = dict(count=200, stats_count=100, curriculum_max_iterations=3)


def default_config(scale: str = "paper") -> RunConfig:
    if scale not in SCALES:
        raise ConfigError(f"unknown scale {scale!r}; expected one of {SCALES}")
    cfg = RunConfig(scale=scale)
    if scale == "desk":
        cfg = dataclasses.replace(
            cfg,
            training=dataclasses.replace(cfg.training, **_DESK_TRAINING),
            campaign=dataclasses.replace(cfg.campaign, **_DESK_CAMPAIGN))
    return cfg


def _build_dataclass(cls, data: dict, path: str):
    field_map = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in field_map:
            raise ConfigError(f"unknown key {path}.{key}")
        ftype = field_map[key].type
        nested = {
            "GasModel": GasModel, "SurrogateConfig": SurrogateConfig,
            "ExponentialModel": ExponentialModel,
        }.get(str(ftype).split(".")[-1].strip("'\" "))
        if isinstance(value, dict):
            if nested is None:
                raise ConfigError(f"unexpected table at {path}.{key}")
            kwargs[key] = _build_dataclass(nested, value, f"{path}.{key}")
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid block {path}: {exc}") from exc


_BLOCKS = {
    "mission": Mission,
    "vehicle": VehicleParams,
    "planet": PlanetModel,
    "guidance": GuidanceSettings,
    "atmosphere": AtmosphereSettings,
    "training": TrainingSettings,
    "campaign": CampaignSettings,
    "seeds": SeedManifest,
}


def load_config(path_or_default: str, scale: str | None = None,
                seed_override: int | None = None) -> RunConfig:
    """Build a RunConfig from a TOML file, or the builtin defaults when
    given the literal string 'default'."""
    if path_or_default == "default":
        cfg = default_config(scale or "paper")
    else:
        path = Path(path_or_default)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = tomllib.loads(path.read_text())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
        file_scale = raw.pop("scale", None)
        use_scale = scale or file_scale or "paper"
        cfg = default_config(use_scale)
        updates = {}
        for block, data in raw.items():
            if block not in _BLOCKS:
                raise ConfigError(f"unknown block [{block}]")
            if not isinstance(data, dict):
                raise ConfigError(f"block [{block}] must be a table")
            base = getattr(cfg, block)
            merged = dataclasses.asdict(base)
            merged.update(data)
            updates[block] = _build_dataclass(_BLOCKS[block], merged, block)
        cfg = dataclasses.replace(cfg, **updates)
    if scale is not None and cfg.scale != scale:
        cfg = dataclasses.replace(cfg, scale=scale)
    if seed_override is not None:
        cfg = dataclasses.replace(
            cfg, seeds=dataclasses.replace(cfg.seeds, dataset=seed_override,
                                           campaign=seed_override + 1,
                                           test_set=seed_override + 2))
    return cfg
