"""Monte Carlo campaigns comparing density estimators, sensor-noise
injection, and accuracy metrics (terminal range-to-go statistics and
density-prediction error maps)."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .atmos import ExponentialModel, GasModel, PSEUDO_GRID_KM, SurrogateConfig
from .dynamics import PlanetModel, VehicleParams
from .estimators import NoiseSpec, inject_noise  # noqa: F401  (module surface)
from .neural.lstm import forward_batch
from .pipeline import (
    Dataset,
    case_seed_sequences,
    denormalize_targets,
    draw_atmo_sample,
    normalize_features,
    parallel_map,
    run_case,
)
from .sim import Mission

ESTIMATOR_KINDS = ("exponential", "filter", "lstm")


@dataclass
class CaseResult:
    case_id: int
    atmo_seed: int
    s_f_rad: float
    s_f_km: float
    failed: bool = False

    @property
    def s_f_deg(self) -> float:
        return math.degrees(self.s_f_rad)

    @property
    def undershoot(self) -> bool:
        return self.s_f_rad > 0.0


@dataclass
class CampaignSummary:
    method: str
    cases: int
    mean_km: float
    sigma_km: float
    p1_km: float
    p99_km: float
    failures: int = 0

    def as_dict(self) -> dict:
        return {
            "method": self.method,
            "cases": self.cases,
            "mean_km": self.mean_km,
            "sigma_km": self.sigma_km,
            "p1_km": self.p1_km,
            "p99_km": self.p99_km,
            "failures": self.failures,
        }


@dataclass
class CampaignResult:
    method: str
    results: list = field(default_factory=list)
    failures: int = 0

    def abs_s_f_km(self) -> np.ndarray:
        return np.array([abs(r.s_f_km) for r in self.results if not r.failed])

    def signed_s_f_km(self) -> np.ndarray:
        return np.array([r.s_f_km for r in self.results if not r.failed])

    def summarize(self) -> CampaignSummary:
        return summarize(self)


def summarize(campaign: CampaignResult) -> CampaignSummary:
    """Mean, std, and 1st/99th percentiles of |s_f| in km (percentiles by
    linear interpolation between order statistics)."""
    mags = campaign.abs_s_f_km()
    if mags.size == 0:
        raise ValueError("campaign has no successful cases")
    return CampaignSummary(
        method=campaign.method,
        cases=int(mags.size),
        mean_km=float(mags.mean()),
        sigma_km=float(mags.std()),
        p1_km=float(np.percentile(mags, 1.0, method="linear")),
        p99_km=float(np.percentile(mags, 99.0, method="linear")),
        failures=campaign.failures)


def compare(campaigns: list[CampaignResult]) -> list[CampaignSummary]:
    return [summarize(c) for c in campaigns]


def _campaign_case(args) -> CaseResult:
    (i, seq, estimator_kind, mission, vehicle, planet, gas, surrogate,
     perturbation_scale, model, noise, exp_model) = args
    atmo_rng = np.random.default_rng(seq.spawn(1)[0])
    atmo_sample = draw_atmo_sample(atmo_rng, perturbation_scale)
    noise_seed = int(atmo_rng.integers(2**63)) if noise is not None else None
    try:
        result, _profile = run_case(
            mission, estimator_kind, atmo_sample, vehicle=vehicle,
            planet=planet, gas=gas, surrogate=surrogate, model=model,
            noise=noise, noise_seed=noise_seed, exp_model=exp_model)
        return CaseResult(i, atmo_sample.seed, result.s_f_rad, result.s_f_km,
                          failed=result.failed)
    except Exception:
        return CaseResult(i, atmo_sample.seed, float("nan"), float("nan"), True)


def run_campaign(estimator_kind: str, count: int, master_seed: int, *,
                 mission: Mission = Mission(),
                 vehicle: VehicleParams = VehicleParams(),
                 planet: PlanetModel = PlanetModel(),
                 gas: GasModel = GasModel(),
                 surrogate: SurrogateConfig = SurrogateConfig(),
                 perturbation_scale: float = 2.0,
                 model=None,
                 noise: NoiseSpec | None = None,
                 exp_model: ExponentialModel | None = None,
                 jobs: int = 1) -> CampaignResult:
    """Independent dispersed entries with the chosen estimator.

    The atmosphere draw of case i depends only on (master_seed, i), so
    different estimators, noise settings, and parallelism degrees see
    identical truth atmospheres. Per-case failures are recorded and the
    campaign continues.
    """
    if estimator_kind == "lstm" and model is None:
        raise ValueError("lstm campaigns require a trained model")
    seqs = case_seed_sequences(master_seed, count)
    args = [(i, seq, estimator_kind, mission, vehicle, planet, gas, surrogate,
             perturbation_scale, model, noise, exp_model)
            for i, seq in enumerate(seqs)]
    results = parallel_map(_campaign_case, args, jobs)
    out = CampaignResult(method=estimator_kind, results=results,
                         failures=sum(1 for r in results if r.failed))
    return out


@dataclass
class DensityErrorMap:
    """Mean percent density error per (sequence length, altitude node)."""

    mean_pct: np.ndarray  # (T_max, 39), NaN where no case is that long
    case_lengths: np.ndarray

    def full_length_mean(self) -> float:
        """Mean error over nodes at each case's final step, averaged."""
        return float(np.nanmean(self._per_case_final))

    def quartile_means(self) -> np.ndarray:
        """Mean error in the four quarters of each case's sequence."""
        return self._quartiles

    # populated by density_error_map
    _per_case_final: np.ndarray = field(default=None, repr=False)
    _quartiles: np.ndarray = field(default=None, repr=False)


def density_error_map(model, dataset: Dataset, stats=None) -> DensityErrorMap:
    """Evaluate prediction error at every prefix length on held-out samples.

    The network is causal and sequence-to-sequence, so a single forward pass
    yields the prediction for every prefix. Error is the percent density
    deviation against the truth targets, averaged over altitude nodes.
    """
    if not dataset.samples:
        raise ValueError("empty evaluation set")
    stats = stats or model.stats
    if stats is None:
        raise ValueError("normalization statistics required")
    lengths = np.array([s.features.shape[0] for s in dataset.samples])
    t_max = int(lengths.max())
    err_sum = np.zeros((t_max, PSEUDO_GRID_KM.size))
    err_cnt = np.zeros(t_max)
    per_case_final = np.empty(len(dataset.samples))
    quart_acc = np.zeros((len(dataset.samples), 4))

    for ci, s in enumerate(dataset.samples):
        x = normalize_features(stats, s.features)[None, :, :]
        preds, _ = forward_batch(model, x, np.array([s.features.shape[0]]),
                                 training=False)
        eta_hat = denormalize_targets(stats, preds[0])  # (N, 39)
        rho_hat = 10.0 ** (-(np.maximum(eta_hat, 0.0) ** 2))
        rho_true = 10.0 ** (-(s.target_eta**2))
        pct = 100.0 * np.abs((rho_hat - rho_true) / rho_true)  # (N, 39)
        n = pct.shape[0]
        err_sum[:n] += pct
        err_cnt[:n] += 1.0
        node_mean = pct.mean(axis=1)
        per_case_final[ci] = node_mean[-1]
        edges = np.linspace(0, n, 5).astype(int)
        for q in range(4):
            quart_acc[ci, q] = node_mean[edges[q]:max(edges[q + 1], edges[q] + 1)].mean()

    mean_pct = err_sum / np.where(err_cnt[:, None] > 0, err_cnt[:, None], np.nan)
    emap = DensityErrorMap(mean_pct, lengths)
    emap._per_case_final = per_case_final
    emap._quartiles = quart_acc.mean(axis=0)
    return emap


def save_campaign(directory, campaign: CampaignResult) -> None:
    """results.csv (per case) + summary.json (stats row)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "results.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["case_id", "seed", "s_f_deg", "s_f_km", "undershoot_flag"])
        for r in campaign.results:
            writer.writerow([r.case_id, r.atmo_seed, repr(r.s_f_deg),
                             repr(r.s_f_km), int(r.undershoot)])
    (directory / "summary.json").write_text(
        json.dumps(summarize(campaign).as_dict(), indent=2))


def load_campaign_results(directory) -> list[CaseResult]:
    out = []
    with open(Path(directory) / "results.csv", newline="") as f:
        for row in csv.DictReader(f):
            s_f_deg = float(row["s_f_deg"])
            out.append(CaseResult(int(row["case_id"]), int(row["seed"]),
                                  math.radians(s_f_deg), float(row["s_f_km"]),
                                  failed=not math.isfinite(s_f_deg)))
    return out


def save_error_map(path, emap: DensityErrorMap) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["sequence_length"] +
                        [f"h_{int(h)}km" for h in PSEUDO_GRID_KM])
        for n in range(emap.mean_pct.shape[0]):
            row = emap.mean_pct[n]
            writer.writerow([n + 1] + [repr(float(v)) for v in row])
