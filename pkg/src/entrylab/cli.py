"""Command-line entry point.

Commands: gen-data, train, curriculum, campaign, error-map. Every command is
deterministic under a fixed seed manifest and records its outputs in a
run_manifest.json. Exit codes: 0 success, 1 runtime failure, 2 configuration
error, 3 curriculum divergence abort.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
import traceback
from pathlib import Path

import numpy as np

from . import evalmc, pipeline
from .config import ConfigError, RunConfig, load_config
from .neural import init_model, train
from .neural.model_io import load_model, save_model
from .pipeline import CurriculumDiverged


def _write_manifest(out_dir: Path, command: str, cfg: RunConfig,
                    outputs: list, extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "scale": cfg.scale,
        "config_hash": cfg.config_hash(),
        "seeds": dataclasses.asdict(cfg.seeds),
        "outputs": [str(p) for p in outputs],
    }
    if extra:
        manifest.update(extra)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run_manifest.json").write_text(json.dumps(manifest, indent=2))


def _dataset_kwargs(cfg: RunConfig, jobs: int) -> dict:
    atm = cfg.atmosphere
    return dict(mission=cfg.mission, vehicle=cfg.vehicle, planet=cfg.planet,
                gas=atm.gas, surrogate=atm.surrogate,
                perturbation_scale=atm.perturbation_scale, jobs=jobs)


def _save_loss_history(path: Path, history: list) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "train_loss", "val_loss"])
        for epoch, tl, vl in history:
            writer.writerow([epoch, repr(tl), repr(vl)])


def _train_on_dataset(cfg: RunConfig, dataset: pipeline.Dataset,
                      warm_model=None, epochs: int | None = None,
                      seed: int | None = None):
    tr_cfg = cfg.training.train_config(epochs)
    if seed is not None:
        tr_cfg = dataclasses.replace(tr_cfg, seed=seed)
    if warm_model is None:
        stats = dataset.ensure_stats()
        model = init_model(pipeline.N_FEATURES, cfg.training.hidden_size,
                           39, seed=tr_cfg.seed,
                           dropout_rate=cfg.training.dropout_rate,
                           hidden_activation=cfg.training.hidden_activation)
        model.stats = stats
    else:
        model = warm_model
        stats = model.stats  # normalization travels with the model
    train_ds, val_ds = dataset.split(1.0 - cfg.training.validation_fraction)
    result = train(model, train_ds.network_samples(stats), tr_cfg,
                   val_ds.network_samples(stats))
    return result


def cmd_gen_data(args, cfg: RunConfig) -> int:
    out_dir = Path(args.out)
    count = args.count or cfg.training.dataset_size
    model = load_model(args.model) if args.model else None
    if args.estimator == "lstm" and model is None:
        raise ConfigError("--estimator lstm requires --model")
    noise = cfg.noise_spec() if args.noise else None
    dataset = pipeline.generate_dataset(
        count, args.estimator, cfg.seeds.dataset, model=model, noise=noise,
        **_dataset_kwargs(cfg, args.jobs))
    dataset.ensure_stats()
    pipeline.save_dataset(out_dir, dataset, cfg.config_hash())
    manifest_hash = pipeline.dataset_manifest_hash(out_dir)
    _write_manifest(out_dir, "gen-data", cfg,
                    [out_dir / "manifest.json", out_dir / "norm_stats.json"],
                    {"cases": len(dataset), "failures": dataset.failures,
                     "dataset_manifest_sha256": manifest_hash})
    print(f"generated {len(dataset)} trajectories "
          f"({dataset.failures} failures) -> {out_dir}")
    print(f"manifest sha256: {manifest_hash}")
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    dataset = pipeline.load_dataset(args.dataset)
    warm = load_model(args.warm_start) if args.warm_start else None
    if args.inject_noise:
        if warm is None:
            raise ConfigError("--inject-noise retraining requires --warm-start")
        dataset = dataset.with_noisy_features(
            cfg.noise_spec(), cfg.seeds.noise_retrain, cfg.planet.g0)
        seed = cfg.training.noisy_retrain_seed
    else:
        seed = None
    result = _train_on_dataset(cfg, dataset, warm_model=warm,
                               epochs=args.epochs, seed=seed)
    out = Path(args.out)
    save_model(out, result.model)
    loss_csv = out.with_suffix(".loss.csv")
    _save_loss_history(loss_csv, result.history)
    _write_manifest(out.parent, "train", cfg, [out, loss_csv],
                    {"epochs": len(result.history),
                     "final_train_loss": result.history[-1][1],
                     "final_val_loss": result.history[-1][2]})
    print(f"trained {len(result.history)} epochs; "
          f"loss {result.history[0][1]:.4f} -> {result.history[-1][1]:.4f}")
    return 0


def cmd_curriculum(args, cfg: RunConfig) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset0 = pipeline.generate_dataset(
        cfg.training.dataset_size, "exponential", cfg.seeds.dataset,
        **_dataset_kwargs(cfg, args.jobs))
    dataset0.ensure_stats()

    iteration_paths = []

    def train_fn(model, dataset):
        res = _train_on_dataset(cfg, dataset, warm_model=model)
        path = out_dir / f"model_iter{len(iteration_paths) + 1:02d}.npz"
        save_model(path, res.model)
        iteration_paths.append(path)
        return res.model

    def stats_fn(model):
        camp = evalmc.run_campaign(
            "lstm", cfg.campaign.stats_count, cfg.seeds.curriculum_stats,
            model=model, mission=cfg.mission, vehicle=cfg.vehicle,
            planet=cfg.planet, gas=cfg.atmosphere.gas,
            surrogate=cfg.atmosphere.surrogate,
            perturbation_scale=cfg.atmosphere.perturbation_scale,
            jobs=args.jobs)
        summary = evalmc.summarize(camp)
        return summary.mean_km, summary.sigma_km

    def regen_fn(model, iteration):
        return pipeline.generate_dataset(
            cfg.training.dataset_size, "lstm", cfg.seeds.dataset + iteration,
            model=model, **_dataset_kwargs(cfg, args.jobs))

    def log(state):
        print(f"iteration {state.iteration}: mu={state.mu_km:.3f} km "
              f"sigma={state.sigma_km:.3f} km converged={state.converged}")

    try:
        model, history = pipeline.curriculum_loop(
            dataset0, cfg.curriculum_config(), train_fn, stats_fn, regen_fn, log)
    except CurriculumDiverged as exc:
        pipeline.save_curriculum_history(out_dir / "history.csv", exc.history)
        _write_manifest(out_dir, "curriculum", cfg,
                        iteration_paths + [out_dir / "history.csv"],
                        {"diverged": True})
        print(f"error: {exc}", file=sys.stderr)
        return 3
    final_path = out_dir / "model.npz"
    save_model(final_path, model)
    pipeline.save_curriculum_history(out_dir / "history.csv", history)
    _write_manifest(out_dir, "curriculum", cfg,
                    iteration_paths + [final_path, out_dir / "history.csv"],
                    {"iterations": len(history),
                     "converged": history[-1].converged,
                     "final_mu_km": history[-1].mu_km,
                     "final_sigma_km": history[-1].sigma_km})
    return 0


def cmd_campaign(args, cfg: RunConfig) -> int:
    kinds = [k.strip() for k in args.estimator.split(",") if k.strip()]
    for kind in kinds:
        if kind not in evalmc.ESTIMATOR_KINDS:
            raise ConfigError(f"unknown estimator {kind!r}")
    model = load_model(args.model) if args.model else None
    if "lstm" in kinds and model is None:
        raise ConfigError("lstm campaigns require --model")
    noise = cfg.noise_spec() if (args.noise or cfg.campaign.noise) else None
    count = args.count or cfg.campaign.count
    out_dir = Path(args.out)
    summaries = []
    outputs = []
    for kind in kinds:
        camp = evalmc.run_campaign(
            kind, count, cfg.seeds.campaign, model=model, noise=noise,
            mission=cfg.mission, vehicle=cfg.vehicle, planet=cfg.planet,
            gas=cfg.atmosphere.gas, surrogate=cfg.atmosphere.surrogate,
            perturbation_scale=cfg.atmosphere.perturbation_scale,
            exp_model=cfg.atmosphere.nominal, jobs=args.jobs)
        sub = out_dir / kind
        evalmc.save_campaign(sub, camp)
        outputs += [sub / "results.csv", sub / "summary.json"]
        summaries.append(evalmc.summarize(camp))
    (out_dir / "comparison.json").write_text(
        json.dumps([s.as_dict() for s in summaries], indent=2))
    outputs.append(out_dir / "comparison.json")
    _write_manifest(out_dir, "campaign", cfg, outputs,
                    {"count": count, "noise": noise is not None})
    header = f"{'method':14s} {'mean[km]':>9s} {'sigma[km]':>9s} {'p1[km]':>8s} {'p99[km]':>8s}"
    print(header)
    for s in summaries:
        print(f"{s.method:14s} {s.mean_km:9.3f} {s.sigma_km:9.3f} "
              f"{s.p1_km:8.3f} {s.p99_km:8.3f}")
    return 0


def cmd_error_map(args, cfg: RunConfig) -> int:
    model = load_model(args.model)
    dataset = pipeline.load_dataset(args.dataset)
    emap = evalmc.density_error_map(model, dataset)
    out = Path(args.out)
    evalmc.save_error_map(out, emap)
    _write_manifest(out.parent, "error-map", cfg, [out],
                    {"cases": len(dataset),
                     "full_length_mean_pct": emap.full_length_mean(),
                     "quartile_means_pct": emap.quartile_means().tolist()})
    print(f"full-sequence mean density error: {emap.full_length_mean():.2f}%")
    print(f"quartile means: "
          f"{np.round(emap.quartile_means(), 3).tolist()}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default="default",
                        help="TOML config path or 'default'")
    common.add_argument("--scale", choices=("desk", "paper"), default=None,
                        help="size profile override")
    common.add_argument("--seed", type=int, default=None,
                        help="override the master seed manifest")
    common.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                        help="parallel workers for Monte Carlo cases")

    parser = argparse.ArgumentParser(
        prog="entrylab",
        description="Atmospheric-entry guidance laboratory: dataset "
                    "generation, network training, curriculum retraining, "
                    "and Monte Carlo estimator campaigns.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common],
                       help="simulate trajectories into a dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--estimator", default="exponential",
                   choices=evalmc.ESTIMATOR_KINDS)
    p.add_argument("--model", default=None, help="model for --estimator lstm")
    p.add_argument("--noise", action="store_true")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", parents=[common],
                       help="train the network on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--warm-start", default=None,
                   help="continue from an existing model file")
    p.add_argument("--inject-noise", action="store_true",
                   help="retrain on sensor-noise-injected features")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("curriculum", parents=[common],
                       help="iterative retraining loop")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_curriculum)

    p = sub.add_parser("campaign", parents=[common],
                       help="Monte Carlo estimator comparison")
    p.add_argument("--out", required=True)
    p.add_argument("--estimator", default="exponential,filter,lstm",
                   help="comma-separated estimator kinds")
    p.add_argument("--model", default=None)
    p.add_argument("--noise", action="store_true")
    p.add_argument("--count", type=int, default=None)
    p.set_defaults(func=cmd_campaign)

    p = sub.add_parser("error-map", parents=[common],
                       help="density-error map on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_error_map)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, scale=args.scale, seed_override=args.seed)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
