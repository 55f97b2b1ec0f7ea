"""Command line entry points.

Every run writes a manifest recording the subcommand, arguments, seeds,
calibration checksum, and package version next to its outputs.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import CoreConfig


def write_manifest(out_dir, command: str, args: dict, cfg: CoreConfig) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "schema_version": 1,
        "command": command,
        "arguments": {k: v for k, v in args.items() if k != "func"},
        "package_version": __version__,
        "calibration_checksum": cfg.checksum(),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    with open(out_dir / f"manifest_{command}.json", "w") as fh:
        json.dump(manifest, fh, indent=2, default=str)


def _load_config(args) -> CoreConfig:
    if getattr(args, "calibration", None):
        return CoreConfig.from_yaml(args.calibration)
    return CoreConfig.default()


def cmd_calibrate(args) -> int:
    from .coresim import calibrate, run_benchmark_equilibrium

    cfg = calibrate(verbose=True)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    cfg.to_yaml(out)
    summary = run_benchmark_equilibrium(cfg, settle_steps=400, window=40)
    print(f"wrote {out}")
    print(
        f"equilibrium k_eff {summary.mean_k_eff:.4f}, "
        f"mean discard burnup {summary.mean_discard_burnup:.2f} %FIMA "
        f"(threshold {cfg.discard_threshold_fima:.3f})"
    )
    write_manifest(out.parent, "calibrate", vars(args), cfg)
    return 0


def cmd_simulate(args) -> int:
    from .coresim import ControlVector
    from .features import NoisePolicy
    from .sequences import save_corpus, settled_equilibrium_state, simulate_sequence

    cfg = _load_config(args)
    path = Path(args.controls)
    if not path.exists():
        print(f"error: controls file not found: {path}", file=sys.stderr)
        return 2
    rows = np.genfromtxt(path, delimiter=",", names=True)
    if rows.size == 0:
        print(f"error: controls file is empty: {path}", file=sys.stderr)
        return 2
    rows = np.atleast_1d(rows)
    needed = ["graphite_fraction", "power", "rod_depth", "timestep", "discard_threshold"]
    missing = [n for n in needed if n not in (rows.dtype.names or [])]
    if missing:
        print(f"error: controls file missing columns {missing}", file=sys.stderr)
        return 2
    schedule = [
        ControlVector(**{n: float(r[n]) for n in needed}) for r in rows
    ]
    state = settled_equilibrium_state(cfg, seed=args.seed)
    seq = simulate_sequence(
        cfg,
        state,
        schedule,
        NoisePolicy(seed=args.seed),
        name=path.stem,
        provenance="simulated",
        seed=args.seed,
        noise=not args.no_noise,
        jitter=not args.no_noise,
    )
    save_corpus([seq], args.out)
    write_manifest(args.out, "simulate", vars(args), cfg)
    print(f"simulated {seq.features.shape[0]} steps -> {args.out}")
    return 0


def cmd_gen_data(args) -> int:
    from .sequences import generate_corpus, save_corpus

    cfg = _load_config(args)
    corpus = generate_corpus(
        cfg,
        n_handcrafted=args.handcrafted,
        n_random=args.random,
        length=args.length,
        seed=args.seed,
        noise=not args.no_noise,
        progress=lambda name: print(f"  generated {name}"),
    )
    save_corpus(corpus, args.out)
    write_manifest(args.out, "gen_data", vars(args), cfg)
    print(f"{len(corpus)} sequences -> {args.out}")
    return 0


def cmd_fit_pca(args) -> int:
    from . import meshpca
    from .sequences import load_corpus
    from .windows import fit_mesh_pca

    cfg = _load_config(args)
    corpus = load_corpus(args.corpus)
    pca_power, pca_flux = fit_mesh_pca(corpus, n_components=args.components)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meshpca.save_model(pca_power, out / "pca_power.npz")
    meshpca.save_model(pca_flux, out / "pca_flux.npz")
    for tag, model in (("power", pca_power), ("flux", pca_flux)):
        cum = np.cumsum(model.explained_variance_ratio)
        print(f"{tag}: cumulative explained variance at {args.components} "
              f"components = {cum[args.components - 1]:.4f}")
    write_manifest(out, "fit_pca", vars(args), cfg)
    return 0


def _dataset_from_args(args, cfg):
    from . import meshpca
    from .sequences import load_corpus
    from .windows import window_dataset

    corpus = load_corpus(args.corpus)
    pca_dir = Path(args.pca)
    pca_power = meshpca.load_model(pca_dir / "pca_power.npz")
    pca_flux = meshpca.load_model(pca_dir / "pca_flux.npz")
    dataset = window_dataset(
        corpus, pca_power=pca_power, pca_flux=pca_flux, seed=args.seed
    )
    return corpus, dataset, pca_power, pca_flux


def cmd_train(args) -> int:
    from .lstm import LstmConfig, evaluate, save_learning_curve, save_registry, train
    from .windows import DEFAULT_LAYERS, TARGET_NAMES

    cfg = _load_config(args)
    _, dataset, _, _ = _dataset_from_args(args, cfg)
    targets = TARGET_NAMES if args.target == "all" else [args.target]
    unknown = [t for t in targets if t not in TARGET_NAMES]
    if unknown:
        print(f"error: unknown target(s) {unknown}", file=sys.stderr)
        return 2
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    models = {}
    for target in targets:
        layers = (
            [int(x) for x in args.layers.split(",")]
            if args.layers
            else DEFAULT_LAYERS[target]
        )
        config = LstmConfig(
            hidden_layer_sizes=layers,
            input_dim=dataset.X.shape[-1],
            window=dataset.window,
            max_epochs=args.max_epochs,
            seed=args.seed,
        )
        t0 = time.time()
        model = train(config, dataset, target)
        result = evaluate(model, dataset, "test")
        models[target] = model
        save_learning_curve(model, out / f"curve_{target}.csv")
        r2 = "n/a" if result.r_squared is None else f"{result.r_squared:.4f}"
        print(
            f"{target}: layers {layers} test R2 {r2} MAE {result.mae:.4g} "
            f"({time.time() - t0:.0f}s, best epoch {model.history['best_epoch']})"
        )
    save_registry(models, out)
    write_manifest(out, "train", vars(args), cfg)
    return 0


def cmd_evaluate(args) -> int:
    import csv

    from .lstm import evaluate, load_registry

    cfg = _load_config(args)
    _, dataset, _, _ = _dataset_from_args(args, cfg)
    models = load_registry(args.models)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "evaluation.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["target", "split", "r_squared", "mae", "n"])
        for target, model in sorted(models.items()):
            for split in ("train", "test"):
                res = evaluate(model, dataset, split)
                writer.writerow([target, split, res.r_squared, res.mae, res.n])
                if split == "test":
                    r2 = "n/a" if res.r_squared is None else f"{res.r_squared:.4f}"
                    print(f"{target}: test R2 {r2} MAE {res.mae:.4g}")
    write_manifest(out, "evaluate", vars(args), cfg)
    return 0


def cmd_importance(args) -> int:
    from .analysis import permutation_importance
    from .lstm import load_registry

    cfg = _load_config(args)
    _, dataset, _, _ = _dataset_from_args(args, cfg)
    models = load_registry(args.models)
    if args.target != "all":
        models = {args.target: models[args.target]}
    report = permutation_importance(
        models, dataset, repetitions=args.repetitions, seed=args.seed
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.to_csv(out / "importance.csv")
    write_manifest(out, "importance", vars(args), cfg)
    print(f"importance report -> {out / 'importance.csv'}")
    return 0


def cmd_forecast(args) -> int:
    import csv

    from .analysis import Scenario, builtin_scenarios, forecast_error_trend, run_scenario
    from .lstm import load_registry

    cfg = _load_config(args)
    models = load_registry(args.models)
    if args.scenario == "builtin":
        scenarios = builtin_scenarios()
    else:
        with open(args.scenario) as fh:
            doc = json.load(fh)
        scenarios = [
            Scenario(
                name=s["name"],
                overrides=s["overrides"],
                horizon=s.get("horizon", 20),
                history_steps=s.get("history_steps", 16),
            )
            for s in doc["scenarios"]
        ]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    traces = []
    for scenario in scenarios:
        trace = run_scenario(cfg, models, scenario, seed=args.seed)
        traces.append(trace)
        with open(out / f"forecast_{scenario.name}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "predicted_reactivity", "true_reactivity"])
            for i in range(trace.horizon):
                writer.writerow(
                    [
                        i + 1,
                        trace.predictions["reactivity"][i],
                        trace.ground_truth["reactivity"][i],
                    ]
                )
        print(f"{scenario.name}: horizon {trace.horizon} written")
    trend = forecast_error_trend(traces)
    print(
        f"mean |error| steps 1-10: {trend['early_mae']:.5f}, "
        f"steps 11-20: {trend['late_mae']:.5f}"
    )
    write_manifest(out, "forecast", vars(args), cfg)
    return 0


def cmd_runin(args) -> int:
    from .lstm import load_registry, save_registry
    from .runin import GoalSchedule, optimize_loop
    from .sequences import load_corpus, save_corpus

    cfg = _load_config(args)
    corpus = load_corpus(args.corpus)
    goals = GoalSchedule(min_perturbations=args.s, tolerance_pcm=args.tolerance_pcm)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def progress(it, record):
        print(
            f"iteration {it}: steps={len(record.steps)} "
            f"reached={record.reached_goals} aborted={record.aborted} "
            f"rho MAE={record.reactivity_mae / 1e-5:.0f} pcm "
            f"days_to_full_power={record.days_to_full_power}"
        )

    result = optimize_loop(
        cfg,
        corpus,
        goals,
        n_iterations=args.iterations,
        seed=args.seed,
        max_steps=args.max_steps,
        progress=progress,
    )
    result.metrics_csv(out / "runin_metrics.csv")
    for record in result.records:
        record.to_csv(out / f"runin_iter{record.iteration}.csv")
    save_registry(result.models, out / "models")
    write_manifest(out, "runin", vars(args), cfg)
    print(f"metrics -> {out / 'runin_metrics.csv'}")
    return 0


def cmd_serve(args) -> int:
    from .lstm import load_registry
    from .service.api import serve

    cfg = _load_config(args)
    models = load_registry(args.models) if args.models else None
    serve(
        cfg,
        host=args.host,
        port=args.port,
        seed=args.seed,
        start=args.start,
        models=models,
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pbrtwin",
        description="Pebble-bed reactor operation digital twin",
    )
    parser.add_argument("--calibration", help="calibration YAML (default: packaged)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="recalibrate the kernel constants")
    p.add_argument("--out", default="calibration.yaml")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("simulate", help="run a control schedule CSV through the core")
    p.add_argument("--controls", required=True, help="CSV with the five control columns")
    p.add_argument("--out", default="out/simulate")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-noise", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("gen-data", help="generate the training corpus")
    p.add_argument("--handcrafted", type=int, default=14)
    p.add_argument("--random", type=int, default=19)
    p.add_argument("--length", type=int, default=140)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out/corpus")
    p.add_argument("--no-noise", action="store_true")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("fit-pca", help="fit mesh principal components")
    p.add_argument("--corpus", required=True)
    p.add_argument("--components", type=int, default=5)
    p.add_argument("--out", default="out/pca")
    p.set_defaults(func=cmd_fit_pca)

    p = sub.add_parser("train", help="train per-target sequence models")
    p.add_argument("--corpus", required=True)
    p.add_argument("--pca", required=True)
    p.add_argument("--target", default="all")
    p.add_argument("--layers", help="comma-separated override, e.g. 64 or 256,128")
    p.add_argument("--max-epochs", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out/models")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="R^2 / MAE for trained models")
    p.add_argument("--corpus", required=True)
    p.add_argument("--pca", required=True)
    p.add_argument("--models", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out/evaluation")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("importance", help="permutation feature importance")
    p.add_argument("--corpus", required=True)
    p.add_argument("--pca", required=True)
    p.add_argument("--models", required=True)
    p.add_argument("--target", default="all")
    p.add_argument("--repetitions", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out/importance")
    p.set_defaults(func=cmd_importance)

    p = sub.add_parser("forecast", help="multi-step forecasts vs ground truth")
    p.add_argument("--models", required=True)
    p.add_argument("--scenario", default="builtin", help="'builtin' or a scenario JSON")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out/forecast")
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("runin", help="closed-loop run-in optimization")
    p.add_argument("--corpus", required=True)
    p.add_argument("--iterations", type=int, default=3)
    p.add_argument("--s", type=int, default=40)
    p.add_argument("--tolerance-pcm", type=float, default=50.0)
    p.add_argument("--max-steps", type=int, default=400)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out/runin")
    p.set_defaults(func=cmd_runin)

    p = sub.add_parser("serve", help="start the operator HTTP API")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8151)
    p.add_argument("--models", help="model registry directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--start", default="equilibrium",
                   choices=["equilibrium", "runin", "fresh"])
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
