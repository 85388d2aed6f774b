"""Command line front end: simulate, fit, predict, benchmark, report.

Each command merges an optional JSON config with flag overrides, rejects
unknown keys, runs, and echoes the fully resolved config next to its outputs.
Exit codes: 0 ok, 2 config or schema problem, 3 numerical failure, 4 benchmark
finished with failed cells.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .backend import backend_name
from .baselines import FIXED_K_KINDS, MCMC_KINDS, SPATIAL_KINDS, BaselineSpec, FittedModel, parse_spec
from .dataset import (
    chain_summary,
    load_chain_csv,
    load_dataset_csv,
    load_model_json,
    load_predictions_csv,
    write_benchmark_csv,
    write_chain_csv,
    write_json,
    write_model_json,
    write_plot_data_csv,
    write_predictions_csv,
    write_synthetic_csv,
    write_truth_json,
)
from .errors import BpcrError, DimensionMismatchError, InvalidParamError, SchemaError
from .model import McmcConfig, SpatialParams
from .predictor import PredictionResult
from .synthetic import SyntheticConfig, generate_dataset
from .validation import (
    ExperimentPlan,
    aggregate_rows,
    fit_models,
    make_report,
    maximin_select,
    prediction_thin,
    run_benchmark,
)

log = logging.getLogger("bpcr.cli")

CONFIG_ERRORS = (SchemaError, InvalidParamError, DimensionMismatchError,
                 json.JSONDecodeError, FileNotFoundError, NotADirectoryError, IsADirectoryError)

SIMULATE_KEYS = {
    "grid_side": 20, "n_corr": 9, "n_noise": 5, "condition_number": 30.0,
    "beta_int": 20.0, "beta_reg": [1.0, 2.0, 3.0, 2.0, 1.0],
    "theta_true": {"tau2": 0.25, "sigma2": 1.0, "phi": 0.5},
    "seed": 0, "rotation_seed": None, "signal_mixing": "random",
}
MCMC_KEYS = {
    "n_samples": 5000, "burn_in": 1000, "adapt_start": 200,
    "adapt_interval": 50, "initial_proposal_scale": 0.1,
}
FIT_KEYS = {
    "dataset": None, "model": "bpcr_spatial", "n_train": None, "selection": "random",
    "train_indices": None, "mcmc": {}, "seed": 0, "backend": None,
}
PREDICT_KEYS = {
    "model_dir": None, "locations": None, "include_noise": True, "level": 0.95,
    "predict_states": 800, "seed": 0, "backend": None,
}
BENCHMARK_KEYS = {
    "models": ["pcr", "pcr_spatial", "bpcr", "bpcr_spatial"],
    "training_sizes": [50], "replicates": 5, "selection": "random",
    "synthetic": {}, "mcmc": {}, "predict_states": 800, "include_noise": True,
    "level": 0.95, "seed": 0, "jobs": 1, "timings": False,
}
REPORT_KEYS = {"predictions": None}


def _merge_config(path: str | None, defaults: dict, overrides: dict, command: str) -> dict:
    cfg = {k: (dict(v) if isinstance(v, dict) else list(v) if isinstance(v, list) else v)
           for k, v in defaults.items()}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise SchemaError(f"{path}: top level must be a JSON object")
        unknown = sorted(set(raw) - set(defaults))
        if unknown:
            raise SchemaError(f"unknown {command} config keys: {unknown}")
        cfg.update(raw)
    for key, value in overrides.items():
        if value is not None:
            cfg[key] = value
    return cfg


def _require(cfg: dict, key: str, command: str):
    if cfg.get(key) is None:
        raise SchemaError(f"{command} needs {key!r} (config key or flag)")
    return cfg[key]


def _check_keys(raw: dict, allowed, where: str) -> dict:
    unknown = sorted(set(raw) - set(allowed))
    if unknown:
        raise SchemaError(f"unknown {where} keys: {unknown}")
    return raw


def _synthetic_config(raw: dict) -> SyntheticConfig:
    raw = _check_keys(dict(raw), SIMULATE_KEYS, "synthetic")
    merged = {**SIMULATE_KEYS, **raw}
    theta = _check_keys(dict(merged["theta_true"]), ("tau2", "sigma2", "phi"), "theta_true")
    return SyntheticConfig(
        grid_side=int(merged["grid_side"]),
        n_corr=int(merged["n_corr"]),
        n_noise=int(merged["n_noise"]),
        condition_number=float(merged["condition_number"]),
        beta_int=float(merged["beta_int"]),
        beta_reg=tuple(float(b) for b in merged["beta_reg"]),
        theta_true=SpatialParams(
            tau2=float(theta.get("tau2", 0.25)),
            sigma2=float(theta.get("sigma2", 1.0)),
            phi=float(theta.get("phi", 0.5)),
        ),
        seed=int(merged["seed"]),
        rotation_seed=None if merged["rotation_seed"] is None else int(merged["rotation_seed"]),
        signal_mixing=str(merged["signal_mixing"]),
    )


def _mcmc_config(raw: dict) -> McmcConfig:
    raw = _check_keys(dict(raw), MCMC_KEYS, "mcmc")
    merged = {**MCMC_KEYS, **raw}
    return McmcConfig(
        n_samples=int(merged["n_samples"]),
        burn_in=int(merged["burn_in"]),
        adapt_start=int(merged["adapt_start"]),
        adapt_interval=int(merged["adapt_interval"]),
        initial_proposal_scale=float(merged["initial_proposal_scale"]),
    )


def _spec(raw) -> BaselineSpec:
    """'pcr', 'pcr_k:6', or {'kind': ..., 'k': ...}."""
    if isinstance(raw, dict):
        raw = _check_keys(dict(raw), ("kind", "k"), "model")
        k = raw.get("k")
        return BaselineSpec(kind=raw.get("kind", ""), k=None if k is None else int(k))
    return parse_spec(raw)


def _out_dir(args) -> str:
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    return out


def _echo_config(out: str, command: str, cfg: dict) -> None:
    write_json(os.path.join(out, "resolved_config.json"), {"command": command, **cfg})


def _word_seeds(seed: int, count: int) -> list[int]:
    return [int(w) for w in np.random.SeedSequence(seed).generate_state(count, dtype=np.uint64)]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = _merge_config(args.config, SIMULATE_KEYS, {"seed": args.seed}, "simulate")
    out = _out_dir(args)
    data = generate_dataset(_synthetic_config(cfg))
    write_synthetic_csv(os.path.join(out, "dataset.csv"), data)
    write_truth_json(os.path.join(out, "truth.json"), data)
    _echo_config(out, "simulate", cfg)
    log.info("simulate: wrote %d cells to %s", data.y.size, out)
    return 0


def _training_rows(data, cfg, sel_seed: int) -> np.ndarray:
    if cfg["train_indices"] is not None:
        idx = np.array(sorted(int(i) for i in cfg["train_indices"]), dtype=np.intp)
        if idx.size == 0 or idx[0] < 0 or idx[-1] >= data.n or np.unique(idx).size != idx.size:
            raise SchemaError(f"train_indices must be unique integers in [0, {data.n - 1}]")
        return idx
    n_train = cfg["n_train"]
    if n_train is None or int(n_train) >= data.n:
        return np.arange(data.n, dtype=np.intp)
    rng = np.random.default_rng(sel_seed)
    if cfg["selection"] == "maximin":
        return maximin_select(data.coords, int(n_train), rng)
    if cfg["selection"] != "random":
        raise SchemaError(f"selection must be random or maximin, got {cfg['selection']!r}")
    return np.sort(rng.choice(data.n, size=int(n_train), replace=False)).astype(np.intp)


def cmd_fit(args) -> int:
    cfg = _merge_config(
        args.config, FIT_KEYS,
        {"dataset": args.dataset, "model": args.model, "seed": args.seed,
         "n_train": args.n_train, "backend": args.backend},
        "fit",
    )
    out = _out_dir(args)
    spec = _spec(_require(cfg, "model", "fit"))
    if spec.kind not in MCMC_KINDS:
        raise SchemaError(f"fit needs a sampling model ({sorted(MCMC_KINDS)}), got {spec.kind!r}")
    if cfg["backend"] is not None:
        os.environ["BPCR_BACKEND"] = str(cfg["backend"])
    mcmc = _mcmc_config(cfg["mcmc"])
    data = load_dataset_csv(_require(cfg, "dataset", "fit"), require_y=True)
    sel_word, fit_word = _word_seeds(int(cfg["seed"]), 2)
    train_rows = _training_rows(data, cfg, sel_word)
    log.info("fit: %s on %d of %d rows", spec.label, train_rows.size, data.n)

    bundle = fit_models(
        [spec], data.z[train_rows], data.y[train_rows], data.coords[train_rows],
        mcmc, seed=fit_word, region_z=data.z, region_coords=data.coords,
        column_labels=data.predictor_labels,
    )
    model: FittedModel = bundle.models[spec.label]
    write_chain_csv(os.path.join(out, "chain.csv"), model.chain)
    write_json(os.path.join(out, "summary.json"), chain_summary(model.chain))
    write_model_json(
        os.path.join(out, "model.json"),
        kind=spec.kind, k=model.k, scaling=bundle.scaling, basis=bundle.basis,
        train=model.train, backend=backend_name(cfg["backend"]),
    )
    _echo_config(out, "fit", cfg)
    return 0


def cmd_predict(args) -> int:
    cfg = _merge_config(
        args.config, PREDICT_KEYS,
        {"model_dir": args.model_dir, "locations": args.locations, "seed": args.seed,
         "include_noise": False if args.no_noise else None, "backend": args.backend},
        "predict",
    )
    out = _out_dir(args)
    if cfg["backend"] is not None:
        os.environ["BPCR_BACKEND"] = str(cfg["backend"])
    model_dir = _require(cfg, "model_dir", "predict")
    snap = load_model_json(os.path.join(model_dir, "model.json"))
    chain = load_chain_csv(os.path.join(model_dir, "chain.csv"))
    new = load_dataset_csv(_require(cfg, "locations", "predict"), require_y=False)
    if new.n and new.z.shape[1] != snap["scaling"].means.size:
        raise DimensionMismatchError(
            f"locations file has {new.z.shape[1]} predictors, model expects {snap['scaling'].means.size}"
        )
    kind = snap["kind"]
    spec = BaselineSpec(kind=kind, k=snap["k"] if kind in FIXED_K_KINDS else None)
    model = FittedModel(
        spec=spec, k=snap["k"], beta_hat=None, chain=chain,
        train=snap["train"], spatial=kind in SPATIAL_KINDS,
    )
    if new.n == 0:
        results: list[PredictionResult] = []
    else:
        from .pca import apply_scaling, build_design

        x_new = build_design(apply_scaling(new.z, snap["scaling"]), snap["basis"])
        results = model.predict(
            x_new, new.coords,
            include_noise=bool(cfg["include_noise"]),
            rng=_word_seeds(int(cfg["seed"]), 1)[0],
            thin=prediction_thin(chain, int(cfg["predict_states"])),
            level=float(cfg["level"]),
            location_ids=list(new.ids),
        )
    write_predictions_csv(
        os.path.join(out, "predictions.csv"), results, new.coords,
        ids=list(new.ids), y_true=new.y,
    )
    _echo_config(out, "predict", cfg)
    log.info("predict: %d locations", new.n)
    return 0


def cmd_benchmark(args) -> int:
    cfg = _merge_config(
        args.config, BENCHMARK_KEYS,
        {"replicates": args.replicates, "seed": args.seed, "jobs": args.jobs,
         "training_sizes": [args.n_train] if args.n_train is not None else None,
         "models": [args.model] if args.model is not None else None,
         "include_noise": False if args.no_noise else None,
         "timings": True if args.timings else None},
        "benchmark",
    )
    out = _out_dir(args)
    plan = ExperimentPlan(
        model_specs=tuple(_spec(m) for m in cfg["models"]),
        training_sizes=tuple(int(n) for n in cfg["training_sizes"]),
        replicates=int(cfg["replicates"]),
        selection=str(cfg["selection"]),
        seed=int(cfg["seed"]),
    )
    synthetic = _synthetic_config(cfg["synthetic"])
    mcmc = _mcmc_config(cfg["mcmc"])
    log.info("benchmark: %d models x %s sizes x %d replicates",
             len(plan.model_specs), list(plan.training_sizes), plan.replicates)
    result = run_benchmark(
        plan, synthetic, mcmc,
        predict_states=int(cfg["predict_states"]),
        include_noise=bool(cfg["include_noise"]),
        level=float(cfg["level"]),
        jobs=int(cfg["jobs"]),
    )
    rows = result.rows
    aggregate = result.aggregate
    if not cfg["timings"]:
        # wall times vary run to run; zero them unless explicitly requested
        rows = tuple(type(r)(r.model, r.n_train, r.replicate, r.report, 0.0) for r in rows)
        aggregate = aggregate_rows(rows)
    write_benchmark_csv(os.path.join(out, "benchmark.csv"), rows)
    write_json(
        os.path.join(out, "benchmark.json"),
        {
            "aggregate": [dict(e) for e in aggregate],
            "failures": [
                {"model": f.model, "n_train": f.n_train, "replicate": f.replicate, "error": f.error}
                for f in result.failures
            ],
            "plan": {
                "models": [s.label for s in plan.model_specs],
                "training_sizes": list(plan.training_sizes),
                "replicates": plan.replicates,
                "selection": plan.selection,
                "seed": plan.seed,
            },
        },
    )
    write_plot_data_csv(os.path.join(out, "plot_data.csv"), aggregate)
    _echo_config(out, "benchmark", cfg)
    if result.failures:
        log.warning("benchmark: %d cells failed", len(result.failures))
        return 4
    return 0


def cmd_report(args) -> int:
    cfg = _merge_config(args.config, REPORT_KEYS, {"predictions": args.predictions}, "report")
    out = _out_dir(args)
    pred = load_predictions_csv(_require(cfg, "predictions", "report"))
    if pred["y_true"] is None:
        raise SchemaError("predictions file lacks the truth column", column="y_true")
    has_ci = bool(np.isfinite(pred["ci_low"]).all() and np.isfinite(pred["ci_high"]).all()) and pred["mean"].size > 0
    results = None
    if has_ci:
        results = [
            PredictionResult(
                location_id=pred["location_id"][i], samples=None,
                mean=float(pred["mean"][i]), median=float(pred["median"][i]),
                ci_low=float(pred["ci_low"][i]), ci_high=float(pred["ci_high"][i]),
                level=float(pred["level"][i]),
            )
            for i in range(pred["mean"].size)
        ]
    report = make_report(pred["mean"], pred["y_true"], results)
    write_json(os.path.join(out, "metrics.json"), report.to_dict())
    _echo_config(out, "report", cfg)
    return 0


# ---------------------------------------------------------------------------
# Parser and entry point
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bpcr",
        description="Spatial Bayesian component regression: simulate, fit, predict, benchmark, report.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--out", default=None, help="output directory (default: current)")

    p = sub.add_parser("simulate", help="write a synthetic dataset CSV and its ground truth")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="run the sampler on a dataset and persist the chain")
    common(p)
    p.add_argument("--dataset", help="dataset CSV path")
    p.add_argument("--model", help="model kind (or kind:k)")
    p.add_argument("--n-train", type=int, default=None, dest="n_train", help="training subset size")
    p.add_argument("--backend", choices=("auto", "numba", "numpy"), default=None)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="krige new locations from a fit directory")
    common(p)
    p.add_argument("--model-dir", dest="model_dir", help="directory written by fit")
    p.add_argument("--locations", help="CSV of locations to predict")
    p.add_argument("--no-noise", action="store_true", help="exclude residual noise from intervals")
    p.add_argument("--backend", choices=("auto", "numba", "numpy"), default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("benchmark", help="replicated model comparison on synthetic data")
    common(p)
    p.add_argument("--model", help="restrict to a single model kind")
    p.add_argument("--n-train", type=int, default=None, dest="n_train", help="single training size")
    p.add_argument("--replicates", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None, help="parallel replicate workers")
    p.add_argument("--no-noise", action="store_true")
    p.add_argument("--timings", action="store_true", help="record real wall times (breaks byte determinism)")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("report", help="metrics from a prediction file holding y_true")
    common(p)
    p.add_argument("--predictions", help="predictions CSV path")
    p.set_defaults(func=cmd_report)
    return parser


def _setup_logging() -> None:
    name = os.environ.get("BPCR_LOG", "WARNING").upper()
    level = getattr(logging, name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CONFIG_ERRORS as exc:
        print(f"bpcr {args.command}: {exc}", file=sys.stderr)
        return 2
    except BpcrError as exc:
        print(f"bpcr {args.command}: numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
