"""Prediction-quality metrics, MaxiMin subset selection, leave-one-out
cross-validation, and the replicated benchmark driver.

All relative metrics are percentages of the truth mean. The benchmark fits every
requested model on one shared training subset per (replicate, size) so model
comparisons see identical data.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import spatial
from .baselines import MCMC_KINDS, BaselineSpec, FittedModel, fit_model, parse_spec, residual_variance_ols
from .errors import (
    BpcrError,
    ConstantTruthError,
    DimensionMismatchError,
    InvalidParamError,
    ZeroMeanTruthError,
)
from .model import Chain, McmcConfig, RegressionPriors, SpatialPrior, default_priors, run_mcmc
from .pca import PCABasis, ScalingParams, apply_scaling, build_design, compute_basis, standardize, transform_new
from .predictor import PredictionResult
from .synthetic import SyntheticConfig, generate_dataset

SELECTION_MODES = ("random", "maximin")

# |mean(truth)| below this multiple of sd(truth) makes relative metrics unstable
ZERO_MEAN_REL = 1e-12


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def _check_pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if pred.shape != truth.shape:
        raise DimensionMismatchError(f"pred has {pred.size} values, truth has {truth.size}")
    if pred.size == 0:
        raise InvalidParamError("need at least one prediction")
    return pred, truth


def _truth_mean(truth: np.ndarray) -> float:
    m = float(truth.mean())
    if m == 0.0 or abs(m) < ZERO_MEAN_REL * float(truth.std()):
        raise ZeroMeanTruthError(f"mean(truth) = {m:.3e} is too close to zero for relative metrics")
    return m


def bias_pct(pred, truth) -> float:
    """Mean error as a percentage of the truth mean."""
    pred, truth = _check_pair(pred, truth)
    return 100.0 * float((pred - truth).mean()) / _truth_mean(truth)


def rmse_pct(pred, truth) -> float:
    """Root mean squared error as a percentage of the truth mean."""
    pred, truth = _check_pair(pred, truth)
    return 100.0 * math.sqrt(float(np.mean((pred - truth) ** 2))) / _truth_mean(truth)


def q2(pred, truth) -> float:
    """Percent of truth variance explained; negative when worse than the mean."""
    pred, truth = _check_pair(pred, truth)
    sst = float(np.sum((truth - truth.mean()) ** 2))
    if sst == 0.0:
        raise ConstantTruthError("truth is constant; explained variance undefined")
    return 100.0 * (1.0 - float(np.sum((pred - truth) ** 2)) / sst)


def interval_metrics(results, truth) -> tuple[float, float]:
    """(mean interval length, percent of truths inside the closed intervals)."""
    results = list(results)
    if not results:
        raise InvalidParamError("no prediction results")
    levels = {r.level for r in results}
    if len(levels) != 1:
        raise InvalidParamError(f"mixed interval levels {sorted(levels)}")
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if truth.size != len(results):
        raise DimensionMismatchError(f"{len(results)} intervals vs {truth.size} truths")
    lo = np.array([r.ci_low for r in results])
    hi = np.array([r.ci_high for r in results])
    covered = (truth >= lo) & (truth <= hi)
    return float(np.mean(hi - lo)), 100.0 * float(covered.mean())


@dataclass(frozen=True)
class MetricsReport:
    bias_pct: float
    rmse_pct: float
    q2: float
    n_eval: int
    ci_length_mean: float | None = None
    coverage_pct: float | None = None
    n_skipped: int = 0

    def to_dict(self) -> dict:
        return {
            "bias_pct": self.bias_pct,
            "rmse_pct": self.rmse_pct,
            "q2": self.q2,
            "n_eval": self.n_eval,
            "ci_length_mean": self.ci_length_mean,
            "coverage_pct": self.coverage_pct,
            "n_skipped": self.n_skipped,
        }


def make_report(pred, truth, results=None, n_skipped: int = 0) -> MetricsReport:
    """Bundle the three relative metrics, optionally with interval calibration."""
    pred, truth = _check_pair(pred, truth)
    ci_len = cov = None
    if results is not None:
        ci_len, cov = interval_metrics(results, truth)
    return MetricsReport(
        bias_pct=bias_pct(pred, truth),
        rmse_pct=rmse_pct(pred, truth),
        q2=q2(pred, truth),
        n_eval=int(truth.size),
        ci_length_mean=ci_len,
        coverage_pct=cov,
        n_skipped=n_skipped,
    )


# ---------------------------------------------------------------------------
# MaxiMin training-set selection
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SAConfig:
    """Annealing schedule for subset search: geometric cooling from the median
    pairwise distance down to stop_ratio of it."""

    iters_per_temp: int = 200
    cooling: float = 0.95
    stop_ratio: float = 1e-3
    t0: float | None = None

    def __post_init__(self):
        if self.iters_per_temp < 1:
            raise InvalidParamError(f"iters_per_temp must be >= 1, got {self.iters_per_temp}")
        if not 0.0 < self.cooling < 1.0:
            raise InvalidParamError(f"cooling must be in (0, 1), got {self.cooling}")
        if not 0.0 < self.stop_ratio < 1.0:
            raise InvalidParamError(f"stop_ratio must be in (0, 1), got {self.stop_ratio}")
        if self.t0 is not None and self.t0 < 0:
            raise InvalidParamError(f"t0 must be >= 0, got {self.t0}")


def subset_min_distance(dist: np.ndarray, idx) -> float:
    """Smallest pairwise distance within the indexed subset."""
    idx = np.asarray(idx, dtype=np.intp)
    if idx.size < 2:
        raise InvalidParamError("need at least two points for a pairwise minimum")
    sub = dist[np.ix_(idx, idx)]
    return float(sub[np.triu_indices(idx.size, k=1)].min())


def maximin_select(coords, n: int, rng=0, sa: SAConfig | None = None) -> np.ndarray:
    """Indices of an n-subset chosen to maximize the minimum pairwise distance,
    found by simulated annealing over single-point swaps. Returns sorted indices
    of the best subset seen."""
    coords = spatial.as_coords(coords)
    big_n = coords.shape[0]
    if not 2 <= n <= big_n:
        raise InvalidParamError(f"need 2 <= n <= {big_n}, got n={n}")
    if n == big_n:
        return np.arange(big_n)
    sa = sa if sa is not None else SAConfig()
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    dist = spatial.distance_matrix(coords)

    t0 = sa.t0 if sa.t0 is not None else float(np.median(dist[np.triu_indices(big_n, k=1)]))
    if t0 > 0:
        n_temps = int(math.floor(math.log(sa.stop_ratio) / math.log(sa.cooling))) + 1
        temps = [t0 * sa.cooling**k for k in range(n_temps)]
    else:
        temps = [0.0]  # coincident-point degenerate case: pure hill climb

    sel = np.array(rng.choice(big_n, size=n, replace=False), dtype=np.intp)
    in_subset = np.zeros(big_n, dtype=bool)
    in_subset[sel] = True
    out_pool = np.flatnonzero(~in_subset)
    pair_rows, pair_cols = np.triu_indices(n, k=1)

    def objective(idx):
        return float(dist[idx[pair_rows], idx[pair_cols]].min())

    cur = objective(sel)
    best, best_sel = cur, sel.copy()
    for t in temps:
        for _ in range(sa.iters_per_temp):
            i = int(rng.integers(n))
            j = int(rng.integers(big_n - n))
            cand = sel.copy()
            cand[i] = out_pool[j]
            new = objective(cand)
            delta = new - cur
            if delta >= 0 or (t > 0 and rng.random() < math.exp(delta / t)):
                removed = sel[i]
                sel, cur = cand, new
                out_pool[j] = removed
                if cur > best:
                    best, best_sel = cur, sel.copy()
    return np.sort(best_sel)


# ---------------------------------------------------------------------------
# Shared fitting pipeline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FitBundle:
    """Everything one training set produced: the component basis, the derived
    priors, and one fitted model per requested spec."""

    scaling: ScalingParams
    basis: PCABasis
    models: dict
    fit_seconds: dict
    predict_seeds: dict
    sigma2_pcr: float | None
    reg_priors: RegressionPriors | None
    spatial_prior: SpatialPrior | None
    bootstrap_prior: SpatialPrior | None
    bootstrap_chain: Chain | None


def _as_spec_list(specs) -> list[BaselineSpec]:
    specs = [specs] if isinstance(specs, (BaselineSpec, str)) else list(specs)
    if not specs:
        raise InvalidParamError("no model specs given")
    specs = [parse_spec(s) for s in specs]
    labels = [s.label for s in specs]
    if len(set(labels)) != len(labels):
        raise InvalidParamError(f"duplicate model labels in {labels}")
    return specs


def fit_models(
    specs,
    z_raw,
    y,
    coords,
    mcmc_config: McmcConfig | None = None,
    seed: int = 0,
    *,
    region_z=None,
    region_coords=None,
    column_labels=None,
) -> FitBundle:
    """Standardize, build the component design, derive data-driven priors, and
    fit each requested model on the same training data.

    The component basis is computed from region_z, the predictor matrix of the
    whole study area (predictors are known at prediction locations too, only
    the response is not); it defaults to the training predictors. On a region
    basis the training block of the design is generally not orthogonal, which
    is exactly where coefficient shrinkage earns its keep. Prior medians for
    the spatial variance split the non-spatial residual variance, which is
    itself estimated by a Bayesian regression whose tau2 prior median comes
    from the full-rank least-squares fit. region_coords (the whole study area,
    defaulting to the training layout) sets the range-prior scale. The
    bootstrap chain doubles as the non-spatial Bayesian model when one is
    requested, so that model costs nothing extra.
    """
    specs = _as_spec_list(specs)
    y = np.asarray(y, dtype=np.float64).ravel()
    coords = spatial.as_coords(coords)
    if y.size != coords.shape[0]:
        raise DimensionMismatchError(f"{y.size} responses vs {coords.shape[0]} locations")
    mcmc_config = mcmc_config if mcmc_config is not None else McmcConfig()

    z_train = np.asarray(z_raw, dtype=np.float64)
    if z_train.shape[0] != y.size:
        raise DimensionMismatchError(f"{z_train.shape[0]} predictor rows vs {y.size} responses")
    z_std_region, scaling = standardize(z_train if region_z is None else region_z, column_labels)
    basis = compute_basis(z_std_region)
    if region_z is None:
        design = build_design(z_std_region, basis)
    else:
        design = build_design(apply_scaling(z_train, scaling), basis)
    region = coords if region_coords is None else spatial.as_coords(region_coords)

    words = np.random.SeedSequence(seed).generate_state(1 + 2 * len(specs), dtype=np.uint64)

    sigma2_pcr = None
    reg_priors = spatial_prior = boot_prior = None
    boot_chain = None
    boot_cfg = None
    boot_seconds = 0.0
    if any(s.kind in MCMC_KINDS for s in specs):
        start = time.perf_counter()
        resvar = residual_variance_ols(design, y)
        reg_priors, halved = default_priors(y, region, resvar)
        # the non-spatial run starts tau2 at the full residual variance but keeps
        # the prior flat in log: the least-squares estimate has few dof at small n
        boot_prior = replace(
            halved,
            mu_theta=(resvar, resvar, halved.mu_theta[2]),
            sigma_theta=(np.inf,) + tuple(halved.sigma_theta[1:]),
        )
        boot_cfg = replace(mcmc_config, seed=int(words[0]))
        boot_chain = run_mcmc(design, y, coords, reg_priors, boot_prior, boot_cfg, spatial_effect=False)
        sigma2_pcr = float(boot_chain.post_burn_in().parameter("tau2").mean())
        _, spatial_prior = default_priors(y, region, sigma2_pcr)
        boot_seconds = time.perf_counter() - start

    models, fit_seconds, predict_seeds = {}, {}, {}
    for i, spec in enumerate(specs):
        start = time.perf_counter()
        if spec.kind == "bpcr":
            model = fit_model(spec, design, y, coords, reg_priors, boot_prior, boot_cfg, bpcr_chain=boot_chain)
            elapsed = boot_seconds
        elif spec.kind in MCMC_KINDS:
            cfg = replace(mcmc_config, seed=int(words[1 + 2 * i]))
            model = fit_model(spec, design, y, coords, reg_priors, spatial_prior, cfg)
            elapsed = time.perf_counter() - start
        else:
            model = fit_model(spec, design, y, coords, None, None, None)
            elapsed = time.perf_counter() - start
        models[spec.label] = model
        fit_seconds[spec.label] = elapsed
        predict_seeds[spec.label] = int(words[2 + 2 * i])

    return FitBundle(
        scaling=scaling,
        basis=basis,
        models=models,
        fit_seconds=fit_seconds,
        predict_seeds=predict_seeds,
        sigma2_pcr=sigma2_pcr,
        reg_priors=reg_priors,
        spatial_prior=spatial_prior,
        bootstrap_prior=boot_prior,
        bootstrap_chain=boot_chain,
    )


def prediction_thin(chain: Chain | None, predict_states: int) -> int:
    """Stride that caps the number of posterior states used for prediction."""
    if chain is None:
        return 1
    if predict_states < 1:
        raise InvalidParamError(f"predict_states must be >= 1, got {predict_states}")
    kept = len(chain) - chain.burn_in
    return max(1, math.ceil(kept / predict_states))


# ---------------------------------------------------------------------------
# Experiment plan and leave-one-out protocol
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentPlan:
    model_specs: tuple
    training_sizes: tuple
    replicates: int
    selection: str = "random"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "model_specs", tuple(_as_spec_list(self.model_specs)))
        sizes = tuple(int(n) for n in self.training_sizes)
        if not sizes or any(n < 1 for n in sizes):
            raise InvalidParamError(f"training_sizes must be positive, got {self.training_sizes}")
        object.__setattr__(self, "training_sizes", sizes)
        if self.replicates < 1:
            raise InvalidParamError(f"replicates must be >= 1, got {self.replicates}")
        if self.selection not in SELECTION_MODES:
            raise InvalidParamError(f"selection must be one of {SELECTION_MODES}, got {self.selection!r}")
        if self.seed < 0:
            raise InvalidParamError(f"seed must be >= 0, got {self.seed}")


def _dataset_arrays(dataset) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    z = getattr(dataset, "z", None)
    if z is None:
        z = getattr(dataset, "predictors", None)
    y = getattr(dataset, "y", None)
    coords = getattr(dataset, "coords", None)
    if z is None or y is None or coords is None:
        raise InvalidParamError("dataset needs predictors (z), y, and coords")
    return np.asarray(z, dtype=np.float64), np.asarray(y, dtype=np.float64).ravel(), spatial.as_coords(coords)


def _select_training(coords_pool, n, rng, selection, sa):
    if n == coords_pool.shape[0]:
        return np.arange(n, dtype=np.intp)
    if selection == "maximin":
        return maximin_select(coords_pool, n, rng, sa)
    return np.sort(np.asarray(rng.choice(coords_pool.shape[0], size=n, replace=False), dtype=np.intp))


def loo_crossval(
    dataset,
    plan: ExperimentPlan,
    model_spec: BaselineSpec,
    n: int,
    seed: int | None = None,
    *,
    mcmc_config: McmcConfig | None = None,
    sa: SAConfig | None = None,
    predict_states: int = 800,
    include_noise: bool = True,
    level: float = 0.95,
) -> MetricsReport:
    """Hold out each location in turn, pick n training locations from the rest
    per plan.selection, fit, and predict the held-out response. Folds that fail
    numerically are skipped and counted. Integer seeding keeps fold training
    sets identical across model specs."""
    z, y, coords = _dataset_arrays(dataset)
    big_n = y.size
    if not 1 <= n <= big_n - 1:
        raise InvalidParamError(f"need 1 <= n <= {big_n - 1}, got n={n}")
    seed = plan.seed if seed is None else seed

    preds, truths, results = [], [], []
    skipped = 0
    track_intervals = model_spec.kind in MCMC_KINDS
    for j in range(big_n):
        words = np.random.SeedSequence(entropy=seed, spawn_key=(j,)).generate_state(2, dtype=np.uint64)
        rest = np.delete(np.arange(big_n, dtype=np.intp), j)
        local = _select_training(coords[rest], n, np.random.default_rng(int(words[0])), plan.selection, sa)
        train = rest[local]
        try:
            bundle = fit_models(
                [model_spec], z[train], y[train], coords[train],
                mcmc_config, seed=int(words[1]), region_z=z, region_coords=coords,
            )
            model: FittedModel = bundle.models[model_spec.label]
            x_new = transform_new(z[j], bundle.scaling, bundle.basis)
            res = model.predict(
                x_new, coords[j : j + 1],
                include_noise=include_noise,
                rng=bundle.predict_seeds[model_spec.label],
                thin=prediction_thin(model.chain, predict_states),
                level=level,
                location_ids=[j],
            )[0]
        except BpcrError:
            skipped += 1
            continue
        preds.append(res.mean)
        truths.append(y[j])
        if track_intervals:
            results.append(res)
    if not preds:
        raise InvalidParamError(f"all {big_n} folds failed")
    return make_report(preds, truths, results if track_intervals else None, n_skipped=skipped)


# ---------------------------------------------------------------------------
# Replicated benchmark
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BenchmarkRow:
    model: str
    n_train: int
    replicate: int
    report: MetricsReport
    wall_time_s: float

    def to_dict(self) -> dict:
        out = {"model": self.model, "n_train": self.n_train, "replicate": self.replicate}
        out.update(self.report.to_dict())
        out["wall_time_s"] = self.wall_time_s
        return out


@dataclass(frozen=True)
class BenchmarkFailure:
    model: str
    n_train: int
    replicate: int
    error: str


@dataclass(frozen=True)
class BenchmarkResult:
    rows: tuple
    aggregate: tuple
    failures: tuple

    def rows_for(self, model: str, n_train: int | None = None) -> list[BenchmarkRow]:
        return [
            r for r in self.rows
            if r.model == model and (n_train is None or r.n_train == n_train)
        ]


_AGG_FIELDS = ("bias_pct", "rmse_pct", "q2", "ci_length_mean", "coverage_pct")


def aggregate_rows(rows) -> tuple:
    """Per (model, n): mean and sample sd of each metric over replicates."""
    groups: dict = {}
    for row in rows:
        groups.setdefault((row.model, row.n_train), []).append(row)
    out = []
    for (model, n_train) in sorted(groups):
        members = sorted(groups[(model, n_train)], key=lambda r: r.replicate)
        entry = {"model": model, "n_train": n_train, "replicates": len(members)}
        for name in _AGG_FIELDS:
            vals = [getattr(m.report, name) for m in members]
            if any(v is None for v in vals):
                entry[f"{name}_mean"] = None
                entry[f"{name}_sd"] = None
                continue
            arr = np.array(vals, dtype=np.float64)
            entry[f"{name}_mean"] = float(arr.mean())
            entry[f"{name}_sd"] = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
        entry["wall_time_s_mean"] = float(np.mean([m.wall_time_s for m in members]))
        out.append(entry)
    return tuple(out)


def _run_replicate(task) -> tuple[list, list]:
    plan, syn_cfg, mcmc_cfg, rep, words, predict_states, include_noise, level, sa = task
    data = generate_dataset(replace(syn_cfg, seed=int(words[0])))
    big_n = data.y.size
    rows, failures = [], []
    for si, n in enumerate(plan.training_sizes):
        sel_rng = np.random.default_rng(int(words[1 + 2 * si]))
        train = _select_training(data.coords, n, sel_rng, plan.selection, sa)
        test = np.setdiff1d(np.arange(big_n, dtype=np.intp), train)
        try:
            bundle = fit_models(
                plan.model_specs, data.z[train], data.y[train], data.coords[train],
                mcmc_cfg, seed=int(words[2 + 2 * si]),
                region_z=data.z, region_coords=data.coords,
            )
            x_test = build_design(apply_scaling(data.z[test], bundle.scaling), bundle.basis)
        except BpcrError as exc:
            failures.extend(BenchmarkFailure(s.label, n, rep, str(exc)) for s in plan.model_specs)
            continue
        for spec in plan.model_specs:
            model: FittedModel = bundle.models[spec.label]
            start = time.perf_counter()
            try:
                results = model.predict(
                    x_test, data.coords[test],
                    include_noise=include_noise,
                    rng=bundle.predict_seeds[spec.label],
                    thin=prediction_thin(model.chain, predict_states),
                    level=level,
                    location_ids=test.tolist(),
                )
                wall = bundle.fit_seconds[spec.label] + (time.perf_counter() - start)
                pred = np.array([r.mean for r in results])
                report = make_report(pred, data.y[test], results if spec.kind in MCMC_KINDS else None)
            except BpcrError as exc:
                failures.append(BenchmarkFailure(spec.label, n, rep, str(exc)))
                continue
            rows.append(BenchmarkRow(spec.label, n, rep, report, wall))
    return rows, failures


def run_benchmark(
    plan: ExperimentPlan,
    synthetic_config: SyntheticConfig,
    mcmc_config: McmcConfig | None = None,
    *,
    predict_states: int = 800,
    include_noise: bool = True,
    level: float = 0.95,
    jobs: int = 1,
    sa: SAConfig | None = None,
) -> BenchmarkResult:
    """Fresh dataset and training subset per replicate; every model fits the
    same subset; metrics on the held-out cells. Rows come back sorted by
    (model, n, replicate) so output is order-independent of scheduling."""
    if max(plan.training_sizes) >= synthetic_config.n_cells:
        raise InvalidParamError(
            f"training sizes {plan.training_sizes} must stay below N={synthetic_config.n_cells}"
        )
    mcmc_config = mcmc_config if mcmc_config is not None else McmcConfig()
    per_rep = 1 + 2 * len(plan.training_sizes)
    words = np.random.SeedSequence(plan.seed).generate_state(plan.replicates * per_rep, dtype=np.uint64)
    words = words.reshape(plan.replicates, per_rep)
    tasks = [
        (plan, synthetic_config, mcmc_config, rep, tuple(int(w) for w in words[rep]),
         predict_states, include_noise, level, sa)
        for rep in range(plan.replicates)
    ]
    if jobs > 1 and plan.replicates > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, plan.replicates)) as pool:
            chunks = list(pool.map(_run_replicate, tasks))
    else:
        chunks = [_run_replicate(t) for t in tasks]

    rows = sorted(
        (r for part, _ in chunks for r in part),
        key=lambda r: (r.model, r.n_train, r.replicate),
    )
    failures = sorted(
        (f for _, part in chunks for f in part),
        key=lambda f: (f.model, f.n_train, f.replicate),
    )
    return BenchmarkResult(rows=tuple(rows), aggregate=aggregate_rows(rows), failures=tuple(failures))
