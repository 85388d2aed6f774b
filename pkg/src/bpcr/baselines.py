"""Comparison models: plain and truncated least-squares fits, their spatial
counterparts with a flat coefficient prior, the adaptive component-count rule,
and the shrinkage models sharing one fitting interface."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParamError, RankDeficientError
from .model import (
    FLAT_ALPHA,
    Chain,
    McmcConfig,
    RegressionPriors,
    SpatialPrior,
    run_mcmc,
)
from .predictor import PredictionResult, TrainData, posterior_predictive, summarize

KINDS = (
    "pcr",
    "pcr_spatial",
    "pcr_k",
    "pcr_k_spatial",
    "pcr_adaptive",
    "pcr_adaptive_spatial",
    "bpcr",
    "bpcr_spatial",
)
SPATIAL_KINDS = frozenset(k for k in KINDS if k.endswith("_spatial"))
MCMC_KINDS = SPATIAL_KINDS | {"bpcr"}
FIXED_K_KINDS = frozenset({"pcr_k", "pcr_k_spatial"})


@dataclass(frozen=True)
class BaselineSpec:
    kind: str
    k: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidParamError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        if (self.kind in FIXED_K_KINDS) != (self.k is not None):
            raise InvalidParamError(f"k must be given exactly for {sorted(FIXED_K_KINDS)}, got {self}")
        if self.k is not None and self.k < 1:
            raise InvalidParamError(f"k must be >= 1, got {self.k}")

    @property
    def label(self) -> str:
        return self.kind if self.k is None else f"{self.kind}{self.k}"


def parse_spec(raw) -> BaselineSpec:
    """Coerce 'kind' or 'kind:k' text (or pass through an existing spec)."""
    if isinstance(raw, BaselineSpec):
        return raw
    text = str(raw)
    if ":" in text:
        kind, _, num = text.partition(":")
        try:
            k = int(num)
        except ValueError:
            raise InvalidParamError(f"bad model spec {text!r}; expected kind or kind:k") from None
        return BaselineSpec(kind=kind, k=k)
    return BaselineSpec(kind=text, k=None)


def fit_ols(x, y, k: int) -> np.ndarray:
    """Least squares on the intercept plus the first k components; rest zeroed."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if not 1 <= k <= x.shape[1] - 1:
        raise InvalidParamError(f"k must be in [1, {x.shape[1] - 1}], got {k}")
    sub = x[:, : k + 1]
    coef, _, rank, _ = np.linalg.lstsq(sub, y, rcond=None)
    if rank < k + 1:
        raise RankDeficientError(f"design rank {rank} < {k + 1} columns")
    beta = np.zeros(x.shape[1])
    beta[: k + 1] = coef
    return beta


def residual_variance_ols(x, y) -> float:
    """Full-component residual variance SSR/(n - p - 1); var(y) when out of dof."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, p1 = x.shape
    dof = n - p1
    if dof < 1:
        return max(float(np.var(y, ddof=1)), 1e-12)
    beta = fit_ols(x, y, p1 - 1)
    resid = y - x @ beta
    return max(float(resid @ resid) / dof, 1e-12)


def _loo_rmse(sub, y):
    """Leave-one-out RMSE of an OLS fit via the hat-matrix identity."""
    q, _ = np.linalg.qr(sub)
    h = np.einsum("ij,ij->i", q, q)
    coef, _, rank, _ = np.linalg.lstsq(sub, y, rcond=None)
    if rank < sub.shape[1]:
        raise RankDeficientError(f"design rank {rank} < {sub.shape[1]} columns")
    resid = y - sub @ coef
    denom = 1.0 - h
    if np.any(denom <= 1e-12):
        raise RankDeficientError("leverage ~ 1; leave-one-out residual undefined")
    loo = resid / denom
    return math.sqrt(float(loo @ loo) / sub.shape[0])


def select_k_adaptive(x, y, tolerance: float = 0.05, use_loo: bool = False) -> int:
    """Smallest component count whose training RMSE is within (1+tolerance) of the
    best over all counts. Rank-deficient counts are skipped."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, p1 = x.shape
    if n <= 2:
        raise InvalidParamError(f"need n > 2 rows, got {n}")
    if not tolerance >= 0:
        raise InvalidParamError(f"tolerance must be >= 0, got {tolerance}")
    rmses: dict[int, float] = {}
    for q in range(1, p1):
        sub = x[:, : q + 1]
        try:
            if use_loo:
                rmses[q] = _loo_rmse(sub, y)
            else:
                coef, _, rank, _ = np.linalg.lstsq(sub, y, rcond=None)
                if rank < q + 1:
                    raise RankDeficientError(f"rank {rank}")
                resid = y - sub @ coef
                rmses[q] = math.sqrt(float(resid @ resid) / n)
        except RankDeficientError:
            continue
    if not rmses:
        raise RankDeficientError("no component count gave a full-rank fit")
    best = min(rmses.values())
    for q in sorted(rmses):
        if rmses[q] <= (1.0 + tolerance) * best:
            return q
    return max(rmses)  # unreachable: the minimizer always qualifies


def fit_spatial_flat(x, y, coords, k: int, spatial_prior: SpatialPrior, config: McmcConfig) -> Chain:
    """Spatial chain with an effectively flat coefficient prior on the first k
    components plus intercept (precisions frozen near zero, no shrinkage step)."""
    x = np.asarray(x, dtype=np.float64)
    placeholder = RegressionPriors()  # not sampled; values irrelevant
    return run_mcmc(
        x[:, : k + 1],
        y,
        coords,
        placeholder,
        spatial_prior,
        config,
        spatial_effect=True,
        fixed_alpha=(FLAT_ALPHA, FLAT_ALPHA),
    )


@dataclass(frozen=True)
class FittedModel:
    """One fitted baseline: least-squares coefficients or an MCMC chain over the
    first k components (plus intercept) of a shared design."""

    spec: BaselineSpec
    k: int
    beta_hat: np.ndarray | None
    chain: Chain | None
    train: TrainData | None
    spatial: bool

    def predict(
        self,
        x_new,
        coords_new,
        *,
        include_noise: bool = True,
        rng=0,
        thin: int = 1,
        level: float = 0.95,
        location_ids=None,
    ) -> list[PredictionResult]:
        """Per-location predictions; interval fields are NaN for pure point fits."""
        x_new = np.atleast_2d(np.asarray(x_new, dtype=np.float64))
        m = x_new.shape[0]
        ids = list(location_ids) if location_ids is not None else list(range(m))
        if self.chain is None:
            point = x_new @ self.beta_hat
            return [
                PredictionResult(
                    location_id=ids[j], samples=None, mean=float(point[j]),
                    median=float(point[j]), ci_low=math.nan, ci_high=math.nan, level=level,
                )
                for j in range(m)
            ]
        samples = posterior_predictive(
            x_new[:, : self.k + 1],
            coords_new,
            self.chain,
            self.train,
            include_noise=include_noise,
            rng=rng,
            thin=thin,
        )
        return [summarize(samples[:, j], level=level, location_id=ids[j]) for j in range(m)]


def fit_model(
    spec: BaselineSpec,
    x,
    y,
    coords,
    reg_priors: RegressionPriors | None,
    spatial_prior: SpatialPrior | None,
    config: McmcConfig | None,
    *,
    bpcr_chain: Chain | None = None,
) -> FittedModel:
    """Fit one baseline on a prepared design (priors already derived by the caller).

    bpcr_chain short-circuits the `bpcr` kind when the caller already ran that
    chain while deriving the spatial prior medians.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    p = x.shape[1] - 1
    kind = spec.kind

    if kind in ("pcr", "pcr_k", "pcr_adaptive"):
        if kind == "pcr":
            k = p
        elif kind == "pcr_k":
            k = spec.k
        else:
            k = select_k_adaptive(x, y)
        return FittedModel(spec=spec, k=k, beta_hat=fit_ols(x, y, k), chain=None, train=None, spatial=False)

    if config is None or spatial_prior is None:
        raise InvalidParamError(f"{kind} needs a sampler config and spatial prior")

    if kind in ("pcr_spatial", "pcr_k_spatial", "pcr_adaptive_spatial"):
        if kind == "pcr_spatial":
            k = p
        elif kind == "pcr_k_spatial":
            k = spec.k
        else:
            k = select_k_adaptive(x, y)
        chain = fit_spatial_flat(x, y, coords, k, spatial_prior, config)
        train = TrainData(x=x[:, : k + 1].copy(), y=y.copy(), coords=np.asarray(coords, float).copy())
        return FittedModel(spec=spec, k=k, beta_hat=None, chain=chain, train=train, spatial=True)

    if reg_priors is None:
        raise InvalidParamError(f"{kind} needs regression priors")
    spatial_effect = kind == "bpcr_spatial"
    if kind == "bpcr" and bpcr_chain is not None:
        chain = bpcr_chain
    else:
        chain = run_mcmc(
            x, y, coords, reg_priors, spatial_prior, config, spatial_effect=spatial_effect
        )
    train = TrainData(x=x.copy(), y=y.copy(), coords=np.asarray(coords, float).copy())
    return FittedModel(spec=spec, k=p, beta_hat=None, chain=chain, train=train, spatial=spatial_effect)
