"""Posterior predictive distributions at new locations.

Per chain state: y_new = x_new beta + C_new Sigma^-1 (y - X beta); with noise on,
a Gaussian draw with the kriging conditional variance tau2 + sigma2 - c Sigma^-1 c'
is added. The training covariance is factored once per state and shared across all
new locations.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import solve_triangular
from scipy.spatial.distance import cdist

from . import spatial
from .backend import get_kernels
from .errors import DimensionMismatchError, InvalidParamError, NotPositiveDefiniteError
from .model import Chain, ModelState


class TrainData(NamedTuple):
    x: np.ndarray  # (n, p+1) design
    y: np.ndarray  # (n,)
    coords: np.ndarray  # (n, 2)


@dataclass(frozen=True)
class PredictionResult:
    location_id: object
    samples: np.ndarray | None
    mean: float
    median: float
    ci_low: float
    ci_high: float
    level: float


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def predict_mean_given_state(x_new, coords_new, state: ModelState, train: TrainData) -> float:
    """Kriging-corrected linear prediction for one location and one state."""
    x_new = np.asarray(x_new, dtype=np.float64)
    tau2, sigma2, phi = state.theta
    dist = spatial.distance_matrix(train.coords)
    sigma = spatial.total_covariance(spatial.exp_covariance(dist, sigma2, phi), tau2)
    chol = spatial.cholesky_factor(sigma)
    resid = train.y - train.x @ state.beta
    w = solve_triangular(chol.T, solve_triangular(chol, resid, lower=True), lower=False)
    c_new = spatial.cross_covariance(np.atleast_2d(coords_new), train.coords, sigma2, phi)
    return float(x_new @ state.beta + c_new[0] @ w)


def posterior_predictive(
    x_new,
    coords_new,
    chain: Chain,
    train: TrainData,
    *,
    include_noise: bool = True,
    rng=0,
    thin: int = 1,
    backend: str | None = None,
) -> np.ndarray:
    """Samples (one row per retained post-burn-in state, thinned) at m locations."""
    x_new = np.ascontiguousarray(np.atleast_2d(x_new), dtype=np.float64)
    coords_new = spatial.as_coords(coords_new)
    if x_new.shape[0] != coords_new.shape[0]:
        raise DimensionMismatchError(
            f"{x_new.shape[0]} design rows vs {coords_new.shape[0]} locations"
        )
    if x_new.shape[1] != train.x.shape[1]:
        raise DimensionMismatchError(
            f"design has {x_new.shape[1]} columns, training used {train.x.shape[1]}"
        )
    if thin < 1:
        raise InvalidParamError(f"thin must be >= 1, got {thin}")
    tail = chain.post_burn_in()
    beta_states = np.ascontiguousarray(tail.beta[::thin])
    theta_states = np.ascontiguousarray(tail.theta[::thin])
    n_states, m = beta_states.shape[0], x_new.shape[0]
    if n_states == 0:
        raise InvalidParamError("chain has no post-burn-in states")

    dist = np.ascontiguousarray(spatial.distance_matrix(train.coords))
    dist_new = np.ascontiguousarray(cdist(coords_new, spatial.as_coords(train.coords)))
    z_noise = _as_rng(rng).standard_normal((n_states, m)) if include_noise else np.zeros((1, 1))

    kernels = get_kernels(backend)
    samples, status, fail_state = kernels.predict_samples(
        x_new,
        dist_new,
        dist,
        np.ascontiguousarray(train.x, dtype=np.float64),
        np.ascontiguousarray(train.y, dtype=np.float64),
        beta_states,
        theta_states,
        1 if include_noise else 0,
        z_noise,
    )
    if status != kernels.STATUS_OK:
        raise NotPositiveDefiniteError(
            f"training covariance factorization failed at chain state {fail_state}"
        )
    return samples


def predictive_draws(
    x_new, coords_new, chain: Chain, train: TrainData, include_noise: bool = True, rng=0
) -> np.ndarray:
    """Predictive samples for a single location, one per post-burn-in state."""
    samples = posterior_predictive(
        np.atleast_2d(x_new), np.atleast_2d(coords_new), chain, train,
        include_noise=include_noise, rng=rng,
    )
    return samples[:, 0]


def summarize(samples, level: float = 0.95, location_id=None) -> PredictionResult:
    """Mean, median, and the equal-tailed empirical interval of the draws."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size == 0:
        raise InvalidParamError("no samples to summarize")
    if not 0 < level < 1:
        raise InvalidParamError(f"level must be in (0, 1), got {level}")
    half = (1.0 - level) / 2.0
    lo, hi = np.quantile(samples, [half, 1.0 - half])
    return PredictionResult(
        location_id=location_id,
        samples=samples,
        mean=float(samples.mean()),
        median=float(np.median(samples)),
        ci_low=float(lo),
        ci_high=float(hi),
        level=level,
    )
