"""Distance matrices, the exponential spatial covariance, and Cholesky helpers.

The observation covariance is Sigma = C + tau2*I with C_ij = sigma2 * exp(-d_ij/phi).
tau2 > 0 makes Sigma positive definite in exact arithmetic; factorization failures are
purely numerical, handled by a small escalating diagonal jitter before giving up.
"""
from __future__ import annotations

import numpy as np
from scipy.spatial.distance import cdist

from .errors import InvalidParamError, NotPositiveDefiniteError

# Jitter policy: first retry adds JITTER_REL * trace(Sigma)/n to the diagonal,
# escalating by 10x, at most JITTER_TRIES retries.
JITTER_REL = 1e-10
JITTER_TRIES = 3


def as_coords(points) -> np.ndarray:
    """Coerce to an (n, 2) float array of planar coordinates."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise InvalidParamError(f"coordinates must be (n, 2), got {pts.shape}")
    if not np.isfinite(pts).all():
        raise InvalidParamError("coordinates must be finite")
    return pts


def distance_matrix(coords) -> np.ndarray:
    """Pairwise Euclidean distances; symmetric with an exactly zero diagonal."""
    pts = as_coords(coords)
    return cdist(pts, pts)


def exp_covariance(dist: np.ndarray, sigma2: float, phi: float) -> np.ndarray:
    """Exponential covariance sigma2 * exp(-d/phi) applied element-wise."""
    if phi <= 0:
        raise InvalidParamError(f"phi must be > 0, got {phi}")
    if sigma2 < 0:
        raise InvalidParamError(f"sigma2 must be >= 0, got {sigma2}")
    return sigma2 * np.exp(-np.asarray(dist, dtype=np.float64) / phi)


def total_covariance(c: np.ndarray, tau2: float) -> np.ndarray:
    """Sigma = C + tau2*I."""
    if tau2 <= 0:
        raise InvalidParamError(f"tau2 must be > 0, got {tau2}")
    c = np.asarray(c, dtype=np.float64)
    out = c.copy()
    out[np.diag_indices_from(out)] += tau2
    return out


def cross_covariance(coords_new, coords_train, sigma2: float, phi: float) -> np.ndarray:
    """m x n covariance between new and training locations."""
    d = cdist(as_coords(coords_new), as_coords(coords_train))
    return exp_covariance(d, sigma2, phi)


def cholesky_factor(sigma: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of a symmetric matrix, with the jitter retry policy."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if not np.isfinite(sigma).all():
        raise NotPositiveDefiniteError("covariance has non-finite entries")
    n = sigma.shape[0]
    base = JITTER_REL * np.trace(sigma) / n
    for attempt in range(JITTER_TRIES + 1):
        if attempt == 0:
            mat = sigma
        else:
            mat = sigma.copy()
            mat[np.diag_indices_from(mat)] += base * 10.0 ** (attempt - 1)
        try:
            return np.linalg.cholesky(mat)
        except np.linalg.LinAlgError:
            continue
    raise NotPositiveDefiniteError(
        f"factorization failed after {JITTER_TRIES} jitter retries (n={n})"
    )


def log_det_from_chol(chol: np.ndarray) -> float:
    """log|Sigma| = 2 * sum(log L_ii); never via a determinant routine."""
    return 2.0 * float(np.sum(np.log(np.diag(chol))))
