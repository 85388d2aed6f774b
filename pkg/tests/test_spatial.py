import numpy as np
import pytest

from bpcr.errors import InvalidParamError, NotPositiveDefiniteError
from bpcr.spatial import (
    as_coords,
    cholesky_factor,
    cross_covariance,
    distance_matrix,
    exp_covariance,
    log_det_from_chol,
    total_covariance,
)


def test_as_coords_shapes():
    pts = as_coords([[0.0, 1.0], [2.0, 3.0]])
    assert pts.shape == (2, 2)
    single = as_coords([0.5, 0.5])
    assert single.shape == (1, 2)
    with pytest.raises(InvalidParamError):
        as_coords(np.zeros((3, 3)))
    with pytest.raises(InvalidParamError):
        as_coords([[0.0, np.nan]])


def test_distance_matrix_triangle():
    coords = [[0.0, 0.0], [3.0, 4.0], [0.0, 4.0]]
    d = distance_matrix(coords)
    assert d.shape == (3, 3)
    assert np.allclose(d, d.T)
    assert np.all(np.diag(d) == 0.0)
    assert d[0, 1] == pytest.approx(5.0)
    assert d[0, 2] == pytest.approx(4.0)
    assert d[1, 2] == pytest.approx(3.0)


def test_exp_covariance_analytic_points():
    # exact values at d = 0 and d = phi
    d = np.array([[0.0, 0.7], [0.7, 0.0]])
    c = exp_covariance(d, sigma2=2.5, phi=0.7)
    assert c[0, 0] == 2.5
    assert c[0, 1] == pytest.approx(2.5 * np.exp(-1.0), abs=0.0, rel=1e-15)


def test_exp_covariance_param_checks():
    d = np.zeros((2, 2))
    with pytest.raises(InvalidParamError):
        exp_covariance(d, sigma2=1.0, phi=0.0)
    with pytest.raises(InvalidParamError):
        exp_covariance(d, sigma2=-1.0, phi=1.0)
    # sigma2 = 0 is allowed and gives the zero matrix
    assert np.all(exp_covariance(d, sigma2=0.0, phi=1.0) == 0.0)


def test_exp_covariance_monotone_in_distance():
    d = np.linspace(0.0, 3.0, 40).reshape(1, -1)
    c = exp_covariance(d, sigma2=1.3, phi=0.4).ravel()
    assert np.all(np.diff(c) < 0)


def test_total_covariance_diagonal_only():
    rng = np.random.default_rng(0)
    c = exp_covariance(distance_matrix(rng.uniform(size=(6, 2))), 1.0, 0.5)
    sigma = total_covariance(c, tau2=0.3)
    off = ~np.eye(6, dtype=bool)
    assert np.array_equal(sigma[off], c[off])
    assert np.allclose(np.diag(sigma), np.diag(c) + 0.3)
    with pytest.raises(InvalidParamError):
        total_covariance(c, tau2=0.0)


def test_cross_covariance_pointwise():
    a = np.array([[0.0, 0.0], [1.0, 0.0]])
    b = np.array([[0.0, 1.0], [1.0, 1.0], [2.0, 0.0]])
    c = cross_covariance(a, b, sigma2=1.7, phi=0.9)
    assert c.shape == (2, 3)
    d = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2))
    assert np.allclose(c, 1.7 * np.exp(-d / 0.9), rtol=1e-15)


def test_cholesky_round_trip():
    rng = np.random.default_rng(3)
    coords = rng.uniform(-0.5, 0.5, size=(20, 2))
    sigma = total_covariance(exp_covariance(distance_matrix(coords), 1.0, 0.5), 0.25)
    chol = cholesky_factor(sigma)
    assert np.allclose(np.triu(chol, 1), 0.0)
    assert np.allclose(chol @ chol.T, sigma, rtol=1e-12, atol=1e-12)


def test_cholesky_jitter_rescues_singular_psd():
    # rank-1 PSD matrix: plain factorization fails, a tiny diagonal bump succeeds
    sigma = np.full((5, 5), 2.0)
    with pytest.raises(np.linalg.LinAlgError):
        np.linalg.cholesky(sigma)
    chol = cholesky_factor(sigma)
    assert np.allclose(chol @ chol.T, sigma, atol=1e-6)


def test_cholesky_rejects_indefinite():
    with pytest.raises(NotPositiveDefiniteError):
        cholesky_factor(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(NotPositiveDefiniteError):
        cholesky_factor(np.array([[1.0, np.nan], [np.nan, 1.0]]))


def test_log_det_matches_slogdet():
    rng = np.random.default_rng(8)
    coords = rng.uniform(size=(15, 2))
    sigma = total_covariance(exp_covariance(distance_matrix(coords), 0.8, 0.3), 0.2)
    sign, ref = np.linalg.slogdet(sigma)
    assert sign == 1.0
    assert log_det_from_chol(cholesky_factor(sigma)) == pytest.approx(ref, rel=1e-12)
