"""Full-chain behaviour: determinism, support constraints, sampler flags, and a
fixed-variance ridge oracle."""
import math

import numpy as np
import pytest

from bpcr.errors import DimensionMismatchError, InvalidParamError
from bpcr.model import (
    McmcConfig,
    RegressionPriors,
    SpatialPrior,
    run_mcmc,
)


def _problem(seed=0, n=40, p=4, spatial_signal=True):
    rng = np.random.default_rng(seed)
    coords = rng.random((n, 2))
    x = np.column_stack([np.ones(n), rng.standard_normal((n, p))])
    beta = np.concatenate([[3.0], rng.uniform(-1.0, 1.0, p)])
    y = x @ beta + 0.4 * rng.standard_normal(n)
    if spatial_signal:
        from bpcr import spatial

        cov = spatial.exp_covariance(spatial.distance_matrix(coords), 0.8, 0.3)
        y = y + np.linalg.cholesky(cov + 1e-12 * np.eye(n)) @ rng.standard_normal(n)
    return x, y, coords


def _priors(d_max=math.sqrt(2.0), v=0.5):
    reg = RegressionPriors(nu0=1.0, a0=2.25, nu1=0.1, a1=0.01)
    sp = SpatialPrior(
        mu_theta=(v, v, d_max / 3.0),
        sigma_theta=(0.25, 0.25, math.inf),
        phi_bounds=(1e-4 * d_max, d_max / 3.0),
    )
    return reg, sp


CFG = McmcConfig(n_samples=800, burn_in=200, adapt_start=100, adapt_interval=50, seed=5)


def test_chain_deterministic_given_seed():
    x, y, coords = _problem(1)
    reg, sp = _priors()
    a = run_mcmc(x, y, coords, reg, sp, CFG)
    b = run_mcmc(x, y, coords, reg, sp, CFG)
    np.testing.assert_array_equal(a.beta, b.beta)
    np.testing.assert_array_equal(a.alpha, b.alpha)
    np.testing.assert_array_equal(a.theta, b.theta)
    np.testing.assert_array_equal(a.accepted, b.accepted)


def test_different_seed_changes_chain():
    x, y, coords = _problem(1)
    reg, sp = _priors()
    a = run_mcmc(x, y, coords, reg, sp, CFG)
    b = run_mcmc(x, y, coords, reg, sp, McmcConfig(**{**CFG.__dict__, "seed": 6}))
    assert not np.array_equal(a.theta, b.theta)


def test_theta_stays_in_support():
    x, y, coords = _problem(2)
    reg, sp = _priors()
    tail = run_mcmc(x, y, coords, reg, sp, CFG).post_burn_in()
    assert (tail.parameter("tau2") > 0).all()
    assert (tail.parameter("sigma2") > 0).all()
    lo, hi = sp.phi_bounds
    phi = tail.parameter("phi")
    assert (phi >= lo).all() and (phi <= hi).all()
    assert (tail.alpha > 0).all()


def test_nonspatial_chain_pins_sigma2():
    x, y, _ = _problem(3, spatial_signal=False)
    reg, sp = _priors()
    chain = run_mcmc(x, y, None, reg, sp, CFG, spatial_effect=False)
    assert (chain.parameter("sigma2") == 0.0).all()
    assert np.unique(chain.parameter("phi")).size == 1  # placeholder column
    assert (chain.post_burn_in().parameter("tau2") > 0).all()
    assert chain.theta_accept_count > 0


def test_adaptive_acceptance_rate_reasonable():
    x, y, coords = _problem(4, n=50)
    reg, sp = _priors()
    cfg = McmcConfig(n_samples=2000, burn_in=500, adapt_start=100, adapt_interval=50, seed=2)
    chain = run_mcmc(x, y, coords, reg, sp, cfg)
    tail_rate = chain.post_burn_in().accept_rate
    assert 0.08 < tail_rate < 0.65


def test_ridge_oracle_with_pinned_variance():
    """With alpha frozen and tau2 prior pinned, beta matches the ridge posterior."""
    x, y, _ = _problem(5, n=30, p=3, spatial_signal=False)
    tau2 = 0.5
    alpha = (0.8, 1.5)
    reg = RegressionPriors()
    sp = SpatialPrior(
        mu_theta=(tau2, tau2, 1.0), sigma_theta=(1e-7, 0.25, math.inf), phi_bounds=(0.5, 2.0)
    )
    cfg = McmcConfig(n_samples=6000, burn_in=1000, adapt_start=100, adapt_interval=50, seed=8)
    chain = run_mcmc(
        x, y, None, reg, sp, cfg, spatial_effect=False, fixed_alpha=alpha
    )
    tail = chain.post_burn_in()
    assert np.allclose(tail.parameter("tau2"), tau2, rtol=1e-4)

    a_vec = np.array([alpha[0]] + [alpha[1]] * 3)
    prec = x.T @ x / tau2 + np.diag(a_vec)
    post_cov = np.linalg.inv(prec)
    post_mean = post_cov @ (x.T @ y) / tau2
    s = tail.beta.shape[0]
    se = np.sqrt(np.diag(post_cov) / s)
    np.testing.assert_array_less(np.abs(tail.beta.mean(axis=0) - post_mean), 5 * se)
    np.testing.assert_allclose(tail.beta.std(axis=0, ddof=1), np.sqrt(np.diag(post_cov)), rtol=0.1)


def test_fixed_alpha_columns_constant():
    x, y, coords = _problem(6)
    reg, sp = _priors()
    chain = run_mcmc(x, y, coords, reg, sp, CFG, fixed_alpha=(0.3, 0.7))
    assert (chain.parameter("alpha0") == 0.3).all()
    assert (chain.parameter("alpha1") == 0.7).all()


def test_frozen_beta_rows_constant():
    x, y, coords = _problem(7)
    reg, sp = _priors()
    beta = np.linspace(0.5, 1.5, x.shape[1])
    chain = run_mcmc(x, y, coords, reg, sp, CFG, frozen_beta=beta)
    assert np.all(chain.beta == beta)
    assert chain.theta_accept_count > 0


def test_literal_alpha_update_variant():
    x, y, coords = _problem(8)
    reg, sp = _priors()
    a = run_mcmc(x, y, coords, reg, sp, CFG)
    b = run_mcmc(x, y, coords, reg, sp, CFG, literal_alpha_update=True)
    assert (b.post_burn_in().alpha > 0).all()
    assert not np.array_equal(a.alpha, b.alpha)


def test_input_validation():
    x, y, coords = _problem(9)
    reg, sp = _priors()
    with pytest.raises(DimensionMismatchError):
        run_mcmc(x, y[:-1], coords, reg, sp, CFG)
    with pytest.raises(InvalidParamError):
        run_mcmc(x, y, None, reg, sp, CFG)  # spatial model needs coordinates
    with pytest.raises(DimensionMismatchError):
        run_mcmc(x, y, coords[:-1], reg, sp, CFG)
    with pytest.raises(InvalidParamError):
        run_mcmc(x, y, coords, reg, sp, CFG, fixed_alpha=(0.0, 1.0))
    with pytest.raises(DimensionMismatchError):
        run_mcmc(x, y, coords, reg, sp, CFG, frozen_beta=np.ones(2))
