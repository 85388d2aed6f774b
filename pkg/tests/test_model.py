"""Sampler building blocks checked against dense linear-algebra and
distribution oracles."""
import math

import numpy as np
import pytest
from scipy import stats

from bpcr import spatial
from bpcr.errors import (
    DimensionMismatchError,
    InvalidParamError,
    SingularFactorError,
)
from bpcr.model import (
    Chain,
    McmcConfig,
    RegressionPriors,
    SpatialParams,
    SpatialPrior,
    adapt_proposal,
    augmented_system,
    default_priors,
    effective_sample_size,
    log_posterior_theta,
    metropolis_step,
    sample_alpha,
    sample_beta,
)


def _gls_problem(seed=0, n=15, p=3):
    """Random design, response, SPD covariance factor, and positive precisions."""
    rng = np.random.default_rng(seed)
    x = np.column_stack([np.ones(n), rng.standard_normal((n, p))])
    y = rng.standard_normal(n)
    a = rng.standard_normal((n, n))
    cov = a @ a.T + n * np.eye(n)
    alpha = rng.uniform(0.5, 2.0, p + 1)
    return x, y, np.linalg.cholesky(cov), cov, alpha


def test_augmented_system_matches_normal_equations():
    """X~'X~ = X' Sigma^-1 X + diag(alpha) and X~'y~ = X' Sigma^-1 y."""
    x, y, chol, cov, alpha = _gls_problem(1)
    x_t, y_t = augmented_system(x, y, chol, alpha)
    sigma_inv = np.linalg.inv(cov)
    np.testing.assert_allclose(x_t.T @ x_t, x.T @ sigma_inv @ x + np.diag(alpha), rtol=1e-10)
    np.testing.assert_allclose(x_t.T @ y_t, x.T @ sigma_inv @ y, rtol=1e-10, atol=1e-12)


def test_augmented_system_shapes_and_guards():
    x, y, chol, _, alpha = _gls_problem(2)
    x_t, y_t = augmented_system(x, y, chol, alpha)
    assert x_t.shape == (x.shape[0] + x.shape[1], x.shape[1])
    assert y_t.shape == (x.shape[0] + x.shape[1],)
    assert np.all(y_t[x.shape[0]:] == 0.0)
    with pytest.raises(DimensionMismatchError):
        augmented_system(x, y[:-1], chol, alpha)
    with pytest.raises(InvalidParamError):
        augmented_system(x, y, chol, np.append(alpha[:-1], 0.0))
    bad = chol.copy()
    bad[0, 0] = 0.0
    with pytest.raises(SingularFactorError):
        augmented_system(x, y, bad, alpha)


def test_sample_beta_matches_conjugate_posterior():
    """Draw mean and covariance agree with the analytic GLS posterior."""
    x, y, chol, cov, alpha = _gls_problem(3, n=12, p=2)
    x_t, y_t = augmented_system(x, y, chol, alpha)
    prec = x_t.T @ x_t
    post_cov = np.linalg.inv(prec)
    post_mean = post_cov @ (x_t.T @ y_t)

    rng = np.random.default_rng(42)
    draws = np.array([sample_beta(x_t, y_t, rng) for _ in range(12000)])
    s = draws.shape[0]
    se_mean = np.sqrt(np.diag(post_cov) / s)
    np.testing.assert_array_less(np.abs(draws.mean(axis=0) - post_mean), 5 * se_mean)
    emp_cov = np.cov(draws, rowvar=False)
    d = np.sqrt(np.diag(post_cov))
    se_cov = np.sqrt((np.outer(d, d) ** 2 + post_cov ** 2) / s)
    np.testing.assert_array_less(np.abs(emp_cov - post_cov), 5 * se_cov)


def test_sample_beta_rank_deficient():
    x_t = np.ones((6, 2))  # duplicate columns: singular normal equations
    with pytest.raises(SingularFactorError):
        sample_beta(x_t, np.ones(6), np.random.default_rng(0))


def test_sample_alpha_gamma_moments():
    """Group updates follow Gamma((nu+k)/2, rate=(nu*a + sum beta^2)/2)."""
    priors = RegressionPriors(nu0=1.0, a0=4.0, nu1=0.1, a1=0.01)
    beta = np.array([2.0, 0.3, -0.4, 0.5])
    shape0 = (priors.nu0 + 1) / 2
    rate0 = (priors.nu0 * priors.a0 + beta[0] ** 2) / 2
    shape1 = (priors.nu1 + 3) / 2
    rate1 = (priors.nu1 * priors.a1 + float(beta[1:] @ beta[1:])) / 2

    rng = np.random.default_rng(7)
    draws = np.array([sample_alpha(beta, priors, rng) for _ in range(40000)])
    for j, (shape, rate) in enumerate([(shape0, rate0), (shape1, rate1)]):
        mean, var = shape / rate, shape / rate ** 2
        se = math.sqrt(var / draws.shape[0])
        assert abs(draws[:, j].mean() - mean) < 5 * se
        assert draws[:, j].var(ddof=1) == pytest.approx(var, rel=0.1)


def _theta_problem(seed=0, n=10):
    rng = np.random.default_rng(seed)
    coords = rng.random((n, 2))
    x = np.column_stack([np.ones(n), rng.standard_normal(n)])
    beta = np.array([1.0, -0.5])
    y = x @ beta + 0.3 * rng.standard_normal(n)
    prior = SpatialPrior(
        mu_theta=(0.3, 0.5, 0.2), sigma_theta=(0.4, 0.3, math.inf), phi_bounds=(0.01, 0.6)
    )
    return x, y, coords, beta, prior


def test_log_posterior_theta_matches_dense_density():
    """Differences equal those of mvnorm logpdf + log-normal prior logpdfs."""
    x, y, coords, beta, prior = _theta_problem(4)

    def oracle(theta):
        tau2, sigma2, phi = theta
        dist = spatial.distance_matrix(coords)
        cov = sigma2 * np.exp(-dist / phi) + tau2 * np.eye(len(y))
        out = stats.multivariate_normal.logpdf(y, mean=x @ beta, cov=cov)
        out += stats.lognorm.logpdf(tau2, s=prior.sigma_theta[0], scale=prior.mu_theta[0])
        out += stats.lognorm.logpdf(sigma2, s=prior.sigma_theta[1], scale=prior.mu_theta[1])
        out += -math.log(phi)  # flat in log phi within the bounds
        return out

    t_a = (0.2, 0.6, 0.15)
    t_b = (0.45, 0.35, 0.5)
    got = log_posterior_theta(t_a, beta, x, y, coords, prior) - log_posterior_theta(
        t_b, beta, x, y, coords, prior
    )
    assert got == pytest.approx(oracle(t_a) - oracle(t_b), abs=1e-8)


def test_log_posterior_theta_support():
    x, y, coords, beta, prior = _theta_problem(5)
    lo, hi = prior.phi_bounds
    assert log_posterior_theta((0.3, 0.5, lo), beta, x, y, coords, prior) > -math.inf
    assert log_posterior_theta((0.3, 0.5, hi), beta, x, y, coords, prior) > -math.inf
    assert log_posterior_theta((0.3, 0.5, hi * 1.01), beta, x, y, coords, prior) == -math.inf
    assert log_posterior_theta((0.3, 0.5, lo * 0.99), beta, x, y, coords, prior) == -math.inf
    assert log_posterior_theta((0.0, 0.5, 0.2), beta, x, y, coords, prior) == -math.inf
    assert log_posterior_theta((0.3, 0.0, 0.2), beta, x, y, coords, prior) == -math.inf


def test_metropolis_step_recovers_prior():
    """Sampling a pure log-normal target keeps the log-scale mean at log(mu)."""
    mu = np.array([0.5, 2.0, 1.0])
    sd = np.array([0.5, 0.5, 0.5])

    def log_post(theta):
        return float(np.sum(stats.lognorm.logpdf(np.asarray(theta), s=sd, scale=mu)))

    rng = np.random.default_rng(11)
    prop = 0.8 * np.eye(3)
    theta = SpatialParams(0.5, 2.0, 1.0)
    log_draws = np.empty((30000, 3))
    for i in range(log_draws.shape[0]):
        theta, _ = metropolis_step(theta, prop, log_post, rng)
        log_draws[i] = np.log(theta)
    # a missing/doubled Jacobian would shift the log mean by sd^2 = 0.25
    np.testing.assert_allclose(log_draws.mean(axis=0), np.log(mu), atol=0.06)
    np.testing.assert_allclose(log_draws.std(axis=0), sd, rtol=0.12)


def test_metropolis_step_zero_scale_keeps_state():
    theta = SpatialParams(0.3, 0.7, 0.2)
    new, accepted = metropolis_step(theta, np.zeros((3, 3)), lambda t: 0.0, np.random.default_rng(0))
    assert accepted
    assert new == theta


def test_metropolis_step_rejects_nan_target():
    theta = SpatialParams(0.3, 0.7, 0.2)
    new, accepted = metropolis_step(
        theta, 0.1 * np.eye(3), lambda t: math.nan, np.random.default_rng(1)
    )
    assert not accepted
    assert new == theta


def test_adapt_proposal_factorizes_scaled_log_covariance():
    rng = np.random.default_rng(8)
    hist = np.exp(rng.multivariate_normal([0.0, 1.0], [[0.3, 0.1], [0.1, 0.2]], size=400))
    chol = adapt_proposal(hist, base_scale=0.1)
    target = (2.38 ** 2 / 2) * np.cov(np.log(hist), rowvar=False, ddof=1) + 1e-10 * np.eye(2)
    np.testing.assert_allclose(chol @ chol.T, target, rtol=1e-10)
    assert np.allclose(chol, np.tril(chol))


@pytest.mark.parametrize(
    "hist",
    [
        np.array([[0.5, 1.0, 2.0]]),  # a single state
        np.array([[0.5, -1.0, 2.0], [0.4, 1.0, 2.0]]),  # nonpositive value
        np.full((50, 3), 0.7),  # constant history
    ],
)
def test_adapt_proposal_fallback(hist):
    chol = adapt_proposal(hist, base_scale=0.05)
    np.testing.assert_array_equal(chol, 0.05 * np.eye(hist.shape[1]))


def _toy_chain(s=10, p1=3, burn_in=4):
    rng = np.random.default_rng(3)
    return Chain(
        beta=rng.standard_normal((s, p1)),
        alpha=rng.uniform(0.5, 1.5, (s, 2)),
        theta=rng.uniform(0.1, 1.0, (s, 3)),
        accepted=(rng.random(s) < 0.5).astype(np.uint8),
        burn_in=burn_in,
        config=McmcConfig(n_samples=s, burn_in=burn_in, adapt_start=10),
        seed=0,
    )


def test_chain_parameter_views_and_slicing():
    ch = _toy_chain()
    assert len(ch) == 10
    assert ch.p_coef == 3
    np.testing.assert_array_equal(ch.parameter("beta_1"), ch.beta[:, 1])
    np.testing.assert_array_equal(ch.parameter("alpha1"), ch.alpha[:, 1])
    np.testing.assert_array_equal(ch.parameter("sigma2"), ch.theta[:, 1])
    tail = ch.post_burn_in()
    assert len(tail) == 6 and tail.burn_in == 0
    assert np.shares_memory(tail.beta, ch.beta)
    assert ch.accept_rate == ch.accepted.sum() / 10
    assert ch.parameter_names()[:3] == ["beta_0", "beta_1", "beta_2"]
    state = ch.state(2)
    assert state.theta == SpatialParams(*ch.theta[2])
    with pytest.raises(InvalidParamError):
        ch.parameter("gamma")


def test_effective_sample_size_behaviour():
    rng = np.random.default_rng(9)
    iid = rng.standard_normal(4000)
    assert effective_sample_size(iid) > 2000
    ar = np.empty(4000)
    ar[0] = 0.0
    for i in range(1, ar.size):
        ar[i] = 0.95 * ar[i - 1] + rng.standard_normal()
    assert effective_sample_size(ar) < 800
    assert effective_sample_size(np.ones(100)) == 1.0
    assert effective_sample_size(np.array([1.0])) == 1.0
    ch = _toy_chain(s=50, burn_in=10)
    assert 1.0 <= effective_sample_size(ch, "tau2") <= 40.0
    assert effective_sample_size(ch, lambda c: c.beta[:, 0]) >= 1.0


def test_default_priors_arithmetic():
    y = np.array([2.0, 4.0, 6.0])
    coords = np.array([[0.0, 0.0], [3.0, 0.0], [0.0, 4.0]])  # max distance 5
    reg, sp = default_priors(y, coords, pcr_residual_variance=0.8)
    assert reg.nu0 == 1.0 and reg.nu1 == 0.1 and reg.a1 == 0.01
    assert reg.a0 == pytest.approx((4.0 / 2.0) ** 2)
    assert sp.mu_theta == pytest.approx((0.4, 0.4, 5.0 / 3.0))
    assert sp.sigma_theta[:2] == (0.25, 0.25) and math.isinf(sp.sigma_theta[2])
    assert sp.phi_bounds == pytest.approx((5e-4, 5.0 / 3.0))


def test_default_priors_guards():
    coords = np.array([[0.0, 0.0], [1.0, 0.0]])
    with pytest.raises(InvalidParamError):
        default_priors(np.array([1.0, -1.0]), coords, 0.5)  # ybar = 0
    with pytest.raises(InvalidParamError):
        default_priors(np.array([1.0, 2.0]), np.zeros((2, 2)), 0.5)  # coincident
    with pytest.raises(InvalidParamError):
        default_priors(np.array([1.0, 2.0]), coords, 0.0)
    with pytest.raises(InvalidParamError):
        default_priors(np.array([]), coords, 0.5)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"n_samples": 100, "burn_in": 100},
        {"n_samples": 100, "burn_in": -1},
        {"adapt_start": 5},
        {"adapt_interval": 0},
        {"initial_proposal_scale": 0.0},
    ],
)
def test_mcmc_config_validation(kwargs):
    with pytest.raises(InvalidParamError):
        McmcConfig(**kwargs)


def test_prior_validation():
    with pytest.raises(InvalidParamError):
        RegressionPriors(nu0=0.0)
    with pytest.raises(InvalidParamError):
        SpatialPrior((0.0, 1.0, 1.0), (0.25, 0.25, 0.25), (0.1, 1.0))
    with pytest.raises(InvalidParamError):
        SpatialPrior((1.0, 1.0, 1.0), (0.25, -0.25, 0.25), (0.1, 1.0))
    with pytest.raises(InvalidParamError):
        SpatialPrior((1.0, 1.0, 1.0), (0.25, 0.25, 0.25), (1.0, 0.1))
