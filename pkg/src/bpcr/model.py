"""Hierarchical spatial regression model and its hybrid MCMC sampler.

Model: y = X beta + eta + eps with eta ~ N(0, C(sigma2, phi)), eps ~ N(0, tau2 I).
Priors: beta_j ~ N(0, 1/alpha_j) with one precision for the intercept (alpha0) and a
common precision for all slopes (alpha1); each precision has a scaled chi-square
prior chi2(nu, a) = Gamma(nu/2, rate a*nu/2); theta = (tau2, sigma2, phi) has
independent log-normal priors parameterized by the median, log theta_j ~
N(log mu_j, sigma_j^2), with hard support bounds on phi.

Sampling combines Gibbs draws for beta (via the whitened-and-augmented least-squares
system) and the precisions with an adaptive Metropolis random walk on log-theta.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, NamedTuple

import numpy as np
from scipy.linalg import solve_triangular

from . import spatial
from .backend import backend_name, get_kernels
from .errors import (
    DimensionMismatchError,
    InvalidParamError,
    NotPositiveDefiniteError,
    SingularFactorError,
)

FLAT_ALPHA = 1e-8  # precision used when coefficients get an effectively flat prior


class SpatialParams(NamedTuple):
    tau2: float
    sigma2: float
    phi: float


@dataclass(frozen=True)
class RegressionPriors:
    """Gamma(nu/2, rate a*nu/2) hyperparameters for the intercept (0) and slope
    (1) precision groups; a is the prior guess for the coefficient variance."""

    nu0: float = 1.0
    a0: float = 1.0
    nu1: float = 0.1
    a1: float = 0.01

    def __post_init__(self):
        for name in ("nu0", "a0", "nu1", "a1"):
            if not getattr(self, name) > 0:
                raise InvalidParamError(f"{name} must be > 0, got {getattr(self, name)}")


@dataclass(frozen=True)
class SpatialPrior:
    """Log-normal prior medians/log-sds for theta plus hard phi bounds.

    sigma_theta entries may be inf, meaning flat in log scale (zero prior term).
    """

    mu_theta: tuple[float, float, float]
    sigma_theta: tuple[float, float, float]
    phi_bounds: tuple[float, float]

    def __post_init__(self):
        if not all(m > 0 and math.isfinite(m) for m in self.mu_theta):
            raise InvalidParamError(f"mu_theta must be positive and finite, got {self.mu_theta}")
        if not all(s > 0 for s in self.sigma_theta):
            raise InvalidParamError(f"sigma_theta must be positive, got {self.sigma_theta}")
        lo, hi = self.phi_bounds
        if not 0 < lo < hi:
            raise InvalidParamError(f"need 0 < lower < upper phi bounds, got {self.phi_bounds}")


@dataclass(frozen=True)
class McmcConfig:
    n_samples: int = 5000
    burn_in: int = 1000
    adapt_start: int = 200
    adapt_interval: int = 50
    initial_proposal_scale: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.burn_in < self.n_samples:
            raise InvalidParamError(f"need 0 <= burn_in < n_samples, got {self.burn_in}, {self.n_samples}")
        if self.adapt_start < 10:
            raise InvalidParamError(f"adapt_start must be >= 10, got {self.adapt_start}")
        if self.adapt_interval < 1:
            raise InvalidParamError(f"adapt_interval must be >= 1, got {self.adapt_interval}")
        if not self.initial_proposal_scale > 0:
            raise InvalidParamError("initial_proposal_scale must be > 0")


@dataclass(frozen=True)
class ModelState:
    beta: np.ndarray
    alpha0: float
    alpha1: float
    theta: SpatialParams


@dataclass(frozen=True)
class Chain:
    """Array-backed MCMC chain; rows before `burn_in` are flagged, not dropped."""

    beta: np.ndarray  # (n_samples, p_kept+1)
    alpha: np.ndarray  # (n_samples, 2): alpha0, alpha1
    theta: np.ndarray  # (n_samples, 3): tau2, sigma2, phi
    accepted: np.ndarray  # (n_samples,) uint8 theta-move flags
    burn_in: int
    config: McmcConfig
    seed: int

    def __len__(self) -> int:
        return self.beta.shape[0]

    @property
    def p_coef(self) -> int:
        return self.beta.shape[1]

    @property
    def theta_accept_count(self) -> int:
        return int(self.accepted.sum())

    @property
    def accept_rate(self) -> float:
        return self.theta_accept_count / len(self)

    def state(self, i: int) -> ModelState:
        return ModelState(
            beta=self.beta[i].copy(),
            alpha0=float(self.alpha[i, 0]),
            alpha1=float(self.alpha[i, 1]),
            theta=SpatialParams(*self.theta[i]),
        )

    def states(self) -> Iterator[ModelState]:
        for i in range(len(self)):
            yield self.state(i)

    def post_burn_in(self) -> "Chain":
        b = self.burn_in
        return Chain(
            beta=self.beta[b:],
            alpha=self.alpha[b:],
            theta=self.theta[b:],
            accepted=self.accepted[b:],
            burn_in=0,
            config=self.config,
            seed=self.seed,
        )

    def parameter_names(self) -> list[str]:
        return [f"beta_{j}" for j in range(self.p_coef)] + ["alpha0", "alpha1", "tau2", "sigma2", "phi"]

    def parameter(self, name: str) -> np.ndarray:
        """Column view by serialized name (beta_0.., alpha0, alpha1, tau2, sigma2, phi)."""
        if name.startswith("beta_"):
            return self.beta[:, int(name.split("_", 1)[1])]
        idx = {"alpha0": 0, "alpha1": 1}.get(name)
        if idx is not None:
            return self.alpha[:, idx]
        idx = {"tau2": 0, "sigma2": 1, "phi": 2}.get(name)
        if idx is None:
            raise InvalidParamError(f"unknown parameter {name!r}")
        return self.theta[:, idx]


# ---------------------------------------------------------------------------
# Sampler building blocks (pure-numpy; the compiled chain loop mirrors these)
# ---------------------------------------------------------------------------


def augmented_system(x, y, chol, alpha_vec):
    """Whiten by the covariance factor and append prior rows sqrt(alpha) per column.

    The augmented normal equations equal X' Sigma^-1 X + diag(alpha), so a draw from
    the least-squares posterior of the augmented system is a draw from the
    conditional posterior of beta.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    chol = np.asarray(chol, dtype=np.float64)
    alpha_vec = np.asarray(alpha_vec, dtype=np.float64)
    n, p1 = x.shape
    if y.shape != (n,) or chol.shape != (n, n) or alpha_vec.shape != (p1,):
        raise DimensionMismatchError(
            f"inconsistent shapes: x {x.shape}, y {y.shape}, chol {chol.shape}, alpha {alpha_vec.shape}"
        )
    if not (alpha_vec > 0).all():
        raise InvalidParamError("alpha_vec must be strictly positive")
    if (np.diag(chol) == 0).any():
        raise SingularFactorError("triangular factor has a zero pivot")
    xw = solve_triangular(chol, x, lower=True)
    yw = solve_triangular(chol, y, lower=True)
    x_tilde = np.vstack([xw, np.diag(np.sqrt(alpha_vec))])
    y_tilde = np.concatenate([yw, np.zeros(p1)])
    return x_tilde, y_tilde


def sample_beta(x_tilde, y_tilde, rng: np.random.Generator) -> np.ndarray:
    """One draw from N(beta_hat, P^-1), P = X~'X~, via Cholesky of the precision."""
    x_tilde = np.asarray(x_tilde, dtype=np.float64)
    y_tilde = np.asarray(y_tilde, dtype=np.float64)
    prec = x_tilde.T @ x_tilde
    try:
        r_fac = np.linalg.cholesky(prec)
    except np.linalg.LinAlgError as exc:
        raise SingularFactorError("augmented system is rank deficient") from exc
    b = x_tilde.T @ y_tilde
    beta_hat = solve_triangular(r_fac.T, solve_triangular(r_fac, b, lower=True), lower=False)
    z = rng.standard_normal(prec.shape[0])
    return beta_hat + solve_triangular(r_fac.T, z, lower=False)


def sample_alpha(beta, priors: RegressionPriors, rng: np.random.Generator) -> tuple[float, float]:
    """Conjugate group updates: alpha_g ~ Gamma((nu+k)/2, rate (nu*a + sum beta^2)/2).

    The prior is Gamma(nu/2, rate a*nu/2) with mean 1/a, so a is the prior
    guess for the coefficient variance 1/alpha, not for alpha itself.
    """
    beta = np.asarray(beta, dtype=np.float64)
    p = beta.shape[0] - 1
    shape0 = (priors.nu0 + 1) / 2.0
    rate0 = (priors.nu0 * priors.a0 + beta[0] ** 2) / 2.0
    shape1 = (priors.nu1 + p) / 2.0
    rate1 = (priors.nu1 * priors.a1 + float(beta[1:] @ beta[1:])) / 2.0
    return (
        float(rng.standard_gamma(shape0) / rate0),
        float(rng.standard_gamma(shape1) / rate1),
    )


def log_posterior_theta(theta, beta, x, y, coords, prior: SpatialPrior) -> float:
    """Log density of theta given beta and y, in theta space, up to a constant;
    -inf outside the phi bounds.

    -1/2 r' Sigma^-1 r - 1/2 log|Sigma| + sum_j log p_j(theta_j) with r = y - X beta
    and p_j the log-normal prior (components with sigma_j = inf are flat on the
    log scale, so only their 1/theta_j factor remains).
    """
    tau2, sigma2, phi = theta
    lo, hi = prior.phi_bounds
    if not (lo <= phi <= hi):
        return -math.inf
    if tau2 <= 0 or sigma2 <= 0 or phi <= 0:
        return -math.inf
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    dist = spatial.distance_matrix(coords)
    sigma = spatial.total_covariance(spatial.exp_covariance(dist, sigma2, phi), tau2)
    chol = spatial.cholesky_factor(sigma)
    resid_w = solve_triangular(chol, y - x @ beta, lower=True)
    out = -0.5 * float(resid_w @ resid_w) - 0.5 * spatial.log_det_from_chol(chol)
    for value, mu, sd in zip((tau2, sigma2, phi), prior.mu_theta, prior.sigma_theta):
        out -= math.log(value)
        if math.isfinite(sd):
            out -= 0.5 * (math.log(value / mu) / sd) ** 2
    return out


def metropolis_step(
    theta_current: SpatialParams,
    proposal_chol: np.ndarray,
    log_post_fn: Callable,
    rng: np.random.Generator,
) -> tuple[SpatialParams, bool]:
    """Gaussian random-walk proposal on log-theta with the change-of-variable term.

    Accepts with probability min(1, exp(lp(cand) - lp(cur) + sum(log cand - log cur))).
    """
    u = np.log(np.asarray(theta_current, dtype=np.float64))
    u_star = u + np.asarray(proposal_chol, dtype=np.float64) @ rng.standard_normal(u.shape[0])
    if np.array_equal(u_star, u):  # zero-scale proposal: keep theta bit-identical
        theta_star = SpatialParams(*theta_current)
    else:
        theta_star = SpatialParams(*np.exp(u_star))
    log_ratio = log_post_fn(theta_star) - log_post_fn(theta_current) + float(u_star.sum() - u.sum())
    if math.isnan(log_ratio):
        return SpatialParams(*theta_current), False
    if math.log(max(rng.random(), 5e-324)) < log_ratio:
        return theta_star, True
    return SpatialParams(*theta_current), False


def adapt_proposal(theta_history, base_scale: float) -> np.ndarray:
    """Cholesky of (2.38^2/d) * cov(log history) + 1e-10 I; diagonal fallback."""
    hist = np.asarray(theta_history, dtype=np.float64)
    if hist.ndim != 2:
        raise DimensionMismatchError(f"history must be (m, d), got {hist.shape}")
    d = hist.shape[1]
    fallback = base_scale * np.eye(d)
    if hist.shape[0] < 2 or not (hist > 0).all():
        return fallback
    log_hist = np.log(hist)
    if not (log_hist.max(axis=0) - log_hist.min(axis=0)).any():
        return fallback  # constant history carries no scale information
    cov = np.atleast_2d(np.cov(log_hist, rowvar=False, ddof=1))
    prop = (2.38 ** 2 / d) * cov + 1e-10 * np.eye(d)
    if not np.isfinite(prop).all():
        return fallback
    try:
        return np.linalg.cholesky(prop)
    except np.linalg.LinAlgError:
        return fallback


def effective_sample_size(values, param_selector=None) -> float:
    """ESS with initial-positive-sequence truncation of the autocorrelation sum.

    Accepts a 1-d array, or a Chain plus a parameter name / callable selector
    (post-burn-in part is used). Floors at 1.0, caps at the sequence length.
    """
    if isinstance(values, Chain):
        tail = values.post_burn_in()
        series = param_selector(tail) if callable(param_selector) else tail.parameter(param_selector)
    else:
        series = values
    x = np.asarray(series, dtype=np.float64).ravel()
    n = x.shape[0]
    if n < 2:
        return 1.0
    x = x - x.mean()
    var0 = float(x @ x) / n
    if var0 <= 0 or not math.isfinite(var0):
        return 1.0
    n_fft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, n_fft)
    acov = np.fft.irfft(f * np.conj(f), n_fft)[:n].real / n
    rho = acov / acov[0]
    # Geyer pair sums: accumulate rho_{2m} + rho_{2m+1} while positive.
    tau = -1.0
    m = 0
    while 2 * m + 1 < n:
        pair = rho[2 * m] + rho[2 * m + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
        m += 1
    tau = max(tau, 1.0)
    return float(min(max(n / tau, 1.0), n))


def default_priors(y_train, coords, pcr_residual_variance: float) -> tuple[RegressionPriors, SpatialPrior]:
    """Experiment defaults: a0 = (ybar/2)^2, a1 = 0.01, theta medians from the
    supplied non-spatial residual variance and the layout's maximum distance."""
    y_train = np.asarray(y_train, dtype=np.float64)
    if y_train.size == 0:
        raise InvalidParamError("empty response")
    if not pcr_residual_variance > 0:
        raise InvalidParamError("pcr_residual_variance must be > 0")
    ybar = float(y_train.mean())
    a0 = (ybar / 2.0) ** 2
    if not a0 > 0:
        raise InvalidParamError("response mean ~ 0; a0 = (ybar/2)^2 would be degenerate")
    d_max = float(spatial.distance_matrix(coords).max())
    if not d_max > 0:
        raise InvalidParamError("all locations coincide; distance-based priors undefined")
    reg = RegressionPriors(nu0=1.0, a0=a0, nu1=0.1, a1=0.01)
    sp = SpatialPrior(
        mu_theta=(pcr_residual_variance / 2.0, pcr_residual_variance / 2.0, d_max / 3.0),
        sigma_theta=(0.25, 0.25, math.inf),
        phi_bounds=(1e-4 * d_max, d_max / 3.0),
    )
    return reg, sp


# ---------------------------------------------------------------------------
# Chain driver
# ---------------------------------------------------------------------------


def run_mcmc(
    x,
    y,
    coords,
    priors: RegressionPriors,
    spatial_prior: SpatialPrior,
    config: McmcConfig,
    *,
    spatial_effect: bool = True,
    fixed_alpha: tuple[float, float] | None = None,
    literal_alpha_update: bool = False,
    frozen_beta=None,
    backend: str | None = None,
) -> Chain:
    """Run one chain; deterministic given (inputs, config.seed, backend).

    spatial_effect=False fixes sigma2 = 0 and samples only tau2 of theta.
    fixed_alpha freezes the precisions (skipping their Gibbs step); frozen_beta
    pins the coefficients, leaving a pure theta sampler for oracle tests.
    All randomness is pre-drawn here with numpy's Generator so the numba and numpy
    kernels consume identical streams.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise DimensionMismatchError(f"x {x.shape} vs y {y.shape}")
    n, p1 = x.shape
    if spatial_effect:
        if coords is None:
            raise InvalidParamError("spatial model needs coordinates")
        dist = np.ascontiguousarray(spatial.distance_matrix(coords))
        if dist.shape[0] != n:
            raise DimensionMismatchError(f"{dist.shape[0]} coordinates for {n} rows")
        n_active = 3
    else:
        dist = np.zeros((n, n))
        n_active = 1

    mu = np.asarray(spatial_prior.mu_theta, dtype=np.float64)
    lo, hi = spatial_prior.phi_bounds
    theta0 = np.array([mu[0], mu[1], min(max(mu[2], lo), hi)])
    if not spatial_effect:
        theta0[1] = 0.0  # sigma2 pinned; phi entry is an unused placeholder
    log_mu = np.log(mu)
    prior_w = np.array(
        [0.0 if math.isinf(s) else 1.0 / s ** 2 for s in spatial_prior.sigma_theta]
    )

    if frozen_beta is not None:
        beta_init = np.ascontiguousarray(frozen_beta, dtype=np.float64)
        if beta_init.shape != (p1,):
            raise DimensionMismatchError(f"frozen_beta {beta_init.shape} vs p+1 = {p1}")
    else:
        beta_init = np.zeros(p1)

    if fixed_alpha is not None:
        alpha0_init, alpha1_init = float(fixed_alpha[0]), float(fixed_alpha[1])
        if alpha0_init <= 0 or alpha1_init <= 0:
            raise InvalidParamError("fixed_alpha values must be > 0")
    else:
        # Start each precision group at min(a, 1/a) so it is small whichever
        # way the variance guess points. A large initial precision pins the
        # first coefficient draw near zero, and near-zero coefficients in turn
        # keep the sampled precision large: the chain would start inside that
        # self-reinforcing basin instead of the data-dominated region.
        alpha0_init = min(float(priors.a0), 1.0 / float(priors.a0))
        alpha1_init = min(float(priors.a1), 1.0 / float(priors.a1))

    s_total = config.n_samples
    rng = np.random.default_rng(config.seed)
    # Draw order is part of the reproducibility contract; do not reorder.
    z_beta = rng.standard_normal((s_total, p1))
    if literal_alpha_update:
        shape0, shape1 = (n + priors.nu0) / 2.0, (n + priors.nu1) / 2.0
    else:
        shape0, shape1 = (priors.nu0 + 1) / 2.0, (priors.nu1 + (p1 - 1)) / 2.0
    g_alpha = np.column_stack(
        [rng.standard_gamma(shape0, s_total), rng.standard_gamma(shape1, s_total)]
    )
    z_prop = rng.standard_normal((s_total, 3))
    log_u = np.log(np.maximum(rng.random(s_total), 5e-324))

    kernels = get_kernels(backend)
    beta_out, alpha_out, theta_out, accept_out, status, fail_iter = kernels.run_chain(
        x,
        y,
        dist,
        theta0,
        n_active,
        log_mu,
        prior_w,
        math.log(lo),
        math.log(hi),
        float(priors.nu0),
        float(priors.a0),
        float(priors.nu1),
        float(priors.a1),
        0 if fixed_alpha is not None else 1,
        1 if literal_alpha_update else 0,
        alpha0_init,
        alpha1_init,
        0 if frozen_beta is not None else 1,
        beta_init,
        config.adapt_start,
        config.adapt_interval,
        config.initial_proposal_scale,
        z_beta,
        g_alpha,
        z_prop,
        log_u,
    )
    if status == kernels.STATUS_COV_FAIL:
        raise NotPositiveDefiniteError(
            f"covariance factorization failed at iteration {fail_iter} (backend {backend_name(backend)})"
        )
    if status == kernels.STATUS_PRECISION_FAIL:
        raise SingularFactorError(
            f"coefficient precision factorization failed at iteration {fail_iter}"
        )
    return Chain(
        beta=beta_out,
        alpha=alpha_out,
        theta=theta_out,
        accepted=accept_out,
        burn_in=config.burn_in,
        config=config,
        seed=config.seed,
    )
