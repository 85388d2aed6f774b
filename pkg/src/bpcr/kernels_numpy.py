"""Pure-numpy reference kernels: the MCMC chain loop and batch kriging prediction.

Twin of `kernels_numba` with identical signatures and random-stream consumption.
Kernels never raise on numerical failure; they return a status code and the failing
iteration so the caller can attach context.

Status codes: 0 ok, 1 covariance factorization failed (current state), 2 coefficient
precision factorization failed.
"""
from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

STATUS_OK = 0
STATUS_COV_FAIL = 1
STATUS_PRECISION_FAIL = 2

_JITTER_REL = 1e-10
_JITTER_TRIES = 3
_ADAPT_EPS = 1e-10


def _factor_sigma(dist, theta):
    """Cholesky of sigma2*exp(-d/phi) + tau2*I with the jitter retry policy.

    Returns (L, logdet, ok). Invalid or non-finite theta reports ok=False instead
    of raising, so Metropolis candidates can be rejected cheaply.
    """
    tau2, sigma2, phi = theta[0], theta[1], theta[2]
    n = dist.shape[0]
    bad = np.empty((1, 1))
    if not (np.isfinite(tau2) and np.isfinite(sigma2) and np.isfinite(phi)):
        return bad, 0.0, False
    if tau2 <= 0.0 or sigma2 < 0.0 or phi <= 0.0:
        return bad, 0.0, False
    sigma = sigma2 * np.exp(-dist / phi)
    idx = np.diag_indices(n)
    sigma[idx] += tau2
    base = _JITTER_REL * np.trace(sigma) / n
    for attempt in range(_JITTER_TRIES + 1):
        mat = sigma
        if attempt > 0:
            mat = sigma.copy()
            mat[idx] += base * 10.0 ** (attempt - 1)
        try:
            chol = np.linalg.cholesky(mat)
        except np.linalg.LinAlgError:
            continue
        return chol, 2.0 * float(np.sum(np.log(np.diag(chol)))), True
    return bad, 0.0, False


def _log_prior(u, log_mu, prior_w, n_active):
    total = 0.0
    for j in range(n_active):
        d = u[j] - log_mu[j]
        total += prior_w[j] * d * d
    return -0.5 * total


def _adapt_chol(u_hist, m, n_active, base_scale):
    """Proposal factor from the log-theta history: (2.38^2/d) * cov + eps*I."""
    fallback = base_scale * np.eye(n_active)
    if m < 2:
        return fallback
    window = u_hist[:m, :n_active]
    if not (window.max(axis=0) - window.min(axis=0)).any():
        return fallback  # constant history (all moves rejected so far)
    cov = np.atleast_2d(np.cov(window, rowvar=False, ddof=1))
    prop = (2.38 ** 2 / n_active) * cov + _ADAPT_EPS * np.eye(n_active)
    if not np.isfinite(prop).all():
        return fallback
    try:
        return np.linalg.cholesky(prop)
    except np.linalg.LinAlgError:
        return fallback


def run_chain(
    x,
    y,
    dist,
    theta0,
    n_active,
    log_mu,
    prior_w,
    log_phi_lo,
    log_phi_hi,
    nu0,
    a0,
    nu1,
    a1,
    sample_alpha_flag,
    literal_alpha,
    alpha0_init,
    alpha1_init,
    sample_beta_flag,
    beta_init,
    adapt_start,
    adapt_interval,
    base_scale,
    z_beta,
    g_alpha,
    z_prop,
    log_u,
):
    """One full Gibbs + adaptive-Metropolis chain over pre-drawn random arrays.

    Per iteration: (1) hold the factor of the current-theta covariance, (2) Gibbs
    draw of beta from the augmented system, (3) Gibbs draw of the two precision
    groups, (4) one Metropolis step on log-theta (first n_active components) with
    covariance adaptation every adapt_interval once adapt_start is reached.
    """
    n, p1 = x.shape
    n_samples = z_beta.shape[0]

    beta = beta_init.copy()
    alpha0 = alpha0_init
    alpha1 = alpha1_init
    theta = theta0.copy()
    u = np.log(theta[:n_active])

    beta_out = np.zeros((n_samples, p1))
    alpha_out = np.zeros((n_samples, 2))
    theta_out = np.zeros((n_samples, 3))
    accept_out = np.zeros(n_samples, dtype=np.uint8)
    u_hist = np.zeros((n_samples, n_active))

    prop_chol = base_scale * np.eye(n_active)

    chol, logdet, ok = _factor_sigma(dist, theta)
    if not ok:
        return beta_out, alpha_out, theta_out, accept_out, STATUS_COV_FAIL, 0
    xw = solve_triangular(chol, x, lower=True, check_finite=False)
    yw = solve_triangular(chol, y, lower=True, check_finite=False)

    for i in range(n_samples):
        # ---- beta | alpha, theta, y ----
        if sample_beta_flag:
            prec = xw.T @ xw
            prec[0, 0] += alpha0
            for j in range(1, p1):
                prec[j, j] += alpha1
            try:
                r_fac = np.linalg.cholesky(prec)
            except np.linalg.LinAlgError:
                return beta_out, alpha_out, theta_out, accept_out, STATUS_PRECISION_FAIL, i
            b = xw.T @ yw
            w = solve_triangular(r_fac, b, lower=True, check_finite=False)
            beta_hat = solve_triangular(r_fac.T, w, lower=False, check_finite=False)
            beta = beta_hat + solve_triangular(r_fac.T, z_beta[i], lower=False, check_finite=False)

        # ---- alpha | beta ----
        if sample_alpha_flag:
            ss_slopes = float(beta[1:] @ beta[1:])
            if literal_alpha:
                rw = yw - xw @ beta
                ss_aug = float(rw @ rw) + alpha0 * beta[0] ** 2 + alpha1 * ss_slopes
                new0 = g_alpha[i, 0] / ((nu0 / alpha0 + ss_aug) / 2.0)
                new1 = g_alpha[i, 1] / ((nu1 / alpha1 + ss_aug) / 2.0)
                alpha0, alpha1 = new0, new1
            else:
                alpha0 = g_alpha[i, 0] / ((nu0 * a0 + beta[0] ** 2) / 2.0)
                alpha1 = g_alpha[i, 1] / ((nu1 * a1 + ss_slopes) / 2.0)

        # ---- one Metropolis step on log-theta ----
        rw = yw - xw @ beta
        lp_cur = -0.5 * float(rw @ rw) - 0.5 * logdet + _log_prior(u, log_mu, prior_w, n_active)
        u_star = u + prop_chol @ z_prop[i, :n_active]
        accepted = False
        in_support = bool(np.isfinite(u_star).all())
        if in_support and n_active == 3:
            in_support = log_phi_lo <= u_star[2] <= log_phi_hi
        if in_support:
            theta_star = theta.copy()
            theta_star[:n_active] = np.exp(u_star)
            chol_c, logdet_c, ok_c = _factor_sigma(dist, theta_star)
            if ok_c:
                rc = solve_triangular(chol_c, y - x @ beta, lower=True, check_finite=False)
                lp_star = (
                    -0.5 * float(rc @ rc)
                    - 0.5 * logdet_c
                    + _log_prior(u_star, log_mu, prior_w, n_active)
                )
                # The walk is symmetric in u = log(theta) and _log_prior is the
                # u-space density, so no Jacobian term appears in the ratio.
                log_ratio = lp_star - lp_cur
                if np.isfinite(log_ratio) and log_u[i] < log_ratio:
                    accepted = True
                    theta = theta_star
                    u = u_star
                    chol, logdet = chol_c, logdet_c
                    xw = solve_triangular(chol, x, lower=True, check_finite=False)
                    yw = solve_triangular(chol, y, lower=True, check_finite=False)

        u_hist[i] = u
        if (i + 1) >= adapt_start and (i + 1) % adapt_interval == 0:
            prop_chol = _adapt_chol(u_hist, i + 1, n_active, base_scale)

        beta_out[i] = beta
        alpha_out[i, 0] = alpha0
        alpha_out[i, 1] = alpha1
        theta_out[i] = theta
        accept_out[i] = accepted

    return beta_out, alpha_out, theta_out, accept_out, STATUS_OK, -1


def predict_samples(x_new, dist_new, dist, x, y, beta_states, theta_states, include_noise, z_noise):
    """Posterior predictive samples at m locations, one row per chain state.

    Factors the training covariance once per state and reuses it for every
    location. With noise, adds a draw with the per-location kriging conditional
    variance tau2 + sigma2 - c' Sigma^-1 c (clamped at 0).
    """
    n_states = beta_states.shape[0]
    m = x_new.shape[0]
    samples = np.zeros((n_states, m))
    for s in range(n_states):
        theta = theta_states[s]
        chol, _, ok = _factor_sigma(dist, theta)
        if not ok:
            return samples, STATUS_COV_FAIL, s
        beta = beta_states[s]
        resid = y - x @ beta
        w = solve_triangular(
            chol.T, solve_triangular(chol, resid, lower=True, check_finite=False),
            lower=False, check_finite=False,
        )
        c_new = theta[1] * np.exp(-dist_new / theta[2])
        mean = x_new @ beta + c_new @ w
        if include_noise:
            half = solve_triangular(chol, c_new.T, lower=True, check_finite=False)
            var = theta[0] + theta[1] - np.einsum("ij,ij->j", half, half)
            np.clip(var, 0.0, None, out=var)
            samples[s] = mean + np.sqrt(var) * z_noise[s]
        else:
            samples[s] = mean
    return samples, STATUS_OK, -1
