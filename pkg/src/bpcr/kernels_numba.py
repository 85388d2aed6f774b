"""Numba-compiled kernels: the MCMC chain loop and batch kriging prediction.

Twin of `kernels_numpy` with identical signatures, status codes, and random-stream
consumption. Linear algebra is hand-rolled (Cholesky-Banachiewicz, triangular
substitution) because the kernels must report failures through flags instead of
exceptions inside nopython code.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

STATUS_OK = 0
STATUS_COV_FAIL = 1
STATUS_PRECISION_FAIL = 2

_JITTER_REL = 1e-10
_JITTER_TRIES = 3
_ADAPT_EPS = 1e-10


@njit(cache=True)
def _chol_lower(a):
    """Lower Cholesky factor with a success flag; `not (s > 0)` also traps NaN."""
    n = a.shape[0]
    chol = np.zeros((n, n))
    for j in range(n):
        s = a[j, j]
        for k in range(j):
            s -= chol[j, k] * chol[j, k]
        if not (s > 0.0):
            return chol, False
        d = math.sqrt(s)
        chol[j, j] = d
        for i in range(j + 1, n):
            t = a[i, j]
            for k in range(j):
                t -= chol[i, k] * chol[j, k]
            chol[i, j] = t / d
    return chol, True


@njit(cache=True)
def _solve_lower_vec(chol, b):
    n = b.shape[0]
    out = np.empty(n)
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= chol[i, k] * out[k]
        out[i] = s / chol[i, i]
    return out


@njit(cache=True)
def _solve_upper_vec(chol, b):
    """Solve chol.T @ x = b with chol stored lower."""
    n = b.shape[0]
    out = np.empty(n)
    for i in range(n - 1, -1, -1):
        s = b[i]
        for k in range(i + 1, n):
            s -= chol[k, i] * out[k]
        out[i] = s / chol[i, i]
    return out


@njit(cache=True)
def _solve_lower_mat(chol, b):
    n, m = b.shape
    out = np.empty((n, m))
    for j in range(m):
        for i in range(n):
            s = b[i, j]
            for k in range(i):
                s -= chol[i, k] * out[k, j]
            out[i, j] = s / chol[i, i]
    return out


@njit(cache=True)
def _factor_sigma(dist, theta):
    """Cholesky of sigma2*exp(-d/phi) + tau2*I with the jitter retry policy."""
    tau2 = theta[0]
    sigma2 = theta[1]
    phi = theta[2]
    n = dist.shape[0]
    bad = np.empty((1, 1))
    if not (np.isfinite(tau2) and np.isfinite(sigma2) and np.isfinite(phi)):
        return bad, 0.0, False
    if tau2 <= 0.0 or sigma2 < 0.0 or phi <= 0.0:
        return bad, 0.0, False
    sigma = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            sigma[i, j] = sigma2 * math.exp(-dist[i, j] / phi)
        sigma[i, i] += tau2
    trace = 0.0
    for i in range(n):
        trace += sigma[i, i]
    base = _JITTER_REL * trace / n
    for attempt in range(_JITTER_TRIES + 1):
        if attempt > 0:
            jit = base * 10.0 ** (attempt - 1)
            mat = sigma.copy()
            for i in range(n):
                mat[i, i] += jit
        else:
            mat = sigma
        chol, ok = _chol_lower(mat)
        if ok:
            logdet = 0.0
            for i in range(n):
                logdet += math.log(chol[i, i])
            return chol, 2.0 * logdet, True
    return bad, 0.0, False


@njit(cache=True)
def _log_prior(u, log_mu, prior_w, n_active):
    total = 0.0
    for j in range(n_active):
        d = u[j] - log_mu[j]
        total += prior_w[j] * d * d
    return -0.5 * total


@njit(cache=True)
def _adapt_chol(u_hist, m, n_active, base_scale):
    fallback = base_scale * np.eye(n_active)
    if m < 2:
        return fallback
    varied = False
    for j in range(n_active):
        lo = u_hist[0, j]
        hi = u_hist[0, j]
        for i in range(1, m):
            v = u_hist[i, j]
            if v < lo:
                lo = v
            if v > hi:
                hi = v
        if hi > lo:
            varied = True
    if not varied:  # constant history (all moves rejected so far)
        return fallback
    mean = np.zeros(n_active)
    for i in range(m):
        for j in range(n_active):
            mean[j] += u_hist[i, j]
    for j in range(n_active):
        mean[j] /= m
    cov = np.zeros((n_active, n_active))
    for i in range(m):
        for j in range(n_active):
            dj = u_hist[i, j] - mean[j]
            for k in range(j, n_active):
                cov[j, k] += dj * (u_hist[i, k] - mean[k])
    scale = 2.38 ** 2 / n_active
    for j in range(n_active):
        for k in range(j, n_active):
            v = scale * cov[j, k] / (m - 1)
            cov[j, k] = v
            cov[k, j] = v
        cov[j, j] += _ADAPT_EPS
        if not np.isfinite(cov[j, j]):
            return fallback
    chol, ok = _chol_lower(cov)
    if not ok:
        return fallback
    return chol


@njit(cache=True)
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
    """See kernels_numpy.run_chain; same contract, compiled loop."""
    n, p1 = x.shape
    n_samples = z_beta.shape[0]

    beta = beta_init.copy()
    alpha0 = alpha0_init
    alpha1 = alpha1_init
    theta = theta0.copy()
    u = np.log(theta[:n_active].copy())

    beta_out = np.zeros((n_samples, p1))
    alpha_out = np.zeros((n_samples, 2))
    theta_out = np.zeros((n_samples, 3))
    accept_out = np.zeros(n_samples, dtype=np.uint8)
    u_hist = np.zeros((n_samples, n_active))

    prop_chol = base_scale * np.eye(n_active)

    chol, logdet, ok = _factor_sigma(dist, theta)
    if not ok:
        return beta_out, alpha_out, theta_out, accept_out, STATUS_COV_FAIL, 0
    xw = _solve_lower_mat(chol, x)
    yw = _solve_lower_vec(chol, y)

    for i in range(n_samples):
        # ---- beta | alpha, theta, y ----
        if sample_beta_flag:
            prec = np.dot(xw.T, xw)
            prec[0, 0] += alpha0
            for j in range(1, p1):
                prec[j, j] += alpha1
            r_fac, ok_p = _chol_lower(prec)
            if not ok_p:
                return beta_out, alpha_out, theta_out, accept_out, STATUS_PRECISION_FAIL, i
            b = np.dot(xw.T, yw)
            w = _solve_lower_vec(r_fac, b)
            beta_hat = _solve_upper_vec(r_fac, w)
            beta = beta_hat + _solve_upper_vec(r_fac, z_beta[i])

        # ---- alpha | beta ----
        if sample_alpha_flag:
            ss_slopes = 0.0
            for j in range(1, p1):
                ss_slopes += beta[j] * beta[j]
            if literal_alpha:
                rw = yw - np.dot(xw, beta)
                ss_aug = 0.0
                for k in range(n):
                    ss_aug += rw[k] * rw[k]
                ss_aug += alpha0 * beta[0] * beta[0] + alpha1 * ss_slopes
                new0 = g_alpha[i, 0] / ((nu0 / alpha0 + ss_aug) / 2.0)
                new1 = g_alpha[i, 1] / ((nu1 / alpha1 + ss_aug) / 2.0)
                alpha0 = new0
                alpha1 = new1
            else:
                alpha0 = g_alpha[i, 0] / ((nu0 * a0 + beta[0] * beta[0]) / 2.0)
                alpha1 = g_alpha[i, 1] / ((nu1 * a1 + ss_slopes) / 2.0)

        # ---- one Metropolis step on log-theta ----
        rw = yw - np.dot(xw, beta)
        quad = 0.0
        for k in range(n):
            quad += rw[k] * rw[k]
        lp_cur = -0.5 * quad - 0.5 * logdet + _log_prior(u, log_mu, prior_w, n_active)
        u_star = u + np.dot(prop_chol, z_prop[i, :n_active])
        accepted = False
        in_support = True
        for j in range(n_active):
            if not np.isfinite(u_star[j]):
                in_support = False
        if in_support and n_active == 3:
            in_support = log_phi_lo <= u_star[2] <= log_phi_hi
        if in_support:
            theta_star = theta.copy()
            for j in range(n_active):
                theta_star[j] = math.exp(u_star[j])
            chol_c, logdet_c, ok_c = _factor_sigma(dist, theta_star)
            if ok_c:
                rc = _solve_lower_vec(chol_c, y - np.dot(x, beta))
                quad_c = 0.0
                for k in range(n):
                    quad_c += rc[k] * rc[k]
                lp_star = -0.5 * quad_c - 0.5 * logdet_c + _log_prior(
                    u_star, log_mu, prior_w, n_active
                )
                # Symmetric walk in u = log(theta) with a u-space prior: no
                # Jacobian term in the ratio.
                log_ratio = lp_star - lp_cur
                if np.isfinite(log_ratio) and log_u[i] < log_ratio:
                    accepted = True
                    theta = theta_star
                    u = u_star
                    chol = chol_c
                    logdet = logdet_c
                    xw = _solve_lower_mat(chol, x)
                    yw = _solve_lower_vec(chol, y)

        for j in range(n_active):
            u_hist[i, j] = u[j]
        if (i + 1) >= adapt_start and (i + 1) % adapt_interval == 0:
            prop_chol = _adapt_chol(u_hist, i + 1, n_active, base_scale)

        for j in range(p1):
            beta_out[i, j] = beta[j]
        alpha_out[i, 0] = alpha0
        alpha_out[i, 1] = alpha1
        for j in range(3):
            theta_out[i, j] = theta[j]
        accept_out[i] = 1 if accepted else 0

    return beta_out, alpha_out, theta_out, accept_out, STATUS_OK, -1


@njit(cache=True)
def predict_samples(x_new, dist_new, dist, x, y, beta_states, theta_states, include_noise, z_noise):
    """See kernels_numpy.predict_samples; same contract, compiled loop."""
    n_states = beta_states.shape[0]
    m = x_new.shape[0]
    n = x.shape[0]
    samples = np.zeros((n_states, m))
    for s in range(n_states):
        theta = theta_states[s]
        chol, _, ok = _factor_sigma(dist, theta)
        if not ok:
            return samples, STATUS_COV_FAIL, s
        beta = beta_states[s]
        resid = y - np.dot(x, beta)
        w = _solve_upper_vec(chol, _solve_lower_vec(chol, resid))
        c_new = np.empty((m, n))
        sigma2 = theta[1]
        phi = theta[2]
        for jj in range(m):
            for k in range(n):
                c_new[jj, k] = sigma2 * math.exp(-dist_new[jj, k] / phi)
        mean = np.dot(x_new, beta) + np.dot(c_new, w)
        if include_noise:
            half = _solve_lower_mat(chol, c_new.T.copy())
            for jj in range(m):
                var = theta[0] + sigma2
                for k in range(n):
                    var -= half[k, jj] * half[k, jj]
                if var < 0.0:
                    var = 0.0
                samples[s, jj] = mean[jj] + math.sqrt(var) * z_noise[s, jj]
        else:
            for jj in range(m):
                samples[s, jj] = mean[jj]
    return samples, STATUS_OK, -1
