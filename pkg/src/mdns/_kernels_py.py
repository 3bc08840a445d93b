"""Pure numpy/scipy kernels; the fallback for :mod:`mdns._ckernels`.

Every function takes C-contiguous float64 arrays and returns plain floats or
new arrays. Log densities are NaN when the Cholesky factorization fails, so
callers can run their jitter schedule without exception overhead.
"""
import numpy as np
from scipy.linalg import LinAlgError, cholesky, solve_triangular

BACKEND = "python"
_LOG2PI = np.log(2.0 * np.pi)


def nonstat_correlation_matrix(h, rho_a, rho_b, dim=2.0):
    s = rho_a[:, None] + rho_b[None, :]
    pre = np.minimum(2.0 * np.sqrt(rho_a)[:, None] * np.sqrt(rho_b)[None, :] / s, 1.0)
    pre[rho_a[:, None] == rho_b[None, :]] = 1.0
    if dim != 2.0:
        pre = pre ** (0.5 * dim)
    return pre * np.exp(-h / np.sqrt(0.5 * s))


def nonstat_cov(h, tau2, sigma, rho, dim=2.0):
    cov = nonstat_correlation_matrix(h, rho, rho, dim)
    cov *= sigma[:, None] * sigma[None, :]
    cov[np.diag_indices_from(cov)] = tau2 + sigma * sigma
    return cov


def nonstat_cross(h, sigma_a, rho_a, sigma_b, rho_b, dim=2.0):
    return sigma_a[:, None] * sigma_b[None, :] * nonstat_correlation_matrix(h, rho_a, rho_b, dim)


def gauss_logpdf(cov, resid, jitter=0.0):
    a = np.array(cov, dtype=float)
    if jitter > 0.0:
        a[np.diag_indices_from(a)] += jitter * np.mean(np.diag(a))
    try:
        L = cholesky(a, lower=True, check_finite=False)
    except LinAlgError:
        return np.nan
    if not np.all(np.isfinite(np.diag(L))):
        return np.nan
    z = solve_triangular(L, resid, lower=True, check_finite=False)
    n = a.shape[0]
    return float(-0.5 * (z @ z) - np.sum(np.log(np.diag(L))) - 0.5 * n * _LOG2PI)


def day_logpdf(h, resid, tau2, sigma, rho, dim=2.0, jitter=0.0):
    return gauss_logpdf(nonstat_cov(h, tau2, sigma, rho, dim), resid, jitter)
