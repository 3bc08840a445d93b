# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for covariance assembly and per-day Gaussian densities.

Mirrors :mod:`mdns._kernels_py` exactly; see that module for the contract.
"""
import numpy as np

from libc.math cimport exp, sqrt, pow, log, M_PI
from scipy.linalg.cython_lapack cimport dpotrf
from scipy.linalg.cython_blas cimport dtrsv

BACKEND = "cython"


cdef inline double _corr(double h, double ri, double rj, double half_dim) noexcept nogil:
    cdef double s = ri + rj
    cdef double pre = 1.0
    if ri != rj:
        pre = 2.0 * sqrt(ri) * sqrt(rj) / s
        if pre > 1.0:  # AM-GM bound; only rounding can exceed it
            pre = 1.0
    if half_dim != 1.0:
        pre = pow(pre, half_dim)
    return pre * exp(-h / sqrt(0.5 * s))


cdef void _fill_cov(const double[:, ::1] h, const double[::1] tau2,
                    const double[::1] sigma, const double[::1] rho,
                    double half_dim, double[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t n = h.shape[0]
    cdef Py_ssize_t i, j
    cdef double c
    for i in range(n):
        out[i, i] = tau2[i] + sigma[i] * sigma[i]
        for j in range(i + 1, n):
            c = sigma[i] * sigma[j] * _corr(h[i, j], rho[i], rho[j], half_dim)
            out[i, j] = c
            out[j, i] = c


def nonstat_correlation_matrix(const double[:, ::1] h, const double[::1] rho_a,
                               const double[::1] rho_b, double dim=2.0):
    cdef Py_ssize_t na = h.shape[0], nb = h.shape[1], i, j
    out = np.empty((na, nb))
    cdef double[:, ::1] o = out
    cdef double half_dim = 0.5 * dim
    with nogil:
        for i in range(na):
            for j in range(nb):
                o[i, j] = _corr(h[i, j], rho_a[i], rho_b[j], half_dim)
    return out


def nonstat_cov(const double[:, ::1] h, const double[::1] tau2,
                const double[::1] sigma, const double[::1] rho, double dim=2.0):
    out = np.empty((h.shape[0], h.shape[0]))
    cdef double[:, ::1] o = out
    with nogil:
        _fill_cov(h, tau2, sigma, rho, 0.5 * dim, o)
    return out


def nonstat_cross(const double[:, ::1] h, const double[::1] sigma_a,
                  const double[::1] rho_a, const double[::1] sigma_b,
                  const double[::1] rho_b, double dim=2.0):
    cdef Py_ssize_t na = h.shape[0], nb = h.shape[1], i, j
    out = np.empty((na, nb))
    cdef double[:, ::1] o = out
    cdef double half_dim = 0.5 * dim
    with nogil:
        for i in range(na):
            for j in range(nb):
                o[i, j] = sigma_a[i] * sigma_b[j] * _corr(h[i, j], rho_a[i], rho_b[j], half_dim)
    return out


cdef double _chol_logpdf(double[:, ::1] a, double[::1] z) noexcept nogil:
    """Factor ``a`` in place and return the zero-mean log density of ``z``.

    ``z`` is overwritten with the whitened residual. Returns NaN when the
    factorization fails.
    """
    cdef int n = <int>a.shape[0]
    cdef int info = 0
    cdef int inc = 1
    cdef char uplo = b'L'
    cdef char trans = b'N'
    cdef char diag = b'N'
    cdef Py_ssize_t i
    cdef double logdet = 0.0, quad = 0.0, d
    dpotrf(&uplo, &n, &a[0, 0], &n, &info)
    if info != 0:
        return 0.0 / 0.0
    for i in range(n):
        d = a[i, i]
        logdet += log(d)
    dtrsv(&uplo, &trans, &diag, &n, &a[0, 0], &n, &z[0], &inc)
    for i in range(n):
        quad += z[i] * z[i]
    return -0.5 * quad - logdet - 0.5 * n * log(2.0 * M_PI)


def gauss_logpdf(cov, resid, double jitter=0.0):
    """Zero-mean Gaussian log density of ``resid``; NaN if not factorizable."""
    cdef double[:, ::1] a = np.array(cov, dtype=np.float64, order="C", copy=True)
    cdef double[::1] z = np.array(resid, dtype=np.float64, copy=True)
    cdef Py_ssize_t i, n = a.shape[0]
    cdef double mean_diag = 0.0
    cdef double res
    if jitter > 0.0:
        for i in range(n):
            mean_diag += a[i, i]
        mean_diag /= n
        for i in range(n):
            a[i, i] += jitter * mean_diag
    with nogil:
        res = _chol_logpdf(a, z)
    return res


def day_logpdf(const double[:, ::1] h, resid, const double[::1] tau2,
               const double[::1] sigma, const double[::1] rho,
               double dim=2.0, double jitter=0.0):
    """Assemble the covariance and evaluate the Gaussian log density in one pass."""
    cdef Py_ssize_t n = h.shape[0], i
    cdef double[:, ::1] a = np.empty((n, n))
    cdef double[::1] z = np.array(resid, dtype=np.float64, copy=True)
    cdef double mean_diag = 0.0
    cdef double res
    with nogil:
        _fill_cov(h, tau2, sigma, rho, 0.5 * dim, a)
        if jitter > 0.0:
            for i in range(n):
                mean_diag += a[i, i]
            mean_diag /= n
            for i in range(n):
                a[i, i] += jitter * mean_diag
        res = _chol_logpdf(a, z)
    return res
