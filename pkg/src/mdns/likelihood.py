"""Gaussian log densities and the penalized log-likelihood.

The penalized log-likelihood of covariance parameters ``eta`` and daily
coefficients ``beta_1..beta_m`` is::

    sum_t  log N(Y_t | Z beta_t, Sigma(Z beta_t, eta))  +  log N(beta_t | beta0, Omega)

where each day only uses its observed sites.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from . import kernels
from .covariance import (
    JITTER_SCHEDULE,
    CovParams,
    cholesky_jitter,
    covariance_from_distances,
    local_params,
)
from .errors import NotPositiveDefinite, SingularSystem, ValidationError
from .geometry import DesignMatrix, ObservationPanel, SiteSet, distance_matrix

LOG2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class MeanModel:
    """Design matrix, daily coefficients (rows of ``betas``) and their prior."""

    Z: DesignMatrix
    betas: np.ndarray
    beta0: np.ndarray
    Omega: np.ndarray

    def __post_init__(self):
        J = self.Z.J
        betas = np.array(self.betas, dtype=float)
        if betas.ndim == 1:
            betas = betas[None, :]
        beta0 = np.array(self.beta0, dtype=float).reshape(-1)
        Omega = np.array(self.Omega, dtype=float)
        if betas.shape[1] != J or beta0.size != J or Omega.shape != (J, J):
            raise ValidationError("beta / beta0 / Omega dimensions must match the design")
        if not np.allclose(Omega, Omega.T):
            raise ValidationError("Omega must be symmetric")
        try:
            np.linalg.cholesky(Omega)
        except np.linalg.LinAlgError:
            raise ValidationError("Omega must be positive definite") from None
        for arr in (betas, beta0, Omega):
            arr.setflags(write=False)
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "beta0", beta0)
        object.__setattr__(self, "Omega", Omega)

    @property
    def m(self) -> int:
        return self.betas.shape[0]


@dataclass(frozen=True, eq=False)
class ModelState:
    mean: MeanModel
    eta: CovParams


def diffuse_prior(J: int, log_scale: float = 10.0):
    """``beta0 = 0`` and ``Omega = e^{log_scale} I``; effectively no penalty."""
    return np.zeros(J), math.exp(log_scale) * np.eye(J)


def mvn_logpdf(y, mean, cov) -> float:
    """Multivariate normal log density via a Cholesky factorization."""
    y = np.asarray(y, dtype=float).reshape(-1)
    resid = y - np.asarray(mean, dtype=float).reshape(-1)
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.shape != (resid.size, resid.size):
        raise ValidationError("covariance shape does not match y")
    if not np.all(np.isfinite(cov)):
        raise NotPositiveDefinite("covariance has non-finite entries")
    for jitter in (0.0,) + JITTER_SCHEDULE:
        val = kernels.gauss_logpdf(cov, resid, jitter)
        if not math.isnan(val):
            return float(val)
    raise NotPositiveDefinite()


class GaussianPrior:
    """Cached ``log N(beta | beta0, Omega)``."""

    def __init__(self, beta0, Omega):
        self.beta0 = np.asarray(beta0, dtype=float).reshape(-1)
        self.Omega = np.asarray(Omega, dtype=float)
        self.L = np.linalg.cholesky(self.Omega)
        self.J = self.beta0.size
        self.const = -np.sum(np.log(np.diag(self.L))) - 0.5 * self.J * LOG2PI
        # whitening rows used by the GLS solve: ||W (beta - beta0)||^2
        self.W = solve_triangular(self.L, np.eye(self.J), lower=True)

    def logpdf(self, beta) -> float:
        z = solve_triangular(self.L, np.asarray(beta, dtype=float) - self.beta0, lower=True, check_finite=False)
        return float(self.const - 0.5 * z @ z)

    def logpdf_rows(self, betas) -> np.ndarray:
        z = solve_triangular(self.L, (np.asarray(betas, dtype=float) - self.beta0).T, lower=True, check_finite=False)
        return self.const - 0.5 * np.sum(z * z, axis=0)


def gls_whitened(A, b, prior: GaussianPrior, return_cov=False):
    """Solve ``min ||A beta - b||^2 + ||W (beta - beta0)||^2`` by QR.

    ``A`` and ``b`` are the covariance-whitened design and response. Columns
    are equilibrated first because raw-degree quadratic designs are badly
    scaled.
    """
    M = np.vstack([A, prior.W])
    rhs = np.concatenate([b, prior.W @ prior.beta0])
    scale = np.linalg.norm(M, axis=0)
    if np.any(scale == 0) or not np.all(np.isfinite(M)):
        raise SingularSystem("GLS system has a zero or non-finite column")
    Q, R = np.linalg.qr(M / scale)
    d = np.abs(np.diag(R))
    if d.min() <= 1e-12 * d.max():
        raise SingularSystem("GLS normal equations are singular")
    beta = solve_triangular(R, Q.T @ rhs) / scale
    if not return_cov:
        return beta
    Rinv = solve_triangular(R, np.eye(R.shape[0])) / scale[:, None]
    return beta, Rinv @ Rinv.T


class PenalizedLikelihood:
    """Penalized log-likelihood evaluator with per-day data precomputed.

    Parameters
    ----------
    panel, sites : the data
    Z : DesignMatrix or (n, J) array aligned with ``sites``
    beta0, Omega : prior mean and covariance of the daily coefficients
    """

    def __init__(self, panel: ObservationPanel, sites: SiteSet, Z, beta0, Omega):
        Zm = Z.Z if isinstance(Z, DesignMatrix) else np.asarray(Z, dtype=float)
        if Zm.shape[0] != sites.n or panel.n != sites.n:
            raise ValidationError("panel, sites and design must have the same number of sites")
        self.panel = panel
        self.sites = sites
        self.Z = Zm
        self.n, self.J = Zm.shape
        self.m = panel.m
        self.prior = GaussianPrior(beta0, Omega)
        if self.prior.J != self.J:
            raise ValidationError("prior dimension does not match the design")
        H = distance_matrix(sites)
        self.idx, self.y, self.Zd, self.h = [], [], [], []
        groups: dict[bytes, list[int]] = {}
        for t in range(self.m):
            idx, y = panel.day(t)
            self.idx.append(idx)
            self.y.append(y)
            self.Zd.append(np.ascontiguousarray(Zm[idx]))
            self.h.append(np.ascontiguousarray(H[np.ix_(idx, idx)]))
            groups.setdefault(panel.observed[:, t].tobytes(), []).append(t)
        self.groups = [np.array(g) for g in groups.values()]
        self.fingerprint = data_fingerprint(panel, Zm)

    # -- per-day pieces ------------------------------------------------------

    def day_loglik(self, t: int, eta: CovParams, beta_t, strict: bool = False) -> float:
        """``log N(Y_t | Z beta_t, Sigma_t)`` on the day's observed sites.

        Returns ``-inf`` when the covariance cannot be factorized, unless
        ``strict`` is set, in which case :class:`NotPositiveDefinite` is raised.
        """
        mu = self.Zd[t] @ beta_t
        lp = local_params(mu, eta)
        resid = self.y[t] - mu
        dim = float(eta.dim)
        for jitter in (0.0,) + JITTER_SCHEDULE:
            val = kernels.day_logpdf(self.h[t], resid, lp.tau2, lp.sigma, lp.rho, dim, jitter)
            if not math.isnan(val):
                return float(val)
            if not np.all(np.isfinite(lp.sigma)) or not np.all(np.isfinite(lp.tau2)):
                break
        if strict:
            raise NotPositiveDefinite(day=t)
        return -math.inf

    def day_terms(self, eta: CovParams, betas, strict: bool = False) -> np.ndarray:
        """Per-day penalized log-likelihood contributions."""
        betas = np.asarray(betas, dtype=float)
        data = np.array([self.day_loglik(t, eta, betas[t], strict) for t in range(self.m)])
        return data + self.prior.logpdf_rows(betas)

    def total(self, eta: CovParams, betas, strict: bool = False) -> float:
        if eta.is_stationary:
            return self.stationary_total(eta, betas, strict)
        return float(np.sum(self.day_terms(eta, betas, strict)))

    def stationary_total(self, eta: CovParams, betas, strict: bool = False) -> float:
        """Total for ``b = 0``: one factorization per missing-data pattern."""
        betas = np.asarray(betas, dtype=float)
        total = 0.0
        for days in self.groups:
            t0 = days[0]
            k = self.idx[t0].size
            cov = covariance_from_distances(self.h[t0], np.zeros(k), eta)
            try:
                L, _ = cholesky_jitter(cov, day=int(t0))
            except NotPositiveDefinite:
                if strict:
                    raise
                return -math.inf
            R = np.column_stack([self.y[t] - self.Zd[t] @ betas[t] for t in days])
            W = solve_triangular(L, R, lower=True, check_finite=False)
            logdet = 2.0 * np.sum(np.log(np.diag(L)))
            total += -0.5 * np.sum(W * W) - 0.5 * len(days) * (logdet + k * LOG2PI)
        return float(total + np.sum(self.prior.logpdf_rows(betas)))

    # -- closed-form coefficient updates ------------------------------------

    def day_factor(self, t: int, eta: CovParams, beta_t=None):
        mu = self.Zd[t] @ beta_t if beta_t is not None else np.zeros(self.idx[t].size)
        cov = covariance_from_distances(self.h[t], mu, eta)
        L, _ = cholesky_jitter(cov, day=t)
        return L

    def gls_betas(self, eta: CovParams, betas=None, return_cov=False):
        """GLS coefficients for every day with ``Sigma`` evaluated at ``betas``.

        For stationary ``eta`` the covariance does not depend on the
        coefficients and ``betas`` may be omitted.
        """
        out = np.empty((self.m, self.J))
        covs = np.empty((self.m, self.J, self.J)) if return_cov else None
        cache = {}
        for t in range(self.m):
            if eta.is_stationary:
                key = self.panel.observed[:, t].tobytes()
                if key not in cache:
                    cache[key] = self.day_factor(t, eta)
                L = cache[key]
            else:
                L = self.day_factor(t, eta, None if betas is None else np.asarray(betas)[t])
            A = solve_triangular(L, self.Zd[t], lower=True, check_finite=False)
            b = solve_triangular(L, self.y[t], lower=True, check_finite=False)
            res = gls_whitened(A, b, self.prior, return_cov)
            if return_cov:
                out[t], covs[t] = res
            else:
                out[t] = res
        return (out, covs) if return_cov else out


def data_fingerprint(panel: ObservationPanel, Z) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(np.nan_to_num(panel.values, nan=0.0)).tobytes())
    h.update(np.ascontiguousarray(panel.observed).tobytes())
    h.update(np.ascontiguousarray(np.asarray(Z, dtype=float)).tobytes())
    return h.hexdigest()[:16]


def penalized_loglik(panel: ObservationPanel, sites: SiteSet, state: ModelState) -> float:
    """Penalized log-likelihood of a full model state.

    Raises :class:`NotPositiveDefinite` (with the day index) if any day's
    covariance cannot be factorized.
    """
    mm = state.mean
    if mm.m != panel.m:
        raise ValidationError("one coefficient row per panel day is required")
    engine = PenalizedLikelihood(panel, sites, mm.Z, mm.beta0, mm.Omega)
    return float(np.sum(engine.day_terms(state.eta, mm.betas, strict=True)))
