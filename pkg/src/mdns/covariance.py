"""Mean-dependent link functions and the nonstationary covariance.

The nugget variance, partial-sill standard deviation and squared-range
scalar at a site are exponential link functions of the local mean::

    tau2 = g(a1, b1; mu),  sigma = g(a2, b2; mu),  rho = g(a3, b3; mu)

with ``g = exp(a + b*mu)`` (MDNS), ``exp(a + b*log(1 + max(mu, 0)))``
(LMDNS) or ``exp(a)`` (STATIONARY). Correlations come from the isotropic
kernel-convolution construction with an exponential base correlation::

    R(i, j) = (4 rho_i rho_j / (rho_i + rho_j)^2)^(d/4)
              * exp(-h_ij / sqrt((rho_i + rho_j) / 2))
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import LinAlgError, cholesky

from . import kernels
from .errors import MdnsWarning, NotPositiveDefinite, ValidationError
from .geometry import SiteSet, cross_distance, distance_matrix

LOG_MIN = math.log(1e-300)
LOG_MAX = math.log(1e300)

#: relative diagonal jitter tried, in order, after a failed factorization
JITTER_SCHEDULE = (1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


class LinkKind(str, enum.Enum):
    STATIONARY = "stationary"
    MDNS = "mdns"
    LMDNS = "lmdns"


@dataclass(frozen=True)
class LinkFamily:
    """Link kind for the nugget, sill and range components."""

    nugget: LinkKind = LinkKind.MDNS
    sill: LinkKind = LinkKind.MDNS
    range: LinkKind = LinkKind.MDNS

    def __post_init__(self):
        for name in ("nugget", "sill", "range"):
            object.__setattr__(self, name, LinkKind(getattr(self, name)))

    @classmethod
    def stationary(cls) -> "LinkFamily":
        return cls(LinkKind.STATIONARY, LinkKind.STATIONARY, LinkKind.STATIONARY)

    @classmethod
    def mdns(cls) -> "LinkFamily":
        return cls()

    def kinds(self) -> tuple[LinkKind, LinkKind, LinkKind]:
        return (self.nugget, self.sill, self.range)

    @property
    def is_stationary(self) -> bool:
        return all(k is LinkKind.STATIONARY for k in self.kinds())

    def free_b(self) -> tuple[bool, bool, bool]:
        return tuple(k is not LinkKind.STATIONARY for k in self.kinds())

    def label(self) -> str:
        return "/".join(k.value for k in self.kinds())


@dataclass(frozen=True)
class CovParams:
    """Covariance parameters ``(a1, b1, a2, b2, a3, b3)`` plus link kinds."""

    a1: float
    b1: float
    a2: float
    b2: float
    a3: float
    b3: float
    links: LinkFamily = LinkFamily()
    dim: int = 2

    def __post_init__(self):
        vals = self.as_array()
        if not np.all(np.isfinite(vals)):
            raise ValidationError(f"covariance parameters must be finite, got {vals.tolist()}")
        for kind, b in zip(self.links.kinds(), vals[1::2]):
            if kind is LinkKind.STATIONARY and b != 0.0:
                raise ValidationError("a component with a stationary link must have b = 0")

    def as_array(self) -> np.ndarray:
        return np.array([self.a1, self.b1, self.a2, self.b2, self.a3, self.b3], dtype=float)

    @classmethod
    def from_array(cls, values, links: LinkFamily | None = None, dim: int = 2) -> "CovParams":
        links = LinkFamily() if links is None else links
        v = [float(x) for x in values]
        for k, kind in enumerate(links.kinds()):
            if kind is LinkKind.STATIONARY:
                v[2 * k + 1] = 0.0
        return cls(*v, links=links, dim=dim)

    def with_links(self, links: LinkFamily) -> "CovParams":
        return CovParams.from_array(self.as_array(), links, self.dim)

    @property
    def is_stationary(self) -> bool:
        return self.b1 == 0.0 and self.b2 == 0.0 and self.b3 == 0.0


class LocalParams(NamedTuple):
    tau2: np.ndarray
    sigma: np.ndarray
    rho: np.ndarray
    clamped: bool


def link_covariate(kind: LinkKind, mu):
    """The mean transform entering a link: ``mu``, ``log1p(max(mu, 0))`` or 0."""
    kind = LinkKind(kind)
    mu = np.asarray(mu, dtype=float)
    if kind is LinkKind.MDNS:
        return mu
    if kind is LinkKind.LMDNS:
        return np.log1p(np.maximum(mu, 0.0))
    return np.zeros_like(mu)


def _link(kind, a, b, mu):
    mu = np.asarray(mu, dtype=float)
    if kind is LinkKind.STATIONARY:
        expo = np.full(mu.shape, float(a))
    else:
        expo = a + b * link_covariate(kind, mu)
    clamped = bool(np.any((expo < LOG_MIN) | (expo > LOG_MAX) | np.isnan(expo)))
    if clamped:
        expo = np.clip(np.nan_to_num(expo, nan=LOG_MAX), LOG_MIN, LOG_MAX)
    return np.exp(expo), clamped


def link_eval(kind, a: float, b: float, mu: float) -> float:
    """Evaluate one link at a scalar mean; output is clamped to [1e-300, 1e300]."""
    val, clamped = _link(LinkKind(kind), a, b, mu)
    if clamped:
        warnings.warn("link value clamped to [1e-300, 1e300]", MdnsWarning, stacklevel=2)
    return float(val)


def local_params(mu_vec, eta: CovParams) -> LocalParams:
    """Site-wise nugget variance, sill standard deviation and range scalar."""
    mu = np.ascontiguousarray(mu_vec, dtype=float)
    k1, k2, k3 = eta.links.kinds()
    tau2, c1 = _link(k1, eta.a1, eta.b1, mu)
    sigma, c2 = _link(k2, eta.a2, eta.b2, mu)
    rho, c3 = _link(k3, eta.a3, eta.b3, mu)
    return LocalParams(tau2, sigma, rho, c1 or c2 or c3)


def nonstat_correlation(h: float, rho_i: float, rho_j: float, dim: int = 2) -> float:
    """Scalar nonstationary correlation between two sites."""
    s = rho_i + rho_j
    pre = 1.0 if rho_i == rho_j else min(2.0 * math.sqrt(rho_i) * math.sqrt(rho_j) / s, 1.0) ** (0.5 * dim)
    return pre * math.exp(-h / math.sqrt(0.5 * s))


def stationary_covariance(h, eta: CovParams) -> np.ndarray:
    """Exponential covariance ``e^{a1} I + e^{2 a2} exp(-h / e^{a3/2})``."""
    h = np.asarray(h, dtype=float)
    cov = math.exp(2.0 * eta.a2) * np.exp(-h / math.exp(0.5 * eta.a3))
    cov[np.diag_indices_from(cov)] += math.exp(eta.a1)
    return cov


def covariance_from_distances(h, mu_vec, eta: CovParams) -> np.ndarray:
    lp = local_params(mu_vec, eta)
    return kernels.nonstat_cov(np.ascontiguousarray(h, dtype=float), lp.tau2, lp.sigma, lp.rho, float(eta.dim))


def covariance_matrix(sites: SiteSet, mu_vec, eta: CovParams, h=None) -> np.ndarray:
    """Nonstationary covariance at ``sites`` given the site means ``mu_vec``.

    ``Sigma_ij = tau2_i [i == j] + sigma_i sigma_j R(i, j)``. Pass a
    precomputed distance matrix ``h`` to skip recomputing it.
    """
    mu = np.asarray(mu_vec, dtype=float).reshape(-1)
    if mu.size != sites.n:
        raise ValidationError(f"need {sites.n} means, got {mu.size}")
    if h is None:
        h = distance_matrix(sites)
    return covariance_from_distances(h, mu, eta)


def cross_covariance(sites_a: SiteSet, mu_a, sites_b: SiteSet, mu_b, eta: CovParams, h=None) -> np.ndarray:
    """Covariance between two site sets; no nugget enters cross blocks."""
    la = local_params(np.asarray(mu_a, dtype=float).reshape(-1), eta)
    lb = local_params(np.asarray(mu_b, dtype=float).reshape(-1), eta)
    if h is None:
        h = cross_distance(sites_a, sites_b)
    return kernels.nonstat_cross(np.ascontiguousarray(h, dtype=float), la.sigma, la.rho, lb.sigma, lb.rho, float(eta.dim))


def cholesky_jitter(cov, day=None) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor, retrying with the bounded jitter schedule.

    Returns ``(L, jitter)`` where ``jitter`` is the relative diagonal
    increment that was needed (0.0 if none).
    """
    cov = np.asarray(cov, dtype=float)
    if not np.all(np.isfinite(cov)):
        raise NotPositiveDefinite("matrix has non-finite entries", day=day)
    for jitter in (0.0,) + JITTER_SCHEDULE:
        a = cov
        if jitter:
            a = cov.copy()
            a[np.diag_indices_from(a)] += jitter * np.mean(np.diag(cov))
        try:
            L = cholesky(a, lower=True, check_finite=False)
        except LinAlgError:
            continue
        if np.all(np.diag(L) > 0):
            return L, jitter
    raise NotPositiveDefinite(day=day)
