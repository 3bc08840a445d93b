"""Estimation: stationary coordinate ascent, one-step and full maximum likelihood.

* :func:`fit_stationary` alternates a simplex search over ``(a1, a2, a3)``
  with closed-form GLS updates of every day's coefficients.
* :func:`fit_onestep` keeps the stationary coefficients and maximizes over
  the covariance parameters only (``b`` entries freed per the link family).
* :func:`fit_full_mle` searches covariance parameters and all daily
  coefficients jointly, warm-started at the one-step solution.
"""
from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .covariance import CovParams, LinkFamily, LinkKind, cholesky_jitter, link_covariate
from .errors import NoImprovement, ValidationError
from .geometry import DesignMatrix, ObservationPanel, SiteSet, distance_matrix
from .likelihood import (
    GaussianPrior,
    MeanModel,
    ModelState,
    PenalizedLikelihood,
    diffuse_prior,
    gls_whitened,
)
from .optimize import maximize
from scipy.linalg import solve_triangular


#: sign patterns for the one-step starting ``b`` values, in units of half a
#: scaled step; the likelihood surface has distant local maxima along ``b``
ONESTEP_B_STARTS = ((0, 0, 0), (1, 1, 1), (-1, -1, -1), (1, 1, -1), (-1, -1, 1))

#: a nugget below this fraction of the sill counts as collapsed; the joint
#: search then also starts from a nugget of :data:`NUGGET_LIFT` times the sill
NUGGET_COLLAPSED = 1e-3
NUGGET_LIFT = 0.25


class FitMethod(str, enum.Enum):
    STATIONARY = "stationary"
    ONESTEP = "onestep"
    FULLMLE = "fullmle"


@dataclass(frozen=True)
class FitConfig:
    """Optimizer settings shared by all fitters.

    ``max_evals`` is the per-run simplex budget; ``fullmle_max_evals``
    overrides it for the joint search (default: ``max_evals``).
    ``onestep_starts`` is how many entries of :data:`ONESTEP_B_STARTS` the
    one-step search tries (1 means only ``b = 0``).
    """

    max_outer_iters: int = 50
    rel_ll_tol: float = 1e-6
    max_evals: int = 2000
    restart_count: int = 2
    init_step: float = 0.25
    xatol: float = 1e-6
    fatol: float = 1e-8
    fullmle_max_evals: int | None = None
    onestep_starts: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.max_outer_iters < 1 or self.max_evals < 1 or self.restart_count < 0:
            raise ValidationError("iteration counts must be positive")
        if not (self.rel_ll_tol > 0 and self.init_step > 0 and self.xatol > 0 and self.fatol > 0):
            raise ValidationError("tolerances and steps must be positive")
        if not 1 <= self.onestep_starts <= len(ONESTEP_B_STARTS):
            raise ValidationError(f"onestep_starts must be in 1..{len(ONESTEP_B_STARTS)}")
        if self.fullmle_max_evals is not None and self.fullmle_max_evals < 1:
            raise ValidationError("fullmle_max_evals must be positive")


@dataclass(frozen=True, eq=False)
class FitResult:
    state: ModelState
    loglik: float
    method: FitMethod
    converged: bool
    evals: int
    wall_time: float = 0.0
    fingerprint: str = ""
    trace: tuple[float, ...] = field(default=())

    @property
    def eta(self) -> CovParams:
        return self.state.eta

    @property
    def betas(self) -> np.ndarray:
        return self.state.mean.betas


def fit_beta_gls(y, Z, Sigma, beta0, Omega) -> np.ndarray:
    """Penalized GLS coefficients for one day.

    ``(Z' S^-1 Z + Omega^-1)^-1 (Z' S^-1 y + Omega^-1 beta0)``, solved through
    a Cholesky factor of ``Sigma`` and a QR of the whitened system.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    Z = np.asarray(Z, dtype=float)
    L, _ = cholesky_jitter(Sigma)
    A = solve_triangular(L, Z, lower=True)
    b = solve_triangular(L, y, lower=True)
    return gls_whitened(A, b, GaussianPrior(beta0, Omega))


def _design(Z) -> DesignMatrix:
    return Z if isinstance(Z, DesignMatrix) else DesignMatrix(Z)


def _engine(panel, sites, Z, beta0, Omega) -> PenalizedLikelihood:
    J = _design(Z).J
    if beta0 is None or Omega is None:
        d0, dO = diffuse_prior(J)
        beta0 = d0 if beta0 is None else beta0
        Omega = dO if Omega is None else Omega
    return PenalizedLikelihood(panel, sites, _design(Z), beta0, Omega)


def _initial_stationary(engine: PenalizedLikelihood) -> CovParams:
    """Coarse grid over nugget share and range scale around OLS residuals."""
    resid = []
    for t in range(engine.m):
        Zt, yt = engine.Zd[t], engine.y[t]
        if yt.size > engine.J:
            coef, *_ = np.linalg.lstsq(Zt, yt, rcond=None)
            resid.append(yt - Zt @ coef)
        else:
            resid.append(yt - yt.mean())
    r = np.concatenate(resid)
    var = float(np.mean(r * r)) if r.size else 1.0
    var = var if var > 1e-12 else 1.0
    h = distance_matrix(engine.sites)
    hmax = float(h.max()) if engine.n > 1 else 1.0
    hmax = hmax if hmax > 0 else 1.0
    best, best_ll = None, -math.inf
    for share in (0.1, 0.5, 0.9):
        for frac in (0.05, 0.2, 1.0, 4.0):
            eta = CovParams(
                math.log(share * var), 0.0,
                0.5 * math.log((1 - share) * var), 0.0,
                2.0 * math.log(frac * hmax), 0.0,
                LinkFamily.stationary(),
            )
            ll = engine.stationary_total(eta, engine.gls_betas(eta))
            if ll > best_ll:
                best, best_ll = eta, ll
    if best is None:
        raise NoImprovement("no finite starting point for the stationary fit")
    return best


def fit_stationary(panel: ObservationPanel, sites: SiteSet, Z, beta0=None, Omega=None,
                   cfg: FitConfig = FitConfig(), eta_init: CovParams | None = None) -> FitResult:
    """Stationary fit by alternating simplex steps on ``(a1, a2, a3)`` and GLS.

    Stops when the relative gain between consecutive covariance steps drops
    below ``cfg.rel_ll_tol`` or after ``cfg.max_outer_iters`` rounds.
    """
    t0 = time.perf_counter()
    engine = _engine(panel, sites, Z, beta0, Omega)
    links = LinkFamily.stationary()
    eta = eta_init.with_links(links) if eta_init is not None else _initial_stationary(engine)
    betas = engine.gls_betas(eta)
    evals = 0
    trace = []
    prev = None
    converged = False

    for _ in range(cfg.max_outer_iters):
        def objective(x, betas=betas):
            if not np.all(np.isfinite(x)):
                return -math.inf
            return engine.stationary_total(CovParams(x[0], 0.0, x[1], 0.0, x[2], 0.0, links), betas)

        res = maximize(
            objective,
            [eta.a1, eta.a2, eta.a3],
            cfg.init_step,
            max_evals=cfg.max_evals,
            restarts=cfg.restart_count,
            xatol=cfg.xatol,
            fatol=cfg.fatol,
        )
        evals += res.evals
        eta = CovParams(res.x[0], 0.0, res.x[1], 0.0, res.x[2], 0.0, links)
        ll = res.value
        trace.append(ll)
        if prev is not None and ll - prev <= cfg.rel_ll_tol * max(1.0, abs(prev)):
            converged = res.converged
            break
        prev = ll
        betas = engine.gls_betas(eta)

    mean = MeanModel(_design(Z), betas, engine.prior.beta0, engine.prior.Omega)
    loglik = engine.stationary_total(eta, betas, strict=True)
    return FitResult(
        ModelState(mean, eta), loglik, FitMethod.STATIONARY, converged, evals,
        time.perf_counter() - t0, engine.fingerprint, tuple(trace),
    )


def _b_scales(engine: PenalizedLikelihood, betas, links: LinkFamily) -> np.ndarray:
    """RMS of each link covariate over all observed site-days.

    Simplex steps for a ``b`` entry are divided by this so a unit step moves
    the link exponent by about ``init_step``.
    """
    mu = np.concatenate([engine.Zd[t] @ betas[t] for t in range(engine.m)])
    out = np.ones(3)
    for k, kind in enumerate(links.kinds()):
        if kind is not LinkKind.STATIONARY:
            c = link_covariate(kind, mu)
            rms = float(np.sqrt(np.mean(c * c)))
            out[k] = rms if rms > 1e-8 else 1.0
    return out


class _EtaCoding:
    """Map between free covariance parameters and simplex coordinates."""

    def __init__(self, links: LinkFamily, b_scale):
        self.links = links
        self.free = np.array([True, links.nugget is not LinkKind.STATIONARY,
                              True, links.sill is not LinkKind.STATIONARY,
                              True, links.range is not LinkKind.STATIONARY])
        self.scale = np.ones(6)
        self.scale[1::2] = b_scale

    def encode(self, eta: CovParams) -> np.ndarray:
        return (eta.as_array() * self.scale)[self.free]

    def decode(self, x) -> CovParams:
        v = np.zeros(6)
        v[self.free] = x
        return CovParams.from_array(v / self.scale, self.links)

    @property
    def size(self) -> int:
        return int(self.free.sum())


def fit_onestep(panel: ObservationPanel, sites: SiteSet, Z, stationary: FitResult,
                cfg: FitConfig = FitConfig(), links: LinkFamily = LinkFamily()) -> FitResult:
    """Maximize over the covariance parameters with coefficients held at the
    stationary estimates.

    The first search starts from the stationary ``a`` values with ``b = 0``;
    further searches start from the ``b`` sign patterns of
    :data:`ONESTEP_B_STARTS` and the best result is kept.
    """
    if stationary.method is not FitMethod.STATIONARY:
        raise ValidationError("fit_onestep needs a stationary fit")
    t0 = time.perf_counter()
    mm = stationary.state.mean
    engine = _engine(panel, sites, Z, mm.beta0, mm.Omega)
    if engine.fingerprint != stationary.fingerprint:
        raise ValidationError("stationary fit was computed on different data")
    betas = mm.betas
    coding = _EtaCoding(links, _b_scales(engine, betas, links))
    start = stationary.eta.with_links(links)

    def objective(x):
        if not np.all(np.isfinite(x)):
            return -math.inf
        return engine.total(coding.decode(x), betas)

    x0 = coding.encode(start)
    starts = []
    for pattern in ONESTEP_B_STARTS[: cfg.onestep_starts]:
        v = np.zeros(6)
        v[1::2] = 0.5 * np.array(pattern)
        x = x0 + v[coding.free]
        if not any(np.array_equal(x, y) for y in starts):
            starts.append(x)
    res, evals = None, 0
    for i, x in enumerate(starts):
        try:
            r = maximize(
                objective,
                x,
                cfg.init_step,
                max_evals=cfg.max_evals,
                restarts=cfg.restart_count,
                xatol=cfg.xatol,
                fatol=cfg.fatol,
            )
        except NoImprovement:
            if i == 0:
                raise
            continue
        evals += r.evals
        if res is None or r.value > res.value:
            res = r
    eta = coding.decode(res.x)
    loglik = engine.total(eta, betas, strict=True)
    return FitResult(
        ModelState(mm, eta), loglik, FitMethod.ONESTEP, res.converged, evals,
        time.perf_counter() - t0, engine.fingerprint, (stationary.loglik, loglik),
    )


def fit_full_mle(panel: ObservationPanel, sites: SiteSet, Z, onestep: FitResult,
                 cfg: FitConfig = FitConfig()) -> FitResult:
    """Joint simplex search over covariance parameters and every day's
    coefficients, warm-started at the one-step solution.

    Coefficients are searched in whitened coordinates
    ``beta_t = beta_t_start + C_t u_t`` where ``C_t C_t'`` is the day's GLS
    covariance at the start point, so unit steps are one standard error.
    When the one-step nugget has collapsed to zero a second search starts
    from a lifted nugget, since the two regimes are separate local maxima.
    """
    if onestep.method is not FitMethod.ONESTEP:
        raise ValidationError("fit_full_mle needs a one-step fit")
    t0 = time.perf_counter()
    mm = onestep.state.mean
    engine = _engine(panel, sites, Z, mm.beta0, mm.Omega)
    if engine.fingerprint != onestep.fingerprint:
        raise ValidationError("one-step fit was computed on different data")
    links = onestep.eta.links
    betas0 = np.array(mm.betas)
    _, covs = engine.gls_betas(onestep.eta, betas0, return_cov=True)
    C = np.array([np.linalg.cholesky(c + 1e-12 * np.trace(c) * np.eye(engine.J)) for c in covs])
    coding = _EtaCoding(links, _b_scales(engine, betas0, links))
    k = coding.size
    m, J = betas0.shape

    def unpack(x):
        u = x[k:].reshape(m, J)
        return coding.decode(x[:k]), betas0 + np.einsum("tij,tj->ti", C, u)

    def objective(x):
        if not np.all(np.isfinite(x)):
            return -math.inf
        eta, betas = unpack(x)
        return engine.total(eta, betas)

    starts = [onestep.eta]
    if onestep.eta.a1 < math.log(NUGGET_COLLAPSED) + 2.0 * onestep.eta.a2:
        v = onestep.eta.as_array()
        v[0] = math.log(NUGGET_LIFT) + 2.0 * v[2]
        starts.append(CovParams.from_array(v, links))
    res, evals = None, 0
    for eta_start in starts:
        r = maximize(
            objective,
            np.concatenate([coding.encode(eta_start), np.zeros(m * J)]),
            cfg.init_step,
            max_evals=cfg.fullmle_max_evals or cfg.max_evals,
            restarts=cfg.restart_count,
            xatol=cfg.xatol,
            fatol=cfg.fatol,
        )
        evals += r.evals
        if res is None or r.value > res.value:
            res = r
    eta, betas = unpack(res.x)
    mean = MeanModel(mm.Z, betas, mm.beta0, mm.Omega)
    loglik = engine.total(eta, betas, strict=True)
    return FitResult(
        ModelState(mean, eta), loglik, FitMethod.FULLMLE, res.converged, evals,
        time.perf_counter() - t0, engine.fingerprint, (onestep.loglik, loglik),
    )


def fit_chain(panel, sites, Z, method="onestep", links: LinkFamily = LinkFamily(),
              cfg: FitConfig = FitConfig(), beta0=None, Omega=None) -> dict[FitMethod, FitResult]:
    """Run stationary, then one-step, then full MLE up to ``method``."""
    method = FitMethod(method)
    out = {FitMethod.STATIONARY: fit_stationary(panel, sites, Z, beta0, Omega, cfg)}
    if method is FitMethod.STATIONARY or links.is_stationary:
        return out
    out[FitMethod.ONESTEP] = fit_onestep(panel, sites, Z, out[FitMethod.STATIONARY], cfg, links)
    if method is FitMethod.FULLMLE:
        out[FitMethod.FULLMLE] = fit_full_mle(panel, sites, Z, out[FitMethod.ONESTEP], cfg)
    return out
