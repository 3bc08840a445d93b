"""Likelihood-ratio test of stationarity (``b1 = b2 = b3 = 0``)."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import gammaincc

from .covariance import LinkFamily
from .errors import MdnsWarning, NotNested, ValidationError
from .fitting import FitConfig, FitMethod, FitResult, fit_full_mle, fit_onestep, fit_stationary

ALPHAS = (0.10, 0.05, 0.01)
#: negative statistics down to this are optimizer noise and floored to zero
NEGATIVE_SLACK = 1e-9


def chi_square_upper_tail(x: float, df: int) -> float:
    """``P(X > x)`` for ``X ~ chi^2_df``: the regularized upper incomplete gamma
    ``Q(df/2, x/2)``."""
    if df < 1:
        raise ValidationError("df must be at least 1")
    if x < 0 or math.isnan(x):
        raise ValidationError("x must be non-negative")
    if x == 0:
        return 1.0
    return float(gammaincc(0.5 * df, 0.5 * x))


def chi_square_critical(alpha: float, df: int) -> float:
    """Upper-``alpha`` critical value, found by root-finding on the survival function."""
    if not 0 < alpha < 1:
        raise ValidationError("alpha must be in (0, 1)")
    hi = 1.0
    while chi_square_upper_tail(hi, df) > alpha:
        hi *= 2.0
    return brentq(lambda x: chi_square_upper_tail(x, df) - alpha, 0.0, hi, xtol=1e-12, rtol=1e-14)


@dataclass(frozen=True)
class LrtResult:
    statistic: float
    df: int
    p_value: float
    reject_at: dict = field(default_factory=dict)
    method: str = ""
    loglik_null: float = math.nan
    loglik_alt: float = math.nan

    @classmethod
    def from_statistic(cls, statistic, df=3, alphas=ALPHAS, **kw) -> "LrtResult":
        p = chi_square_upper_tail(statistic, df)
        return cls(statistic, df, p, {a: p < a for a in alphas}, **kw)


def lrt_statistic(fit_null: FitResult, fit_alt: FitResult) -> float:
    """``2 (loglik_alt - loglik_null)`` for nested fits on the same data.

    Small negative values (>= -1e-9) are floored to 0 with a warning; larger
    negatives mean the null fit failed and raise :class:`NotNested`.
    """
    if fit_null.fingerprint != fit_alt.fingerprint:
        raise NotNested("fits were computed on different data or designs")
    if fit_null.state.mean.Z.J != fit_alt.state.mean.Z.J:
        raise NotNested("fits use different designs")
    stat = 2.0 * (fit_alt.loglik - fit_null.loglik)
    if stat < 0:
        if stat < -NEGATIVE_SLACK:
            raise NotNested(f"alternative log-likelihood is below the null by {-stat / 2:.3g}")
        warnings.warn(f"negative LR statistic {stat:.3g} floored to 0", MdnsWarning, stacklevel=2)
        stat = 0.0
    return stat


def test_nonstationarity(panel, sites, Z, cfg: FitConfig = FitConfig(), method="onestep",
                         links: LinkFamily = LinkFamily(), beta0=None, Omega=None,
                         null: FitResult | None = None) -> LrtResult:
    """Fit the stationary null and a nonstationary alternative and compare.

    ``method`` is ``"onestep"`` (coefficients shared with the null) or
    ``"fullmle"`` (coefficients re-estimated jointly). The degrees of freedom
    equal the number of freed ``b`` entries (3 for the standard test).
    """
    method = FitMethod(method)
    if method is FitMethod.STATIONARY:
        raise ValidationError("the alternative must be onestep or fullmle")
    df = sum(links.free_b())
    if df == 0:
        raise ValidationError("the alternative must free at least one b parameter")
    if null is None:
        null = fit_stationary(panel, sites, Z, beta0, Omega, cfg)
    alt = fit_onestep(panel, sites, Z, null, cfg, links)
    if method is FitMethod.FULLMLE:
        alt = fit_full_mle(panel, sites, Z, alt, cfg)
    else:
        assert np.array_equal(alt.betas, null.betas)
    stat = lrt_statistic(null, alt)
    return LrtResult.from_statistic(
        stat, df, method=method.value, loglik_null=null.loglik, loglik_alt=alt.loglik
    )


# keep pytest from collecting the public function above as a test
test_nonstationarity.__test__ = False
