"""Kriging predictive distributions and prediction-quality metrics."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import ndtri

from .covariance import CovParams, cholesky_jitter, covariance_matrix, cross_covariance
from .errors import MdnsWarning, ValidationError
from .geometry import SiteSet
from .likelihood import mvn_logpdf

#: eigenvalues of the conditional covariance below ``-EIG_FLOOR * scale`` are reported
EIG_FLOOR = 1e-10

PREDICTION_HEADER = ("lon", "lat", "day", "pred_mean", "pred_se", "pred_mean_thresholded")


@dataclass(frozen=True, eq=False)
class PredictiveDist:
    """Gaussian law of the responses at ``q`` prediction sites."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.asarray(self.cov, dtype=float)
        if cov.shape != (mean.size, mean.size):
            raise ValidationError("cov must be q x q")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", 0.5 * (cov + cov.T))

    @property
    def q(self) -> int:
        return self.mean.size

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))


def _floor_eigen(cov):
    """Clip tiny negative eigenvalues left by cancellation in the Schur complement."""
    if cov.size == 0:
        return cov
    w, V = np.linalg.eigh(cov)
    scale = max(float(np.max(np.abs(w))), 1e-300)
    if w.min() >= 0:
        return cov
    if w.min() < -EIG_FLOOR * scale:
        warnings.warn(
            f"conditional covariance has eigenvalue {w.min():.3g}; floored to 0", MdnsWarning, stacklevel=3
        )
    w = np.clip(w, 0.0, None)
    out = (V * w) @ V.T
    return 0.5 * (out + out.T)


def krige(train_sites: SiteSet, y_train, pred_sites: SiteSet, Z_train, Z_pred, beta,
          eta: CovParams) -> PredictiveDist:
    """Condition the joint Gaussian on the training responses.

    Means at both site sets are ``Z beta``; they also drive the link
    functions. The nugget enters the diagonal blocks only.
    """
    Z1 = np.asarray(getattr(Z_train, "Z", Z_train), dtype=float)
    Z0 = np.asarray(getattr(Z_pred, "Z", Z_pred), dtype=float)
    beta = np.asarray(beta, dtype=float).reshape(-1)
    y1 = np.asarray(y_train, dtype=float).reshape(-1)
    if Z1.shape != (train_sites.n, beta.size) or Z0.shape != (pred_sites.n, beta.size):
        raise ValidationError("design shapes do not match sites and beta")
    if y1.size != train_sites.n:
        raise ValidationError("y_train length must equal the number of training sites")
    mu1, mu0 = Z1 @ beta, Z0 @ beta
    S11 = covariance_matrix(train_sites, mu1, eta)
    S00 = covariance_matrix(pred_sites, mu0, eta)
    S01 = cross_covariance(pred_sites, mu0, train_sites, mu1, eta)
    L, _ = cholesky_jitter(S11)
    A = solve_triangular(L, S01.T, lower=True)
    r = solve_triangular(L, y1 - mu1, lower=True)
    mean = mu0 + A.T @ r
    cov = S00 - A.T @ A
    return PredictiveDist(mean, _floor_eigen(0.5 * (cov + cov.T)))


def threshold_nonnegative(dist: PredictiveDist) -> np.ndarray:
    """Point predictions with negative means replaced by zero."""
    return np.maximum(dist.mean, 0.0)


def _check_y(dist, y_test):
    y = np.asarray(y_test, dtype=float).reshape(-1)
    if y.size != dist.q:
        raise ValidationError(f"expected {dist.q} test values, got {y.size}")
    return y


def prediction_score(dist: PredictiveDist, y_test) -> float:
    """Joint Gaussian log-density of ``y_test``."""
    return mvn_logpdf(_check_y(dist, y_test), dist.mean, dist.cov)


def prediction_deviance(dist: PredictiveDist, y_test) -> float:
    """``-2`` times :func:`prediction_score`."""
    return -2.0 * prediction_score(dist, y_test)


def prediction_mse(dist: PredictiveDist, y_test) -> float:
    y = _check_y(dist, y_test)
    return float(np.mean((y - dist.mean) ** 2))


def normal_quantile(p: float) -> float:
    """Standard normal quantile."""
    if not 0 < p < 1:
        raise ValidationError("p must be in (0, 1)")
    return float(ndtri(p))


def interval_coverage(dist: PredictiveDist, y_test, level: float = 0.95) -> float:
    """Fraction of sites inside the central ``level`` prediction interval."""
    if not 0 < level < 1:
        raise ValidationError("level must be in (0, 1)")
    y = _check_y(dist, y_test)
    if y.size == 0:
        return float("nan")
    z = normal_quantile(0.5 + 0.5 * level)
    return float(np.mean(np.abs(y - dist.mean) <= z * dist.se))


def se_quantiles(dist_or_se) -> tuple[float, float, float]:
    """5%, 50% and 95% quantiles of the standard errors (linear interpolation)."""
    se = dist_or_se.se if isinstance(dist_or_se, PredictiveDist) else np.asarray(dist_or_se, dtype=float)
    if se.size < 1:
        raise ValidationError("need at least one standard error")
    q05, q50, q95 = np.quantile(se, [0.05, 0.5, 0.95])
    return float(q05), float(q50), float(q95)


def write_predictions(path, sites: SiteSet, day_labels, dists) -> None:
    """One row per (day, site) under :data:`PREDICTION_HEADER`."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTION_HEADER)
        for label, dist in zip(day_labels, dists):
            thr = threshold_nonnegative(dist)
            for i in range(sites.n):
                w.writerow([repr(float(sites.lon[i])), repr(float(sites.lat[i])), label,
                            repr(float(dist.mean[i])), repr(float(dist.se[i])), repr(float(thr[i]))])
