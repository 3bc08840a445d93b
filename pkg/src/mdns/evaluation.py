"""Cross-validation over a grid of model variants and per-day link diagnostics."""
from __future__ import annotations

import csv
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import astuple, dataclass, field, fields

import numpy as np

from .covariance import CovParams, LinkFamily, LinkKind, link_covariate
from .errors import DayTooSmall, MdnsError, MdnsWarning, ValidationError
from .fitting import FitConfig, fit_onestep, fit_stationary
from .geometry import ObservationPanel, PredictorSet, SiteSet, build_design, split_folds
from .likelihood import diffuse_prior
from .prediction import interval_coverage, krige, prediction_score

#: ridge added to the empirical coefficient covariance, relative to trace / J
OMEGA_RIDGE = 1e-6


@dataclass(frozen=True)
class ModelSpec:
    """One cell of the model grid: mean design and covariance links."""

    predictor_set: PredictorSet
    nugget_sill_link: LinkKind
    range_link: LinkKind

    def __post_init__(self):
        object.__setattr__(self, "predictor_set", PredictorSet(self.predictor_set))
        object.__setattr__(self, "nugget_sill_link", LinkKind(self.nugget_sill_link))
        object.__setattr__(self, "range_link", LinkKind(self.range_link))

    @property
    def links(self) -> LinkFamily:
        return LinkFamily(self.nugget_sill_link, self.nugget_sill_link, self.range_link)

    @property
    def is_stationary(self) -> bool:
        return self.links.is_stationary


#: covariance variants as (nugget/sill link, range link)
COVARIANCE_VARIANTS = (
    ("stationary", "stationary"),
    ("mdns", "stationary"),
    ("mdns", "mdns"),
    ("lmdns", "stationary"),
    ("lmdns", "mdns"),
)
PREDICTOR_SETS = ("linear4", "quad7")


def default_model_grid(predictor_sets=PREDICTOR_SETS, variants=COVARIANCE_VARIANTS) -> list[ModelSpec]:
    """Every covariance variant crossed with every predictor set."""
    return [ModelSpec(p, ns, r) for p in predictor_sets for ns, r in variants]


@dataclass(frozen=True)
class CvRow:
    predictor_set: str
    nugget_sill_link: str
    range_link: str
    score: float
    mse: float
    coverage95: float
    se_q05: float
    se_q50: float
    se_q95: float
    loglik: float
    lrt_vs_stationary: float


@dataclass
class CvReport:
    rows: list[CvRow] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @staticmethod
    def columns() -> tuple[str, ...]:
        return tuple(f.name for f in fields(CvRow))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns())
            for r in self.rows:
                w.writerow([repr(float(v)) if isinstance(v, float) else v for v in astuple(r)])


def empirical_prior(panel: ObservationPanel, Z: np.ndarray, ridge: float = OMEGA_RIDGE):
    """Mean and ridge-regularized covariance of per-day least-squares coefficients.

    Days with no more observed sites than coefficients are skipped. With
    fewer than two usable days the diffuse prior is returned.
    """
    Z = np.asarray(getattr(Z, "Z", Z), dtype=float)
    J = Z.shape[1]
    est = []
    for t in range(panel.m):
        idx, y = panel.day(t)
        if idx.size > J:
            coef, *_ = np.linalg.lstsq(Z[idx], y, rcond=None)
            est.append(coef)
    if len(est) < 2:
        return diffuse_prior(J)
    B = np.array(est)
    beta0 = B.mean(axis=0)
    Omega = np.atleast_2d(np.cov(B, rowvar=False))
    tr = float(np.trace(Omega))
    Omega = Omega + ridge * (tr / J if tr > 0 else 1.0) * np.eye(J)
    return beta0, Omega


def _fit_models(panel, sites, specs, cfg):
    """Fit every spec on one data set, sharing stationary fits per predictor set."""
    out = {}
    for pset in dict.fromkeys(s.predictor_set for s in specs):
        Z = build_design(sites, pset)
        beta0, Omega = empirical_prior(panel, Z)
        st = fit_stationary(panel, sites, Z, beta0, Omega, cfg)
        for s in specs:
            if s.predictor_set is pset:
                out[s] = (Z, st, st if s.is_stationary else fit_onestep(panel, sites, Z, st, cfg, s.links))
    return out


def _fold_task(args):
    panel, sites, specs, cfg, f, test = args
    try:
        train = np.setdiff1d(np.arange(sites.n), test)
        tr_sites, te_sites = sites.subset(train), sites.subset(test)
        tr_panel = panel.subset_sites(train)
        fits = _fit_models(tr_panel, tr_sites, specs, cfg)
        day_of = {lab: t for t, lab in enumerate(tr_panel.day_labels)}
        res = {}
        for s in specs:
            _, _, fit = fits[s]
            Z_test = build_design(te_sites, s.predictor_set).Z
            scores, sq, cover, ses = [], [], [], []
            for u, lab in enumerate(panel.day_labels):
                obs = panel.observed[test, u]
                if lab not in day_of or not obs.any():
                    continue
                t = day_of[lab]
                idx, y = tr_panel.day(t)
                keep = np.flatnonzero(obs)
                y_test = panel.values[test[keep], u]
                dist = krige(tr_sites.subset(idx), y, te_sites.subset(keep), fit.state.mean.Z.Z[idx],
                             Z_test[keep], fit.betas[t], fit.eta)
                scores.append(prediction_score(dist, y_test))
                sq.append((y_test - dist.mean) ** 2)
                cover.append(interval_coverage(dist, y_test) * keep.size)
                ses.append(dist.se)
            if not scores:
                raise ValidationError("no test observations in this fold")
            se = np.concatenate(ses)
            q = np.quantile(se, [0.05, 0.5, 0.95])
            res[s] = (float(np.mean(scores)), float(np.mean(np.concatenate(sq))),
                      float(np.sum(cover) / se.size), *map(float, q))
        return res
    except MdnsError as exc:
        exc.fold = f
        if exc.args:
            exc.args = (f"fold {f}: {exc.args[0]}",) + exc.args[1:]
        raise


def crossval(panel: ObservationPanel, sites: SiteSet, model_grid=None, k: int = 5,
             cfg: FitConfig = FitConfig(), seed: int = 0, threads: int = 1) -> CvReport:
    """``k``-fold cross-validation over sites for every model in the grid.

    Each fold fits on the remaining sites with an empirical coefficient prior,
    kriges every day to the held-out sites and records the mean per-day joint
    log score, MSE, 95% coverage and standard-error quantiles. Fold metrics
    are averaged. ``loglik`` and ``lrt_vs_stationary`` come from fits to the
    full data; nonstationary models use the one-step fit.
    """
    specs = list(default_model_grid() if model_grid is None else model_grid)
    if not specs:
        raise ValidationError("model grid is empty")
    specs = [s if isinstance(s, ModelSpec) else ModelSpec(*s) for s in specs]
    folds = split_folds(sites, k, seed)
    tasks = [(panel, sites, specs, cfg, f, test) for f, test in enumerate(folds)]
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(threads, len(tasks))) as ex:
            per_fold = list(ex.map(_fold_task, tasks))
    else:
        per_fold = [_fold_task(t) for t in tasks]
    full = _fit_models(panel, sites, specs, cfg)
    report = CvReport(meta={"k": k, "seed": seed, "folds": [f.tolist() for f in folds],
                            "score": "per-day joint log density, averaged over days and folds"})
    for s in specs:
        metrics = np.mean([pf[s] for pf in per_fold], axis=0)
        _, st, fit = full[s]
        lrt = max(0.0, 2.0 * (fit.loglik - st.loglik))
        report.rows.append(CvRow(s.predictor_set.value, s.nugget_sill_link.value, s.range_link.value,
                                 *map(float, metrics), float(fit.loglik), lrt))
    return report


DIAGNOSTIC_COLUMNS = ("day", "mean", "log1p_mean", "log_nugget", "log_sill", "log_range")


@dataclass
class LinkDiagnostics:
    """Per-day stationary estimates and least-squares lines through them."""

    rows: list[tuple] = field(default_factory=list)
    fits: dict = field(default_factory=dict)
    skipped: list[str] = field(default_factory=list)

    def column(self, name):
        j = DIAGNOSTIC_COLUMNS.index(name)
        return np.array([r[j] for r in self.rows], dtype=float)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(DIAGNOSTIC_COLUMNS)
            for r in self.rows:
                w.writerow([r[0]] + [repr(float(v)) for v in r[1:]])

    def fits_to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("x", "y", "intercept", "slope"))
            for (x, y), (c0, c1) in self.fits.items():
                w.writerow((x, y, repr(c0), repr(c1)))


#: fewest observed sites for a single-day stationary fit
MIN_DAY_SITES = 4


def _ols_line(x, y):
    if x.size < 2 or np.ptp(x) == 0:
        return math.nan, math.nan
    slope, intercept = np.polyfit(x, y, 1)
    return float(intercept), float(slope)


def diagnose_links(panel: ObservationPanel, sites: SiteSet, cfg: FitConfig = FitConfig(),
                   predictor_set=PredictorSet.SIM3) -> LinkDiagnostics:
    """Fit a stationary exponential model to each day separately.

    Reports, per retained day, the average response, ``log(1 + average)``
    (average floored at 0) and the logs of nugget ``tau^2``, sill
    ``sigma^2`` and range ``sqrt(rho)``, with OLS lines of each log
    parameter against both mean columns.
    """
    out = LinkDiagnostics()
    for t in range(panel.m):
        label = panel.day_labels[t]
        idx, y = panel.day(t)
        try:
            if idx.size < MIN_DAY_SITES:
                raise DayTooSmall(f"day {label}: {idx.size} observed sites, need {MIN_DAY_SITES}")
            day_sites = sites.subset(idx)
            Z = build_design(day_sites, predictor_set)
            day_panel = ObservationPanel(y[:, None], day_labels=(label,))
            fit = fit_stationary(day_panel, day_sites, Z, cfg=cfg)
        except DayTooSmall as exc:
            warnings.warn(str(exc), MdnsWarning, stacklevel=2)
            out.skipped.append(label)
            continue
        eta: CovParams = fit.eta
        mean = float(np.mean(y))
        out.rows.append((label, mean, float(link_covariate(LinkKind.LMDNS, np.array([mean]))[0]),
                         eta.a1, 2.0 * eta.a2, 0.5 * eta.a3))
    for x in ("mean", "log1p_mean"):
        for ycol in ("log_nugget", "log_sill", "log_range"):
            out.fits[(x, ycol)] = _ols_line(out.column(x), out.column(ycol)) if out.rows else (math.nan, math.nan)
    return out
