"""Command-line interface.

Every command reads an INI config (``--config``), applies flag overrides,
validates the result and writes deterministic CSV/JSON outputs to
``out_dir``. Exit status is 0 on success, 2 for configuration, validation or
I/O errors and 3 for numerical failures; errors are printed to stderr as JSON.
"""
from __future__ import annotations

import argparse
import configparser
import json
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from .covariance import CovParams, LinkFamily, LinkKind
from .errors import ConfigError, MdnsError, NotNested, NumericalError, ValidationError
from .evaluation import COVARIANCE_VARIANTS, crossval, default_model_grid, diagnose_links
from .fitting import FitConfig, FitMethod, FitResult, fit_full_mle, fit_onestep, fit_stationary
from .geometry import (
    KM_PER_DEGREE,
    SiteSet,
    build_design,
    design_rows,
    load_observations,
    read_stations,
    write_observations,
    write_stations,
)
from .likelihood import diffuse_prior
from .nstest import LrtResult, lrt_statistic
from .prediction import krige, write_predictions
from .simulation import (
    DEFAULT_ETA,
    LAT_RANGE,
    LON_RANGE,
    SimConfig,
    run_estimation_mse,
    run_prediction_experiment,
    run_type1_power,
    simulate_replicate,
)

COMMANDS = ("simulate", "fit", "test", "predict", "crossval", "experiment", "diagnose-links")

#: every recognised section and key with its default; the default's type is the key's type
DEFAULTS = {
    "common": {
        "seed": 0,
        "threads": 1,
        "out_dir": ".",
        "distance_scale": KM_PER_DEGREE,
    },
    "data": {
        "stations": "stations.csv",
        "observations": "observations.csv",
        "sqrt_transform": False,
        "predictor_set": "sim3",
        "prior": "diffuse",
    },
    "fit": {
        "method": "onestep",
        "nugget_link": "mdns",
        "sill_link": "mdns",
        "range_link": "mdns",
        "max_outer_iters": 50,
        "rel_ll_tol": 1e-6,
        "max_evals": 2000,
        "restart_count": 2,
        "init_step": 0.25,
        "onestep_starts": 5,
        "fullmle_max_evals": 0,
    },
    "simulate": {
        "n": 100,
        "m": 5,
        "c": 1.0,
        "lon_min": LON_RANGE[0],
        "lon_max": LON_RANGE[1],
        "lat_min": LAT_RANGE[0],
        "lat_max": LAT_RANGE[1],
        "a1": DEFAULT_ETA.a1,
        "b1": DEFAULT_ETA.b1,
        "a2": DEFAULT_ETA.a2,
        "b2": DEFAULT_ETA.b2,
        "a3": DEFAULT_ETA.a3,
        "b3": DEFAULT_ETA.b3,
        "center_coordinates": True,
        "replicate": 0,
    },
    "predict": {
        "model": "model.json",
        "sites": "",
        "grid_nx": 20,
        "grid_ny": 10,
    },
    "crossval": {
        "k": 5,
        "predictor_sets": "linear4,quad7",
        "variants": ";".join(f"{a}/{b}" for a, b in COVARIANCE_VARIANTS),
    },
    "experiment": {
        "kind": "mse",
        "ns": "50,100,200",
        "cs": "1.0",
        "methods": "stationary,onestep,fullmle",
        "replicates": 50,
        "n_test": 100,
        "alpha": 0.05,
    },
}


def _coerce(section, key, raw, default):
    try:
        if isinstance(default, bool):
            low = str(raw).strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            v = float(raw)
            if not math.isfinite(v):
                raise ValueError(raw)
            return v
        return str(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {type(default).__name__}") from None


def load_config(path=None, overrides=None) -> dict:
    """Defaults, then the INI file, then flag overrides; unknown keys are rejected."""
    cfg = {s: dict(v) for s, v in DEFAULTS.items()}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for section in parser.sections():
            if section not in cfg:
                raise ConfigError(f"{path}: unknown section [{section}]")
            for key, raw in parser.items(section):
                if key not in cfg[section]:
                    raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
                cfg[section][key] = _coerce(section, key, raw, DEFAULTS[section][key])
    for (section, key), value in (overrides or {}).items():
        cfg[section][key] = _coerce(section, key, value, DEFAULTS[section][key])
    _validate(cfg)
    return cfg


def _validate(cfg):
    c = cfg["common"]
    if c["seed"] < 0 or c["seed"] >= 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    if c["threads"] < 1:
        raise ConfigError("threads must be at least 1")
    if not c["distance_scale"] > 0:
        raise ConfigError("distance_scale must be positive")
    FitMethod(_choice(cfg["fit"]["method"], [m.value for m in FitMethod], "method"))
    for key in ("nugget_link", "sill_link", "range_link"):
        _choice(cfg["fit"][key], [k.value for k in LinkKind], key)
    _choice(cfg["data"]["prior"], ("diffuse", "empirical"), "prior")
    _choice(cfg["experiment"]["kind"], ("mse", "power", "prediction"), "kind")
    _fit_config(cfg)


def _choice(value, allowed, name):
    if value not in allowed:
        raise ConfigError(f"{name} must be one of {', '.join(allowed)}; got {value!r}")
    return value


def _fit_config(cfg) -> FitConfig:
    f = cfg["fit"]
    try:
        return FitConfig(
            max_outer_iters=f["max_outer_iters"], rel_ll_tol=f["rel_ll_tol"], max_evals=f["max_evals"],
            restart_count=f["restart_count"], init_step=f["init_step"], onestep_starts=f["onestep_starts"],
            fullmle_max_evals=f["fullmle_max_evals"] or None, seed=cfg["common"]["seed"],
        )
    except ValidationError as exc:
        raise ConfigError(f"[fit] {exc}") from None


def _links(cfg) -> LinkFamily:
    f = cfg["fit"]
    return LinkFamily(LinkKind(f["nugget_link"]), LinkKind(f["sill_link"]), LinkKind(f["range_link"]))


def _sim_config(cfg, n=None, c=None, replicates=1, n_test=0) -> SimConfig:
    s = cfg["simulate"]
    eta = CovParams(s["a1"], s["b1"], s["a2"], s["b2"], s["a3"], s["b3"])
    try:
        return SimConfig(
            n=s["n"] if n is None else n, m=s["m"], replicates=replicates,
            lon_range=(s["lon_min"], s["lon_max"]), lat_range=(s["lat_min"], s["lat_max"]),
            eta_true=eta, c=s["c"] if c is None else c, n_test=n_test, seed=cfg["common"]["seed"],
            distance_scale=cfg["common"]["distance_scale"], center_coordinates=s["center_coordinates"],
        )
    except ValidationError as exc:
        raise ConfigError(f"[simulate] {exc}") from None


# -- output helpers -------------------------------------------------------------


def _out(cfg, name) -> Path:
    d = Path(cfg["common"]["out_dir"])
    d.mkdir(parents=True, exist_ok=True)
    return d / name


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else str(v)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    return x


#: execution settings left out of the echoed config; they never change results
_RUNTIME_KEYS = ("threads", "out_dir")


def _write_json(path, payload, cfg) -> None:
    common = {k: v for k, v in cfg["common"].items() if k not in _RUNTIME_KEYS}
    doc = {"config": {**cfg, "common": common}}
    doc.update(payload)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(doc), fh, indent=2)
        fh.write("\n")


def _eta_json(eta: CovParams) -> dict:
    return {
        "a1": eta.a1, "b1": eta.b1, "a2": eta.a2, "b2": eta.b2, "a3": eta.a3, "b3": eta.b3,
        "links": {"nugget": eta.links.nugget.value, "sill": eta.links.sill.value, "range": eta.links.range.value},
    }


def _eta_from_json(d) -> CovParams:
    links = LinkFamily(LinkKind(d["links"]["nugget"]), LinkKind(d["links"]["sill"]), LinkKind(d["links"]["range"]))
    return CovParams(d["a1"], d["b1"], d["a2"], d["b2"], d["a3"], d["b3"], links)


def _fit_json(fit: FitResult) -> dict:
    return {
        "method": fit.method.value, "loglik": fit.loglik, "converged": fit.converged, "evals": fit.evals,
        "eta": _eta_json(fit.eta),
    }


# -- data -------------------------------------------------------------------------


def _load_data(cfg):
    d = cfg["data"]
    sites, panel = load_observations(d["stations"], d["observations"], d["sqrt_transform"],
                                     cfg["common"]["distance_scale"])
    Z = build_design(sites, d["predictor_set"])
    if d["prior"] == "empirical":
        from .evaluation import empirical_prior

        beta0, Omega = empirical_prior(panel, Z)
    else:
        beta0, Omega = diffuse_prior(Z.J)
    return sites, panel, Z, beta0, Omega


def _fit_chain(cfg, sites, panel, Z, beta0, Omega, method):
    fc = _fit_config(cfg)
    chain = [fit_stationary(panel, sites, Z, beta0, Omega, fc)]
    if method is not FitMethod.STATIONARY:
        chain.append(fit_onestep(panel, sites, Z, chain[0], fc, _links(cfg)))
    if method is FitMethod.FULLMLE:
        chain.append(fit_full_mle(panel, sites, Z, chain[1], fc))
    return chain


# -- commands ---------------------------------------------------------------------


def cmd_simulate(cfg) -> dict:
    """Write one simulated data set: stations, observations and the truth."""
    sc = _sim_config(cfg)
    rep = simulate_replicate(sc, cfg["simulate"]["replicate"])
    ids = tuple(f"S{i + 1:04d}" for i in range(rep.sites.n))
    sites = SiteSet(rep.sites.lon, rep.sites.lat, None, ids, rep.sites.distance_scale)
    write_stations(_out(cfg, "stations.csv"), sites)
    write_observations(_out(cfg, "observations.csv"), sites, rep.panel)
    _write_json(_out(cfg, "truth.json"), {"eta": _eta_json(rep.eta), "betas": rep.betas,
                                          "design_origin": sc.origin, "seed": cfg["common"]["seed"]}, cfg)
    return {"outputs": ["stations.csv", "observations.csv", "truth.json"]}


def cmd_fit(cfg) -> dict:
    """Fit the stationary model and, per ``method``, the nonstationary ones."""
    sites, panel, Z, beta0, Omega = _load_data(cfg)
    method = FitMethod(cfg["fit"]["method"])
    chain = _fit_chain(cfg, sites, panel, Z, beta0, Omega, method)
    final = chain[-1]
    _write_json(_out(cfg, "model.json"), {
        "method": method.value,
        "predictor_set": Z.predictor_set.value,
        "eta": _eta_json(final.eta),
        "betas": final.betas,
        "beta0": final.state.mean.beta0,
        "Omega": final.state.mean.Omega,
        "day_labels": panel.day_labels,
        "loglik": final.loglik,
        "chain": [_fit_json(f) for f in chain],
        "fingerprint": final.fingerprint,
    }, cfg)
    return {"outputs": ["model.json"], "loglik": final.loglik}


def cmd_test(cfg) -> dict:
    """Likelihood-ratio test of the stationary fit against ``method``."""
    sites, panel, Z, beta0, Omega = _load_data(cfg)
    method = FitMethod(cfg["fit"]["method"])
    if method is FitMethod.STATIONARY:
        raise ConfigError("the test needs method onestep or fullmle")
    df = sum(_links(cfg).free_b())
    if df == 0:
        raise ConfigError("the test needs at least one nonstationary link")
    chain = _fit_chain(cfg, sites, panel, Z, beta0, Omega, method)
    stat = lrt_statistic(chain[0], chain[-1])
    res = LrtResult.from_statistic(stat, df, method=method.value, loglik_null=chain[0].loglik,
                                   loglik_alt=chain[-1].loglik)
    _write_json(_out(cfg, "test.json"), {
        "statistic": res.statistic, "df": res.df, "p_value": res.p_value,
        "reject_at": {str(k): v for k, v in res.reject_at.items()},
        "method": res.method, "loglik_null": res.loglik_null, "loglik_alt": res.loglik_alt,
    }, cfg)
    return {"outputs": ["test.json"], "statistic": res.statistic, "p_value": res.p_value}


def _prediction_sites(cfg, sites: SiteSet, predictor_set) -> SiteSet:
    p = cfg["predict"]
    scale = cfg["common"]["distance_scale"]
    if p["sites"]:
        return read_stations(p["sites"], scale)
    if predictor_set != "sim3":
        raise ConfigError("grid prediction needs elevation; set [predict] sites to a stations file")
    if p["grid_nx"] < 1 or p["grid_ny"] < 1:
        raise ConfigError("grid_nx and grid_ny must be positive")
    gx = np.linspace(sites.lon.min(), sites.lon.max(), p["grid_nx"])
    gy = np.linspace(sites.lat.min(), sites.lat.max(), p["grid_ny"])
    lon, lat = np.meshgrid(gx, gy)
    return SiteSet(lon.ravel(), lat.ravel(), distance_scale=scale)


def cmd_predict(cfg) -> dict:
    """Krige every day of the training data to the prediction sites."""
    sites, panel, Z, _, _ = _load_data(cfg)
    try:
        with open(cfg["predict"]["model"], encoding="utf-8") as fh:
            model = json.load(fh)
        eta = _eta_from_json(model["eta"])
        betas = np.asarray(model["betas"], dtype=float)
        labels = tuple(model["day_labels"])
        pset = model["predictor_set"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{cfg['predict']['model']}: malformed model file ({exc})") from None
    if labels != panel.day_labels or pset != Z.predictor_set.value:
        raise ValidationError("model was fitted to different days or a different predictor set")
    psites = _prediction_sites(cfg, sites, pset)
    Zp = design_rows(psites.lon, psites.lat, psites.elev, pset)
    dists = []
    for t in range(panel.m):
        idx, y = panel.day(t)
        dists.append(krige(sites.subset(idx), y, psites, Z.Z[idx], Zp, betas[t], eta))
    write_predictions(_out(cfg, "predictions.csv"), psites, panel.day_labels, dists)
    return {"outputs": ["predictions.csv"]}


def _parse_variants(text):
    out = []
    for item in filter(None, (s.strip() for s in text.split(";"))):
        try:
            a, b = item.split("/")
            out.append((LinkKind(a.strip()).value, LinkKind(b.strip()).value))
        except ValueError:
            raise ConfigError(f"[crossval] bad variant {item!r}; use nugget_sill/range") from None
    return out


def cmd_crossval(cfg) -> dict:
    """Cross-validate the model grid and write ``cv_report.csv``."""
    sites, panel, _, _, _ = _load_data(cfg)
    c = cfg["crossval"]
    psets = [p.strip() for p in c["predictor_sets"].split(",") if p.strip()]
    grid = default_model_grid(psets, _parse_variants(c["variants"]))
    rep = crossval(panel, sites, grid, c["k"], _fit_config(cfg), cfg["common"]["seed"], cfg["common"]["threads"])
    rep.to_csv(_out(cfg, "cv_report.csv"))
    _write_json(_out(cfg, "cv_report.json"), {"meta": rep.meta}, cfg)
    return {"outputs": ["cv_report.csv", "cv_report.json"]}


def _int_list(text, what):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"[experiment] {what} must be comma-separated integers") from None


def _float_list(text, what):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"[experiment] {what} must be comma-separated numbers") from None


def cmd_experiment(cfg) -> dict:
    """Run one Monte Carlo harness over the configured grid."""
    e = cfg["experiment"]
    fc = _fit_config(cfg)
    threads = cfg["common"]["threads"]
    methods = [FitMethod(_choice(m.strip(), [x.value for x in FitMethod], "methods")).value
               for m in e["methods"].split(",") if m.strip()]
    ns, cs = _int_list(e["ns"], "ns"), _float_list(e["cs"], "cs")
    cells = [_sim_config(cfg, n, c, e["replicates"], e["n_test"]) for n in ns for c in cs]
    if e["kind"] == "power":
        method = FitMethod(cfg["fit"]["method"])
        if method is FitMethod.STATIONARY:
            raise ConfigError("the power experiment needs method onestep or fullmle")
        tables = [run_type1_power(cells, method, e["alpha"], fc, threads)]
    elif e["kind"] == "mse":
        tables = [run_estimation_mse(sc, methods, fc, threads) for sc in cells]
    else:
        tables = [run_prediction_experiment(sc, methods, fc, threads) for sc in cells]
    first = tables[0]
    first.rows = [r for t in tables for r in t.rows]
    name = f"experiment_{e['kind']}"
    first.to_csv(_out(cfg, name + ".csv"))
    _write_json(_out(cfg, name + ".json"), {"meta": [t.meta for t in tables]}, cfg)
    return {"outputs": [name + ".csv", name + ".json"]}


def cmd_diagnose_links(cfg) -> dict:
    """Per-day stationary fits for choosing link functions."""
    sites, panel, Z, _, _ = _load_data(cfg)
    diag = diagnose_links(panel, sites, _fit_config(cfg), Z.predictor_set)
    diag.to_csv(_out(cfg, "diagnostics.csv"))
    diag.fits_to_csv(_out(cfg, "diagnostics_fits.csv"))
    _write_json(_out(cfg, "diagnostics.json"), {"skipped_days": diag.skipped}, cfg)
    return {"outputs": ["diagnostics.csv", "diagnostics_fits.csv", "diagnostics.json"]}


HANDLERS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "test": cmd_test,
    "predict": cmd_predict,
    "crossval": cmd_crossval,
    "experiment": cmd_experiment,
    "diagnose-links": cmd_diagnose_links,
}


# -- entry point ------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _report("UsageError", message)
        sys.exit(2)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mdns", description="Mean-dependent nonstationary spatial models.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="INI file with per-command sections")
    p.add_argument("--seed", type=int, help="override [common] seed")
    p.add_argument("--threads", type=int, help="override [common] threads")
    p.add_argument("--method", choices=[m.value for m in FitMethod], help="override [fit] method")
    p.add_argument("--sqrt-transform", action="store_true", default=None, help="square-root the responses")
    p.add_argument("--c", type=float, help="override [simulate] c (nonstationarity multiplier)")
    p.add_argument("--out-dir", help="override [common] out_dir")
    p.add_argument("--replicates", type=int, help="override [experiment] replicates (200 for paper scale)")
    return p


def _overrides(args) -> dict:
    out = {}
    for flag, key in (("seed", ("common", "seed")), ("threads", ("common", "threads")),
                      ("method", ("fit", "method")), ("sqrt_transform", ("data", "sqrt_transform")),
                      ("c", ("simulate", "c")), ("out_dir", ("common", "out_dir")),
                      ("replicates", ("experiment", "replicates"))):
        v = getattr(args, flag)
        if v is not None:
            out[key] = v
    return out


def _report(kind, message, **extra):
    doc = {"error": kind, "message": str(message)}
    doc.update(extra)
    sys.stderr.write(json.dumps(doc) + "\n")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, _overrides(args))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            result = HANDLERS[args.command](cfg)
    except (ValidationError, OSError) as exc:
        _report(type(exc).__name__, exc, **_context(exc))
        return 2
    except (NumericalError, NotNested) as exc:
        _report(type(exc).__name__, exc, **_context(exc))
        return 3
    except MdnsError as exc:
        _report(type(exc).__name__, exc, **_context(exc))
        return 3
    sys.stdout.write(json.dumps(_jsonable({"command": args.command, **result})) + "\n")
    return 0


def _context(exc) -> dict:
    return {k: getattr(exc, k) for k in ("day", "fold", "line", "path") if getattr(exc, k, None) is not None}


if __name__ == "__main__":
    sys.exit(main())
