"""Sites, distances, design matrices, station CSV ingestion and fold splits.

Coordinates are (lon, lat) in degrees and distances are planar Euclidean in
those raw degrees. Elevation is optional and only needed by the linear and
quadratic predictor sets.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import numpy as np

from .errors import (
    DuplicateSite,
    KTooLarge,
    MissingElevation,
    NegativeValueUnderSqrt,
    ParseError,
    RankDeficient,
    UnknownStationId,
    ValidationError,
)

STATION_HEADER = ("station_id", "lon", "lat", "elev")
OBSERVATION_HEADER = ("station_id", "day", "value")
#: mean great-circle length of one degree on a 6371 km sphere
KM_PER_DEGREE = 6371.0 * math.pi / 180.0


@dataclass(frozen=True, eq=False)
class SiteSet:
    """Spatial locations with optional elevation (NaN where absent).

    ``distance_scale`` converts coordinate degrees to the distance unit used
    by the covariance (1.0 keeps degrees, :data:`KM_PER_DEGREE` gives km).
    """

    lon: np.ndarray
    lat: np.ndarray
    elev: np.ndarray | None = None
    ids: tuple[str, ...] | None = None
    distance_scale: float = 1.0

    def __post_init__(self):
        lon = np.array(self.lon, dtype=float).reshape(-1)
        lat = np.array(self.lat, dtype=float).reshape(-1)
        if lon.shape != lat.shape:
            raise ValidationError("lon and lat must have the same length")
        if lon.size < 1:
            raise ValidationError("a SiteSet needs at least one site")
        if not (np.all(np.isfinite(lon)) and np.all(np.isfinite(lat))):
            raise ValidationError("site coordinates must be finite")
        elev = None
        if self.elev is not None:
            elev = np.array(self.elev, dtype=float).reshape(-1)
            if elev.shape != lon.shape:
                raise ValidationError("elev must have one entry per site")
            if np.any(np.isinf(elev)):
                raise ValidationError("elevations must be finite or absent")
        ids = None
        if self.ids is not None:
            ids = tuple(str(i) for i in self.ids)
            if len(ids) != lon.size:
                raise ValidationError("ids must have one entry per site")
        scale = float(self.distance_scale)
        if not (math.isfinite(scale) and scale > 0):
            raise ValidationError("distance_scale must be positive")
        object.__setattr__(self, "distance_scale", scale)
        coords = np.column_stack([lon, lat])
        uniq = np.unique(coords, axis=0)
        if uniq.shape[0] != coords.shape[0]:
            raise DuplicateSite("two or more sites share identical (lon, lat)")
        for arr in (lon, lat, elev):
            if arr is not None:
                arr.setflags(write=False)
        object.__setattr__(self, "lon", lon)
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "elev", elev)
        object.__setattr__(self, "ids", ids)

    @property
    def n(self) -> int:
        return self.lon.size

    def __len__(self):
        return self.n

    @property
    def coords(self) -> np.ndarray:
        return np.column_stack([self.lon, self.lat])

    @property
    def has_elevation(self) -> bool:
        return self.elev is not None and bool(np.all(np.isfinite(self.elev)))

    def subset(self, idx) -> "SiteSet":
        idx = np.asarray(idx, dtype=int)
        return SiteSet(
            self.lon[idx],
            self.lat[idx],
            None if self.elev is None else self.elev[idx],
            None if self.ids is None else tuple(self.ids[i] for i in idx),
            self.distance_scale,
        )

    def with_scale(self, distance_scale: float) -> "SiteSet":
        return SiteSet(self.lon, self.lat, self.elev, self.ids, distance_scale)

    @classmethod
    def concat(cls, first: "SiteSet", second: "SiteSet") -> "SiteSet":
        elev = None
        if first.elev is not None and second.elev is not None:
            elev = np.concatenate([first.elev, second.elev])
        ids = None
        if first.ids is not None and second.ids is not None:
            ids = first.ids + second.ids
        if first.distance_scale != second.distance_scale:
            raise ValidationError("site sets use different distance scales")
        return cls(
            np.concatenate([first.lon, second.lon]),
            np.concatenate([first.lat, second.lat]),
            elev,
            ids,
            first.distance_scale,
        )


@dataclass(frozen=True, eq=False)
class ObservationPanel:
    """n x m responses (sites x days) with an observed mask.

    ``values`` holds NaN where ``observed`` is False.
    """

    values: np.ndarray
    observed: np.ndarray | None = None
    day_labels: tuple[str, ...] | None = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2:
            raise ValidationError("panel values must be an n x m matrix")
        if self.observed is None:
            observed = np.isfinite(values)
        else:
            observed = np.array(self.observed, dtype=bool)
            if observed.shape != values.shape:
                raise ValidationError("observed mask shape must match values")
        if not np.all(np.isfinite(values[observed])):
            raise ValidationError("observed values must be finite")
        if not np.all(observed.any(axis=0)):
            raise ValidationError("every day needs at least one observed site")
        values = np.where(observed, values, np.nan)
        labels = self.day_labels
        if labels is None:
            labels = tuple(str(t + 1) for t in range(values.shape[1]))
        labels = tuple(str(x) for x in labels)
        if len(labels) != values.shape[1]:
            raise ValidationError("need one day label per column")
        values.setflags(write=False)
        observed.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "observed", observed)
        object.__setattr__(self, "day_labels", labels)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]

    def subset_sites(self, idx) -> "ObservationPanel":
        idx = np.asarray(idx, dtype=int)
        vals = self.values[idx]
        obs = self.observed[idx]
        keep = obs.any(axis=0)
        labels = tuple(l for l, k in zip(self.day_labels, keep) if k)
        return ObservationPanel(vals[:, keep], obs[:, keep], labels)

    def subset_days(self, idx) -> "ObservationPanel":
        idx = np.asarray(idx, dtype=int)
        return ObservationPanel(
            self.values[:, idx],
            self.observed[:, idx],
            tuple(self.day_labels[i] for i in idx),
        )

    def day(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        """Return (observed site indices, observed values) for day ``t``."""
        idx = np.flatnonzero(self.observed[:, t])
        return idx, self.values[idx, t]


class PredictorSet(str, enum.Enum):
    SIM3 = "sim3"
    LINEAR4 = "linear4"
    QUAD7 = "quad7"
    CUSTOM = "custom"


_WIDTHS = {PredictorSet.SIM3: 3, PredictorSet.LINEAR4: 4, PredictorSet.QUAD7: 7}


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    Z: np.ndarray
    predictor_set: PredictorSet = PredictorSet.CUSTOM
    columns: tuple[str, ...] = field(default=())

    def __post_init__(self):
        Z = np.array(self.Z, dtype=float)
        if Z.ndim != 2:
            raise ValidationError("design matrix must be 2-D")
        pset = PredictorSet(self.predictor_set)
        if not np.all(np.isfinite(Z)):
            raise ValidationError("design matrix entries must be finite")
        if not np.allclose(Z[:, 0], 1.0):
            raise ValidationError("first design column must be the intercept")
        if pset in _WIDTHS and Z.shape[1] != _WIDTHS[pset]:
            raise ValidationError(f"{pset.value} needs {_WIDTHS[pset]} columns")
        if matrix_rank_scaled(Z) < Z.shape[1]:
            raise RankDeficient(f"design matrix ({Z.shape[0]}x{Z.shape[1]}) is rank deficient")
        Z.setflags(write=False)
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "predictor_set", pset)

    @property
    def J(self) -> int:
        return self.Z.shape[1]

    def rows(self, idx) -> np.ndarray:
        return self.Z[np.asarray(idx, dtype=int)]


def matrix_rank_scaled(Z):
    """Numerical rank after scaling columns to unit norm.

    Raw-degree quadratic columns differ in scale by ~1e4, so the rank test is
    done on the column-equilibrated matrix.
    """
    Z = np.asarray(Z, dtype=float)
    if Z.shape[0] < Z.shape[1]:
        return min(Z.shape[0], np.linalg.matrix_rank(Z))
    norms = np.linalg.norm(Z, axis=0)
    if np.any(norms == 0):
        return int(np.linalg.matrix_rank(Z))
    return int(np.linalg.matrix_rank(Z / norms, tol=1e-10))


def distance_matrix(sites: SiteSet) -> np.ndarray:
    """Pairwise planar distances ``||s_i - s_j||`` in coordinate degrees,
    multiplied by ``sites.distance_scale``."""
    return cross_distance(sites, sites)


def cross_distance(a: SiteSet, b: SiteSet) -> np.ndarray:
    if a.distance_scale != b.distance_scale:
        raise ValidationError("site sets use different distance scales")
    dx = a.lon[:, None] - b.lon[None, :]
    dy = a.lat[:, None] - b.lat[None, :]
    h = np.hypot(dx, dy)
    return h if a.distance_scale == 1.0 else h * a.distance_scale


def design_rows(lon, lat, elev, predictor_set) -> np.ndarray:
    """Unvalidated design rows; used for prediction grids too."""
    pset = PredictorSet(predictor_set)
    lon = np.asarray(lon, dtype=float)
    lat = np.asarray(lat, dtype=float)
    one = np.ones_like(lon)
    if pset is PredictorSet.SIM3:
        cols = [one, lon, lat]
    else:
        if elev is None or not np.all(np.isfinite(elev)):
            raise MissingElevation(f"{pset.value} requires elevation at every site")
        elev = np.asarray(elev, dtype=float)
        cols = [one, lon, lat, elev]
        if pset is PredictorSet.QUAD7:
            cols += [lon * lon, lon * lat, lat * lat]
        elif pset is not PredictorSet.LINEAR4:
            raise ValidationError("custom designs must be passed to DesignMatrix directly")
    return np.column_stack(cols)


_COLUMN_NAMES = {
    PredictorSet.SIM3: ("1", "s1", "s2"),
    PredictorSet.LINEAR4: ("1", "s1", "s2", "elev"),
    PredictorSet.QUAD7: ("1", "s1", "s2", "elev", "s1^2", "s1*s2", "s2^2"),
}


def build_design(sites: SiteSet, predictor_set) -> DesignMatrix:
    """Design matrix for a named predictor set.

    Column order: SIM3 ``[1, s1, s2]``; LINEAR4 ``[1, s1, s2, e]``;
    QUAD7 ``[1, s1, s2, e, s1^2, s1*s2, s2^2]``.
    """
    pset = PredictorSet(predictor_set)
    Z = design_rows(sites.lon, sites.lat, sites.elev, pset)
    return DesignMatrix(Z, pset, _COLUMN_NAMES.get(pset, ()))


def split_folds(sites, k: int, seed) -> list[np.ndarray]:
    """Randomly partition site indices into ``k`` folds of near-equal size.

    ``sites`` may be a :class:`SiteSet` or a site count.
    """
    n = sites if isinstance(sites, (int, np.integer)) else len(sites)
    if k < 1:
        raise ValidationError("k must be at least 1")
    if k > n:
        raise KTooLarge(f"cannot split {n} sites into {k} folds")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    return [np.sort(part) for part in np.array_split(perm, k)]


# -- CSV ingestion -----------------------------------------------------------


def _parse_float(text, path, line, what, allow_empty=False):
    text = text.strip()
    if text == "":
        if allow_empty:
            return math.nan
        raise ParseError(path, line, f"missing {what}")
    try:
        val = float(text)
    except ValueError:
        raise ParseError(path, line, f"cannot parse {what} {text!r}") from None
    if not math.isfinite(val):
        raise ParseError(path, line, f"{what} must be finite")
    return val


def _read_rows(path, header):
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise ParseError(path, 1, "empty file") from None
        if tuple(c.strip() for c in first) != header:
            raise ParseError(path, 1, f"expected header {','.join(header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(path, lineno, f"expected {len(header)} fields, got {len(row)}")
            yield lineno, [c.strip() for c in row]


def read_stations(path, distance_scale: float = 1.0) -> SiteSet:
    ids, lon, lat, elev = [], [], [], []
    seen = set()
    for line, (sid, x, y, e) in _read_rows(path, STATION_HEADER):
        if not sid:
            raise ParseError(path, line, "empty station_id")
        if sid in seen:
            raise ParseError(path, line, f"duplicate station_id {sid!r}")
        seen.add(sid)
        ids.append(sid)
        lon.append(_parse_float(x, path, line, "lon"))
        lat.append(_parse_float(y, path, line, "lat"))
        elev.append(_parse_float(e, path, line, "elev", allow_empty=True))
    if not ids:
        raise ParseError(path, 2, "no stations")
    elev_arr = np.array(elev)
    return SiteSet(np.array(lon), np.array(lat), None if np.all(np.isnan(elev_arr)) else elev_arr, tuple(ids),
                   distance_scale)


def _day_sort_key(labels, path):
    try:
        return sorted(labels, key=int)
    except ValueError:
        pass
    try:
        for lab in labels:
            date.fromisoformat(lab)
    except ValueError as exc:
        raise ParseError(path, 0, f"day labels must be all integers or all ISO-8601 dates ({exc})") from None
    return sorted(labels)


def load_observations(stations_csv, obs_csv, sqrt_transform: bool = False, distance_scale: float = 1.0):
    """Read ``stations.csv`` and long-format ``observations.csv``.

    Returns ``(SiteSet, ObservationPanel)`` with panel rows in station-file
    order and days sorted (numerically for integer labels, chronologically for
    ISO dates). Absent (station, day) rows are masked.
    """
    sites = read_stations(stations_csv, distance_scale)
    index = {sid: i for i, sid in enumerate(sites.ids)}
    cells = {}
    for line, (sid, day, value) in _read_rows(obs_csv, OBSERVATION_HEADER):
        if sid not in index:
            raise UnknownStationId(f"{obs_csv}:{line}: unknown station_id {sid!r}")
        if not day:
            raise ParseError(obs_csv, line, "empty day label")
        val = _parse_float(value, obs_csv, line, "value")
        if sqrt_transform:
            if val < 0:
                raise NegativeValueUnderSqrt(f"{obs_csv}:{line}: negative value {val} under sqrt transform")
            val = math.sqrt(val)
        key = (index[sid], day)
        if key in cells:
            raise ParseError(obs_csv, line, f"duplicate observation for station {sid!r} day {day!r}")
        cells[key] = val
    if not cells:
        raise ParseError(obs_csv, 2, "no observations")
    days = _day_sort_key({d for _, d in cells}, obs_csv)
    col = {d: j for j, d in enumerate(days)}
    values = np.full((sites.n, len(days)), np.nan)
    for (i, d), v in cells.items():
        values[i, col[d]] = v
    return sites, ObservationPanel(values, np.isfinite(values), tuple(days))


def _fmt(x):
    return "" if x is None or not np.isfinite(x) else repr(float(x))


def write_stations(path, sites: SiteSet):
    ids = sites.ids or tuple(f"S{i + 1:04d}" for i in range(sites.n))
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STATION_HEADER)
        for i in range(sites.n):
            e = None if sites.elev is None else sites.elev[i]
            w.writerow([ids[i], _fmt(sites.lon[i]), _fmt(sites.lat[i]), _fmt(e)])


def write_observations(path, sites: SiteSet, panel: ObservationPanel):
    ids = sites.ids or tuple(f"S{i + 1:04d}" for i in range(sites.n))
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OBSERVATION_HEADER)
        for t, label in enumerate(panel.day_labels):
            for i in range(panel.n):
                if panel.observed[i, t]:
                    w.writerow([ids[i], label, _fmt(panel.values[i, t])])
