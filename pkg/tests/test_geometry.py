import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mdns.errors import (
    DuplicateSite,
    KTooLarge,
    MissingElevation,
    NegativeValueUnderSqrt,
    ParseError,
    RankDeficient,
    UnknownStationId,
    ValidationError,
)
from mdns.geometry import (
    KM_PER_DEGREE,
    DesignMatrix,
    ObservationPanel,
    SiteSet,
    build_design,
    cross_distance,
    distance_matrix,
    load_observations,
    split_folds,
    write_observations,
    write_stations,
)

from conftest import random_sites


def test_pythagorean_distance():
    h = distance_matrix(SiteSet([0.0, 3.0], [0.0, 4.0]))
    assert h[0, 1] == pytest.approx(5.0, abs=1e-15)
    assert np.all(np.diag(h) == 0)


def test_distance_scale_multiplies():
    s = SiteSet([0.0, 3.0], [0.0, 4.0], distance_scale=KM_PER_DEGREE)
    assert distance_matrix(s)[0, 1] == pytest.approx(5.0 * KM_PER_DEGREE)
    with pytest.raises(ValidationError):
        cross_distance(s, SiteSet([0.0], [0.0]))
    assert s.subset([1]).distance_scale == KM_PER_DEGREE


def test_permutation_permutes_distances(rng):
    s = random_sites(rng, 8)
    p = rng.permutation(8)
    assert np.array_equal(distance_matrix(s.subset(p)), distance_matrix(s)[np.ix_(p, p)])


def test_duplicate_site_rejected():
    with pytest.raises(DuplicateSite):
        SiteSet([1.0, 1.0], [2.0, 2.0])


@pytest.mark.parametrize("lon, lat", [([], []), ([np.nan], [0.0]), ([0.0, 1.0], [0.0])])
def test_invalid_sites(lon, lat):
    with pytest.raises(ValidationError):
        SiteSet(lon, lat)


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 12), st.integers(0, 2**32 - 1))
def test_distance_symmetry_and_triangle(n, seed):
    s = random_sites(np.random.default_rng(seed), n)
    h = distance_matrix(s)
    assert np.array_equal(h, h.T)
    for i, j, k in itertools.combinations(range(n), 3):
        assert h[i, k] <= h[i, j] + h[j, k] + 1e-12


def test_design_rows():
    s = SiteSet([2.0, 1.0, 5.0, 0.5, 7.0, 3.0, 6.0, 2.5],
                [3.0, 4.0, 1.0, 2.0, 0.5, 6.0, 2.0, 8.0],
                [10.0, 20.0, 5.0, 30.0, 15.0, 25.0, 12.0, 40.0])
    assert build_design(s, "sim3").Z[0].tolist() == [1, 2, 3]
    assert build_design(s, "linear4").Z[0].tolist() == [1, 2, 3, 10]
    assert build_design(s, "quad7").Z[0].tolist() == [1, 2, 3, 10, 4, 6, 9]


def test_missing_elevation():
    with pytest.raises(MissingElevation):
        build_design(SiteSet([0.0, 1.0, 2.0, 3.0, 4.0], [0.0, 2.0, 1.0, 3.0, 5.0]), "linear4")


def test_design_checks():
    with pytest.raises(RankDeficient):
        DesignMatrix(np.column_stack([np.ones(4), np.arange(4.0), 2 * np.arange(4.0)]))
    with pytest.raises(ValidationError):
        DesignMatrix(np.column_stack([np.arange(4.0), np.ones(4)]))
    with pytest.raises(ValidationError):
        DesignMatrix(np.ones((4, 2)) + np.eye(4, 2), "linear4")


def test_panel_invariants():
    with pytest.raises(ValidationError):
        ObservationPanel(np.array([[1.0, np.nan], [2.0, np.nan]]))
    p = ObservationPanel(np.array([[1.0, np.nan], [2.0, 3.0]]))
    assert p.observed.tolist() == [[True, False], [True, True]]
    idx, y = p.day(1)
    assert idx.tolist() == [1] and y.tolist() == [3.0]
    assert p.subset_sites([0]).m == 1


def test_split_folds_counts():
    folds = split_folds(10, 5, 0)
    assert [len(f) for f in folds] == [2] * 5
    sizes = sorted(len(f) for f in split_folds(47, 5, 3))
    assert sizes == [9, 9, 9, 10, 10]
    assert all(np.array_equal(a, b) for a, b in zip(split_folds(47, 5, 3), split_folds(47, 5, 3)))
    with pytest.raises(KTooLarge):
        split_folds(3, 4, 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 60), st.integers(1, 10), st.integers(0, 2**32 - 1))
def test_split_folds_partition(n, k, seed):
    if k > n:
        return
    folds = split_folds(n, k, seed)
    allidx = np.concatenate(folds)
    assert sorted(allidx.tolist()) == list(range(n))
    sizes = [len(f) for f in folds]
    assert max(sizes) - min(sizes) <= 1


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_load_observations(tmp_path):
    st_csv = _write(tmp_path / "s.csv", "station_id,lon,lat,elev\nA,0,0,\nB,1,1,5\n")
    ob_csv = _write(tmp_path / "o.csv", "station_id,day,value\nA,2,1\nA,1,4\nB,1,9\nB,2,16\nA,3,0\n")
    sites, panel = load_observations(st_csv, ob_csv, sqrt_transform=True)
    assert sites.ids == ("A", "B") and panel.day_labels == ("1", "2", "3")
    assert panel.values[0, 0] == 2.0 and panel.values[1, 1] == 4.0
    assert panel.observed.tolist() == [[True, True, True], [True, True, False]]
    assert not sites.has_elevation


def test_iso_days_sorted(tmp_path):
    st_csv = _write(tmp_path / "s.csv", "station_id,lon,lat,elev\nA,0,0,1\n")
    ob_csv = _write(tmp_path / "o.csv", "station_id,day,value\nA,2013-05-02,1\nA,2013-05-01,2\n")
    _, panel = load_observations(st_csv, ob_csv)
    assert panel.day_labels == ("2013-05-01", "2013-05-02")


@pytest.mark.parametrize("obs, err", [
    ("station_id,day,value\nZ,1,1\n", UnknownStationId),
    ("station_id,day,value\nA,1,abc\n", ParseError),
    ("station_id,day,value\nA,1,-1\n", NegativeValueUnderSqrt),
    ("station,day,value\nA,1,1\n", ParseError),
    ("station_id,day,value\nA,1,1\nA,1,2\n", ParseError),
])
def test_load_errors(tmp_path, obs, err):
    st_csv = _write(tmp_path / "s.csv", "station_id,lon,lat,elev\nA,0,0,1\n")
    ob_csv = _write(tmp_path / "o.csv", obs)
    with pytest.raises(err):
        load_observations(st_csv, ob_csv, sqrt_transform=True)


def test_parse_error_reports_line(tmp_path):
    st_csv = _write(tmp_path / "s.csv", "station_id,lon,lat,elev\nA,0,0,1\nB,x,0,1\n")
    ob_csv = _write(tmp_path / "o.csv", "station_id,day,value\nA,1,1\n")
    with pytest.raises(ParseError) as info:
        load_observations(st_csv, ob_csv)
    assert info.value.line == 3


def test_roundtrip(tmp_path, rng):
    s = random_sites(rng, 5, elev=True)
    s = SiteSet(s.lon, s.lat, s.elev, tuple("abcde"))
    vals = rng.normal(size=(5, 3))
    obs = np.ones((5, 3), bool)
    obs[2, 1] = False
    panel = ObservationPanel(vals, obs, ("1", "2", "3"))
    write_stations(tmp_path / "s.csv", s)
    write_observations(tmp_path / "o.csv", s, panel)
    s2, p2 = load_observations(tmp_path / "s.csv", tmp_path / "o.csv")
    assert np.array_equal(s2.lon, s.lon) and np.array_equal(s2.elev, s.elev)
    assert np.array_equal(p2.observed, panel.observed)
    assert np.array_equal(p2.values[obs], vals[obs])
