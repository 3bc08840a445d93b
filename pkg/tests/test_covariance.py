import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mdns.covariance import (
    JITTER_SCHEDULE,
    CovParams,
    LinkFamily,
    LinkKind,
    cholesky_jitter,
    covariance_matrix,
    cross_covariance,
    link_eval,
    local_params,
    nonstat_correlation,
    stationary_covariance,
)
from mdns.errors import MdnsWarning, NotPositiveDefinite, ValidationError
from mdns.geometry import SiteSet, distance_matrix

from conftest import random_sites

STAT = CovParams(-1.0, 0.0, 0.5, 0.0, 4.0, 0.0)


def oracle_entry(hij, mui, muj, eta, same):
    """Independent scalar evaluation of one covariance entry (MDNS links)."""
    tau2 = math.exp(eta.a1 + eta.b1 * mui)
    si, sj = math.exp(eta.a2 + eta.b2 * mui), math.exp(eta.a2 + eta.b2 * muj)
    ri, rj = math.exp(eta.a3 + eta.b3 * mui), math.exp(eta.a3 + eta.b3 * muj)
    # kernel-convolution form with C = rho I_2: |C_i|^(1/4) |C_j|^(1/4) |(C_i + C_j)/2|^(-1/2)
    pre = (ri * ri) ** 0.25 * (rj * rj) ** 0.25 / (((ri + rj) / 2) ** 2) ** 0.5
    q = hij / math.sqrt((ri + rj) / 2)
    return (tau2 if same else 0.0) + si * sj * pre * math.exp(-q)


def test_link_examples():
    assert link_eval("mdns", 0.0, 0.0, 5.0) == 1.0
    assert link_eval("mdns", 0.5, 0.5, 1.0) == pytest.approx(math.e, rel=1e-15)
    assert link_eval("lmdns", 0.0, 1.0, math.e - 1) == pytest.approx(math.e, rel=1e-15)
    assert link_eval("stationary", 0.3, 0.0, 100.0) == pytest.approx(math.exp(0.3))


def test_lmdns_clamps_negative_mean():
    assert link_eval("lmdns", 0.2, 3.0, -5.0) == pytest.approx(math.exp(0.2))


def test_link_clamp_flags():
    with pytest.warns(MdnsWarning):
        v = link_eval("mdns", 0.0, 1.0, 1e4)
    assert v == pytest.approx(1e300)
    with pytest.warns(MdnsWarning):
        assert link_eval("mdns", 0.0, -1.0, 1e4) == pytest.approx(1e-300)


def test_local_params_paper_constants():
    lp = local_params(np.array([0.0, 3.0, -2.0]), STAT)
    assert np.allclose(lp.tau2, math.exp(-1.0))
    assert np.allclose(lp.sigma, math.exp(0.5))
    assert np.allclose(lp.rho, math.exp(4.0))
    assert lp.tau2.shape == (3,) and not lp.clamped


def test_correlation_examples():
    assert nonstat_correlation(0.0, 2.0, 2.0) == 1.0
    assert nonstat_correlation(0.0, 1.0, 4.0, 2) == pytest.approx(0.8, abs=1e-15)
    assert nonstat_correlation(2.0, 4.0, 4.0) == pytest.approx(math.exp(-1.0), abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 20), st.floats(1.0, 1e3), st.floats(1.0, 1e3), st.floats(0.0, 10.0))
def test_correlation_properties(h, ri, rj, dh):
    c = nonstat_correlation(h, ri, rj)
    if h == 0 and ri == rj:
        assert c == 1.0
    assert 0 < c <= 1.0 + 1e-15
    assert c == pytest.approx(nonstat_correlation(h, rj, ri), rel=1e-14)
    if dh > 1e-6:
        assert nonstat_correlation(h + dh, ri, rj) < c


def test_single_site_variance():
    cov = covariance_matrix(SiteSet([0.3], [0.1]), [2.0], STAT)
    assert cov[0, 0] == pytest.approx(math.exp(-1) + math.exp(1), abs=1e-12)
    assert cov[0, 0] == pytest.approx(3.086161, abs=1e-6)


def test_stationary_collapse(rng):
    s = random_sites(rng, 7)
    h = distance_matrix(s)
    eta = CovParams(-0.3, 0, 0.2, 0, 1.5, 0)
    a = covariance_matrix(s, rng.normal(size=7), eta)
    b = covariance_matrix(s, rng.normal(size=7) * 10, eta)
    assert np.array_equal(a, b)
    assert np.allclose(a, stationary_covariance(h, eta), atol=1e-13, rtol=0)


def test_elementwise_oracle(rng):
    for _ in range(20):
        s = random_sites(rng, 5)
        mu = rng.uniform(0, 5, 5)
        eta = CovParams(*rng.uniform(-1, 1, 6))
        h = distance_matrix(s)
        cov = covariance_matrix(s, mu, eta)
        for i in range(5):
            for j in range(5):
                assert cov[i, j] == pytest.approx(oracle_entry(h[i, j], mu[i], mu[j], eta, i == j), abs=1e-12)
        assert np.array_equal(cov, cov.T)


def test_cross_covariance(rng):
    eta = CovParams(-1.0, 0.1, 0.5, 0.5, 4.0, -0.5)
    one = SiteSet([0.2], [0.4])
    c = cross_covariance(one, [1.5], one, [1.5], eta)
    assert c[0, 0] == pytest.approx(math.exp(2 * (0.5 + 0.5 * 1.5)), rel=1e-14)
    far = SiteSet([1e4], [1e4])
    assert cross_covariance(one, [1.0], far, [1.0], eta)[0, 0] < 1e-300
    a, b = random_sites(rng, 2), random_sites(rng, 1)
    mua, mub = rng.uniform(0, 3, 2), rng.uniform(0, 3, 1)
    got = cross_covariance(a, mua, b, mub, eta)
    for i in range(2):
        h = math.hypot(a.lon[i] - b.lon[0], a.lat[i] - b.lat[0])
        assert got[i, 0] == pytest.approx(oracle_entry(h, mua[i], mub[0], eta, False), abs=1e-12)


def test_cross_block_matches_joint(rng):
    eta = CovParams(-0.5, 0.2, 0.1, 0.3, 0.5, -0.2)
    a, b = random_sites(rng, 4), random_sites(rng, 3)
    mua, mub = rng.uniform(0, 3, 4), rng.uniform(0, 3, 3)
    joint = covariance_matrix(SiteSet.concat(a, b), np.concatenate([mua, mub]), eta)
    assert np.allclose(cross_covariance(a, mua, b, mub, eta), joint[:4, 4:], atol=1e-14)


def test_link_family_validation():
    with pytest.raises(ValidationError):
        CovParams(0, 0.1, 0, 0, 0, 0, LinkFamily.stationary())
    with pytest.raises(ValidationError):
        CovParams(0, np.nan, 0, 0, 0, 0)
    eta = CovParams.from_array([1, 2, 3, 4, 5, 6], LinkFamily(LinkKind.MDNS, LinkKind.STATIONARY, LinkKind.LMDNS))
    assert eta.as_array().tolist() == [1, 2, 3, 0, 5, 6]


def test_jitter_schedule():
    assert JITTER_SCHEDULE == (1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
    L, jit = cholesky_jitter(np.eye(3))
    assert jit == 0.0 and np.allclose(L, np.eye(3))
    v = np.array([1.0, 1.0, 1.0])
    L, jit = cholesky_jitter(np.outer(v, v))
    assert 0 < jit <= 1e-6
    with pytest.raises(NotPositiveDefinite):
        cholesky_jitter(np.diag([1.0, -1.0]))
    with pytest.raises(NotPositiveDefinite):
        cholesky_jitter(np.array([[np.nan]]))


def test_random_draws_factorize(rng):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for _ in range(200):
            s = random_sites(rng, 25)
            a = rng.uniform(-2, 4, 3)
            b = rng.uniform(-0.5, 0.5, 3)
            eta = CovParams(a[0], b[0], a[1], b[1], a[2], b[2])
            cholesky_jitter(covariance_matrix(s, rng.uniform(0, 5, 25), eta))
