import csv
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize

from mdns.covariance import CovParams, covariance_matrix
from mdns.errors import ValidationError
from mdns.geometry import SiteSet
from mdns.prediction import (
    PredictiveDist,
    interval_coverage,
    krige,
    normal_quantile,
    prediction_deviance,
    prediction_mse,
    prediction_score,
    se_quantiles,
    threshold_nonnegative,
    write_predictions,
)

from conftest import random_sites

ETA = CovParams(-1.0, 0.1, 0.5, 0.5, -1.0, -0.5)
NO_NUGGET = CovParams(-40.0, 0.0, 0.5, 0.0, -1.0, 0.0)


def design(sites):
    return np.column_stack([np.ones(sites.n), sites.lon, sites.lat])


def brute_force(train, pred, y, beta, eta):
    both = SiteSet.concat(train, pred)
    Z = design(both)
    mu = Z @ beta
    S = covariance_matrix(both, mu, eta)
    k = train.n
    S11, S01, S00 = S[:k, :k], S[k:, :k], S[k:, k:]
    return mu[k:] + S01 @ np.linalg.solve(S11, y - mu[:k]), S00 - S01 @ np.linalg.solve(S11, S01.T)


def krige_sites(train, pred, y, beta, eta=ETA):
    return krige(train, y, pred, design(train), design(pred), beta, eta)


class TestKrige:
    def test_joint_conditioning_oracle(self, rng):
        for _ in range(50):
            s = random_sites(rng, 5)
            train, pred = s.subset([0, 1, 2]), s.subset([3, 4])
            beta, y = rng.normal(0, 0.5, 3), rng.normal(size=3)
            mean, cov = brute_force(train, pred, y, beta, ETA)
            d = krige_sites(train, pred, y, beta)
            np.testing.assert_allclose(d.mean, mean, atol=1e-8)
            np.testing.assert_allclose(d.cov, cov, atol=1e-8)

    def test_interpolates_without_nugget(self, rng):
        train = random_sites(rng, 6)
        y = rng.normal(size=6)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            d = krige_sites(train, train.subset([2]), y, np.zeros(3), NO_NUGGET)
        assert d.mean[0] == pytest.approx(y[2], abs=1e-8)
        assert d.se[0] == pytest.approx(0.0, abs=1e-6)

    def test_reverts_to_prior_far_away(self, rng):
        train = random_sites(rng, 5)
        pred = SiteSet([1e4], [1e4])
        beta = np.array([0.2, 1e-4, -1e-4])
        d = krige_sites(train, pred, rng.normal(size=5), beta)
        mu0 = float((design(pred) @ beta)[0])
        assert d.mean[0] == pytest.approx(mu0, abs=1e-10)
        tau2 = math.exp(ETA.a1 + ETA.b1 * mu0)
        sig2 = math.exp(2 * (ETA.a2 + ETA.b2 * mu0))
        assert d.cov[0, 0] == pytest.approx(tau2 + sig2, rel=1e-10)

    def test_variance_shrinks(self, rng):
        for _ in range(20):
            s = random_sites(rng, 9)
            train, pred = s.subset(range(6)), s.subset(range(6, 9))
            beta = rng.normal(0, 0.5, 3)
            d = krige_sites(train, pred, rng.normal(size=6), beta)
            prior = covariance_matrix(pred, design(pred) @ beta, ETA)
            assert np.all(np.diag(d.cov) <= np.diag(prior) + 1e-10)

    def test_adding_a_site_never_increases_variance(self, rng):
        for _ in range(20):
            s = random_sites(rng, 10)
            beta = rng.normal(0, 0.5, 3)
            y = rng.normal(size=7)
            pred = s.subset(range(7, 10))
            small = krige_sites(s.subset(range(6)), pred, y[:6], beta)
            large = krige_sites(s.subset(range(7)), pred, y, beta)
            assert np.all(np.diag(large.cov) <= np.diag(small.cov) + 1e-8)

    def test_training_order_invariance(self, rng):
        s = random_sites(rng, 8)
        train, pred = s.subset(range(6)), s.subset([6, 7])
        y, beta = rng.normal(size=6), rng.normal(0, 0.5, 3)
        perm = rng.permutation(6)
        a = krige_sites(train, pred, y, beta)
        b = krige_sites(train.subset(perm), pred, y[perm], beta)
        np.testing.assert_allclose(a.mean, b.mean, atol=1e-10)
        np.testing.assert_allclose(a.cov, b.cov, atol=1e-10)

    def test_shape_errors(self, rng):
        s = random_sites(rng, 4)
        with pytest.raises(ValidationError):
            krige_sites(s.subset([0, 1]), s.subset([2]), np.zeros(3), np.zeros(3))
        with pytest.raises(ValidationError):
            krige(s.subset([0, 1]), np.zeros(2), s.subset([2]), np.ones((2, 2)), np.ones((1, 3)), np.zeros(3), ETA)


class TestThreshold:
    def test_examples(self):
        cov = np.eye(2)
        np.testing.assert_array_equal(threshold_nonnegative(PredictiveDist([-0.5, 1.2], cov)), [0.0, 1.2])
        np.testing.assert_array_equal(threshold_nonnegative(PredictiveDist([0.5, 1.2], cov)), [0.5, 1.2])
        np.testing.assert_array_equal(threshold_nonnegative(PredictiveDist([-0.5, -1.2], cov)), [0.0, 0.0])

    def test_se_untouched(self):
        d = PredictiveDist([-1.0], [[4.0]])
        threshold_nonnegative(d)
        assert d.se[0] == 2.0


class TestScores:
    def test_scalar_density(self):
        d = PredictiveDist([1.0], [[2.0]])
        want = -0.5 * math.log(2 * math.pi * 2.0) - 0.5 * 0.25 / 2.0
        assert prediction_score(d, [1.5]) == pytest.approx(want, abs=1e-12)
        assert prediction_deviance(d, [1.5]) == pytest.approx(-2 * want, abs=1e-12)
        assert prediction_mse(d, [1.5]) == pytest.approx(0.25)

    def test_at_mean(self, rng):
        A = rng.normal(size=(3, 3))
        cov = A @ A.T + np.eye(3)
        d = PredictiveDist(rng.normal(size=3), cov)
        assert prediction_score(d, d.mean) == pytest.approx(-0.5 * np.linalg.slogdet(2 * np.pi * cov)[1])

    def test_decreases_along_eigenvectors(self, rng):
        A = rng.normal(size=(3, 3))
        cov = A @ A.T + np.eye(3)
        d = PredictiveDist(np.zeros(3), cov)
        for v in np.linalg.eigh(cov)[1].T:
            scores = [prediction_score(d, s * v) for s in (0.0, 0.5, 1.0, 2.0)]
            assert np.all(np.diff(scores) < 0)

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            prediction_score(PredictiveDist([0.0], [[1.0]]), [0.0, 1.0])


class TestCoverage:
    def test_quantile_by_cdf_inversion(self):
        oracle = optimize.brentq(lambda z: 0.5 * math.erfc(-z / math.sqrt(2)) - 0.975, 0, 5, xtol=1e-14)
        assert normal_quantile(0.975) == pytest.approx(oracle, abs=1e-10)
        assert normal_quantile(0.975) == pytest.approx(1.95996, abs=1e-4)

    def test_extremes(self):
        d = PredictiveDist([0.0, 1.0], np.diag([1.0, 4.0]))
        assert interval_coverage(d, d.mean) == 1.0
        assert interval_coverage(d, d.mean + 10 * d.se) == 0.0

    def test_monte_carlo(self, rng):
        A = rng.normal(size=(50, 50))
        cov = A @ A.T / 50 + 0.1 * np.eye(50)
        d = PredictiveDist(rng.normal(size=50), cov)
        draws = rng.multivariate_normal(d.mean, cov, size=400)
        assert np.mean([interval_coverage(d, y) for y in draws]) == pytest.approx(0.95, abs=0.02)

    def test_bad_level(self):
        with pytest.raises(ValidationError):
            interval_coverage(PredictiveDist([0.0], [[1.0]]), [0.0], level=1.0)


class TestSeQuantiles:
    def test_constant(self):
        assert se_quantiles(np.full(7, 0.3)) == pytest.approx((0.3, 0.3, 0.3))

    def test_order_statistics(self):
        se = np.arange(1, 101) / 100
        # linear interpolation at position p (n - 1) in the sorted sample
        want = [se[0] + p * 99 / 100 for p in (0.05, 0.5, 0.95)]
        assert se_quantiles(se) == pytest.approx(want, abs=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(0, 10), min_size=1, max_size=40), st.randoms())
    def test_permutation_invariance(self, values, r):
        shuffled = list(values)
        r.shuffle(shuffled)
        assert se_quantiles(np.array(values)) == se_quantiles(np.array(shuffled))

    def test_from_dist(self):
        d = PredictiveDist([0, 0, 0], np.diag([1.0, 4.0, 9.0]))
        q = se_quantiles(d)
        assert q[0] <= q[1] <= q[2] and q[1] == 2.0

    def test_empty(self):
        with pytest.raises(ValidationError):
            se_quantiles(np.array([]))


def test_write_predictions(tmp_path):
    sites = SiteSet([0.0, 1.0], [0.5, 1.5])
    dists = [PredictiveDist([-1.0, 2.0], np.diag([1.0, 4.0]))]
    path = tmp_path / "p.csv"
    write_predictions(path, sites, ["d1"], dists)
    rows = list(csv.DictReader(open(path)))
    assert len(rows) == 2
    assert float(rows[0]["pred_mean_thresholded"]) == 0.0
    assert float(rows[1]["pred_se"]) == 2.0
