import math
import warnings

import numpy as np
import pytest
from scipy.optimize import minimize

from mdns.covariance import CovParams, LinkFamily, LinkKind, covariance_matrix
from mdns.errors import ValidationError
from mdns.fitting import (
    FitConfig,
    FitMethod,
    fit_beta_gls,
    fit_chain,
    fit_full_mle,
    fit_onestep,
    fit_stationary,
)
from mdns.geometry import ObservationPanel, SiteSet, build_design
from mdns.likelihood import GaussianPrior, PenalizedLikelihood, diffuse_prior, mvn_logpdf
from mdns.simulation import simulate_day

SILL_ONLY = LinkFamily(LinkKind.STATIONARY, LinkKind.MDNS, LinkKind.STATIONARY)
FAST = FitConfig(max_evals=800, onestep_starts=2)


@pytest.fixture(autouse=True)
def quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield


def simulated(seed, n=30, m=3, eta=CovParams(-1.0, 0.1, 0.0, 0.5, -2.0, -0.5)):
    rng = np.random.default_rng(seed)
    sites = SiteSet(rng.uniform(0, 1, n), rng.uniform(0, 1, n))
    Z = build_design(sites, "sim3")
    betas = np.column_stack([np.ones(m), np.linspace(0, 1, m), np.linspace(0, 1, m)])
    Y = np.column_stack([simulate_day(sites, Z, betas[t], eta, rng) for t in range(m)])
    return sites, ObservationPanel(Y), Z


def normal_equations(y, Z, Sigma, beta0, Omega):
    Si, Oi = np.linalg.inv(Sigma), np.linalg.inv(Omega)
    return np.linalg.solve(Z.T @ Si @ Z + Oi, Z.T @ Si @ y + Oi @ beta0)


class TestGls:
    def test_identity_design_diffuse_prior(self, rng):
        y = rng.normal(size=3)
        beta = fit_beta_gls(y, np.eye(3), np.eye(3), np.zeros(3), 1e12 * np.eye(3))
        np.testing.assert_allclose(beta, y, atol=1e-9)

    def test_full_shrinkage(self, rng):
        y, Z = rng.normal(size=6), rng.normal(size=(6, 3))
        beta0 = np.array([0.3, -1.0, 2.0])
        beta = fit_beta_gls(y, Z, np.eye(6), beta0, 1e-12 * np.eye(3))
        np.testing.assert_allclose(beta, beta0, atol=1e-9)

    def test_random_instances_vs_normal_equations(self, rng):
        for _ in range(30):
            Z = np.column_stack([np.ones(5), rng.normal(size=(5, 2))])
            A = rng.normal(size=(5, 5))
            Sigma = A @ A.T + np.eye(5)
            B = rng.normal(size=(3, 3))
            Omega = B @ B.T + 0.5 * np.eye(3)
            y, beta0 = rng.normal(size=5), rng.normal(size=3)
            np.testing.assert_allclose(fit_beta_gls(y, Z, Sigma, beta0, Omega),
                                       normal_equations(y, Z, Sigma, beta0, Omega), atol=1e-8)

    def test_unique_maximizer(self, rng):
        Z = np.column_stack([np.ones(8), rng.normal(size=(8, 2))])
        A = rng.normal(size=(8, 8))
        Sigma = A @ A.T + np.eye(8)
        beta0, Omega = np.zeros(3), 4.0 * np.eye(3)
        y = rng.normal(size=8)
        prior = GaussianPrior(beta0, Omega)
        obj = lambda b: mvn_logpdf(y, Z @ b, Sigma) + prior.logpdf(b)
        best = fit_beta_gls(y, Z, Sigma, beta0, Omega)
        for _ in range(10):
            d = rng.normal(size=3)
            assert obj(best + 1e-3 * d / np.linalg.norm(d)) < obj(best)


class TestStationary:
    def test_constant_panel_recovers_level(self):
        rng = np.random.default_rng(0)
        sites = SiteSet(rng.uniform(0, 1, 12), rng.uniform(0, 1, 12))
        Y = np.column_stack([np.full(12, c) for c in (1.5, -2.0)]) + 1e-3 * rng.normal(size=(12, 2))
        fit = fit_stationary(ObservationPanel(Y), sites, np.ones((12, 1)))
        np.testing.assert_allclose(fit.betas[:, 0], [1.5, -2.0], atol=1e-2)

    def test_trace_is_monotone(self):
        sites, panel, Z = simulated(1)
        fit = fit_stationary(panel, sites, Z, cfg=FAST)
        assert fit.method is FitMethod.STATIONARY
        assert np.all(np.diff(fit.trace) >= -1e-9)
        assert fit.eta.b1 == fit.eta.b2 == fit.eta.b3 == 0.0

    def test_deterministic(self):
        sites, panel, Z = simulated(2)
        a = fit_stationary(panel, sites, Z, cfg=FAST)
        b = fit_stationary(panel, sites, Z, cfg=FAST)
        assert a.loglik == b.loglik
        np.testing.assert_array_equal(a.eta.as_array(), b.eta.as_array())
        np.testing.assert_array_equal(a.betas, b.betas)

    def test_stationary_truth_recovers_parameters(self):
        eta = CovParams(-1.0, 0.0, 0.5, 0.0, -2.0, 0.0)
        sites, panel, Z = simulated(3, n=120, m=5, eta=eta)
        fit = fit_stationary(panel, sites, Z)
        assert abs(math.exp(fit.eta.a1) - math.exp(-1.0)) < 0.25
        assert abs(math.exp(fit.eta.a2) - math.exp(0.5)) < 0.5


@pytest.fixture(scope="module")
def chain():
    sites, panel, Z = simulated(4, n=40, m=3)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return sites, panel, Z, fit_chain(panel, sites, Z, "fullmle", cfg=FAST)


class TestOneStepAndFull:
    def test_onestep_keeps_betas_bitwise(self, chain):
        *_, fits = chain
        assert np.array_equal(fits[FitMethod.ONESTEP].betas, fits[FitMethod.STATIONARY].betas)

    def test_nesting(self, chain):
        *_, fits = chain
        s, o, f = (fits[m].loglik for m in FitMethod)
        assert s <= o + 1e-9 <= f + 2e-9

    def test_loglik_matches_state(self, chain):
        sites, panel, Z, fits = chain
        eng = PenalizedLikelihood(panel, sites, Z, *diffuse_prior(3))
        for fit in fits.values():
            assert fit.loglik == pytest.approx(eng.total(fit.eta, fit.betas), abs=1e-9)

    def test_wrong_input_method(self, chain):
        sites, panel, Z, fits = chain
        with pytest.raises(ValidationError):
            fit_onestep(panel, sites, Z, fits[FitMethod.ONESTEP])
        with pytest.raises(ValidationError):
            fit_full_mle(panel, sites, Z, fits[FitMethod.STATIONARY])

    def test_different_data_rejected(self, chain):
        sites, panel, Z, fits = chain
        other = ObservationPanel(panel.values + 1.0)
        with pytest.raises(ValidationError):
            fit_onestep(other, sites, Z, fits[FitMethod.STATIONARY])

    def test_stationary_links_leave_b_at_zero(self, chain):
        sites, panel, Z, fits = chain
        fit = fit_onestep(panel, sites, Z, fits[FitMethod.STATIONARY], FAST, LinkFamily.stationary())
        assert fit.eta.b1 == fit.eta.b2 == fit.eta.b3 == 0.0


def grid_polish_optimum(panel, sites, Z, start):
    """Independent optimizer: coarse grid over (b2, a3), then Powell on all free parameters."""
    eng = PenalizedLikelihood(panel, sites, Z, *diffuse_prior(Z.J))

    def neg(x):
        v = eng.total(CovParams(x[0], 0.0, x[1], x[2], x[3], 0.0, SILL_ONLY), x[4:][None, :])
        return -v if math.isfinite(v) else 1e300

    best = -math.inf
    for b2 in np.linspace(-2, 2, 5):
        for a3 in (-4.0, -2.0, 0.0):
            x = np.r_[start.eta.a1, start.eta.a2, b2, a3, start.betas[0]]
            for _ in range(2):
                x = minimize(neg, x, method="Powell", options={"xtol": 1e-8, "ftol": 1e-12, "maxfev": 20000}).x
            best = max(best, -neg(x))
    return best


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_full_mle_matches_grid_oracle_single_day(seed):
    rng = np.random.default_rng(seed)
    sites = SiteSet(rng.uniform(0, 1, 15), rng.uniform(0, 1, 15))
    Z = build_design(sites, "sim3")
    y = simulate_day(sites, Z, [1.0, 1.0, 1.0], CovParams(-1.5, 0, 0, 0.6, -2, 0, SILL_ONLY), rng)
    panel = ObservationPanel(y[:, None])
    st = fit_stationary(panel, sites, Z)
    full = fit_full_mle(panel, sites, Z, fit_onestep(panel, sites, Z, st, links=SILL_ONLY))
    assert full.loglik == pytest.approx(grid_polish_optimum(panel, sites, Z, st), abs=1e-3)


def test_config_validation():
    with pytest.raises(ValidationError):
        FitConfig(max_evals=0)
    with pytest.raises(ValidationError):
        FitConfig(onestep_starts=6)
    with pytest.raises(ValidationError):
        FitConfig(rel_ll_tol=0.0)


def test_gls_handles_missing_days(rng):
    sites, panel, Z = simulated(5, n=20, m=2)
    mask = np.ones((20, 2), bool)
    mask[:5, 1] = False
    panel = ObservationPanel(np.where(mask, panel.values, np.nan), mask)
    eta = CovParams(-1.0, 0.0, 0.0, 0.0, -2.0, 0.0)
    eng = PenalizedLikelihood(panel, sites, Z, *diffuse_prior(3))
    got = eng.gls_betas(eta)
    S = covariance_matrix(sites, np.zeros(20), eta)
    for t in range(2):
        obs = mask[:, t]
        want = normal_equations(panel.values[obs, t], Z.Z[obs], S[np.ix_(obs, obs)], *diffuse_prior(3))
        np.testing.assert_allclose(got[t], want, atol=1e-8)
