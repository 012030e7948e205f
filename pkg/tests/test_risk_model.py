"""Модель относительного риска: нулевая модель, поле θ и совместная плотность."""

import math
from datetime import date

import numpy as np
import pytest
from pydantic import ValidationError
from scipy.linalg import toeplitz
from scipy.stats import multivariate_normal, norm

from src.exceptions import ContractError, DomainError
from src.services.priors import PARAM_INDEX, PriorSpec
from src.services.risk_model import (
    CountPanel,
    LatentState,
    Region,
    RegionTable,
    RiskModel,
    expected_counts,
    incidence_rate,
    log_joint,
    relative_risk_field,
    standardized_density,
    standardized_incidence_ratio,
)
from tests.helpers import make_hyper, make_panel, path_regions

RTOL = 1e-9
ATOL = 1e-6
KAPPA = 1e6


def two_regions(densities=(100.0, 300.0), populations=(1e5, 3e5)) -> RegionTable:
    return RegionTable(regions=[
        Region(id="A", population=populations[0], area=populations[0] / densities[0],
               centroid_x=0.0, centroid_y=0.0, neighbors=["B"]),
        Region(id="B", population=populations[1], area=populations[1] / densities[1],
               centroid_x=50.0, centroid_y=0.0, neighbors=["A"]),
    ])


def transformed(h) -> np.ndarray:
    """Преобразованные гиперпараметры, посчитанные независимо от модуля priors."""
    def logit(x):
        return math.log(x / (1.0 - x))

    def fisher(x):
        return math.log((1.0 + x) / (1.0 - x))

    return np.array([
        math.log(h.phi), h.alpha, h.mu, h.beta,
        math.log(h.tau_delta), math.log(h.tau_eps), fisher(h.psi1), fisher(h.psi2),
        math.log(h.tau_zeta), logit(h.omega), math.log(h.tau_xi), logit(h.phi_bym),
    ])


def dense_log_joint(h, s: LatentState, panel: CountPanel, regions: RegionTable) -> float:
    """Совместная плотность через плотные матрицы и явные формулы."""
    P = regions.populations
    Y = panel.counts.astype(float)
    m, T = Y.shape
    rate = np.mean(Y.sum(axis=0) / P.sum())
    E = np.outer(P, np.ones(T)) * rate
    raw = P / regions.areas
    d = (raw - raw.mean()) / raw.std()

    eta = h.mu + h.beta * d[:, None] + (s.delta + s.eps)[None, :] + (s.zeta + s.xi)[:, None]
    lam = E * np.exp(eta)
    obs = 0.0
    for i in range(m):
        for t in range(T):
            sd = h.phi * lam[i, t] ** (h.alpha - 1.0)
            omega, psi = lam[i, t] / (1.0 + sd), sd / (1.0 + sd)
            y = Y[i, t]
            obs += (math.log(omega) + (y - 1.0) * math.log(omega + psi * y)
                    - omega - psi * y - math.lgamma(y + 1.0))

    D = np.zeros((T - 2, T))
    for t in range(T - 2):
        D[t, t:t + 3] = (1.0, -2.0, 1.0)
    second = D @ s.delta
    rw2 = 0.5 * (T - 2) * math.log(h.tau_delta / (2.0 * math.pi)) - 0.5 * h.tau_delta * second @ second

    a1, a2 = h.psi1 * (1.0 - h.psi2), h.psi2
    gamma = np.empty(T)
    gamma[0] = (1.0 - a2) / (h.tau_eps * (1.0 + a2) * ((1.0 - a2) ** 2 - a1 ** 2))
    gamma[1] = a1 * gamma[0] / (1.0 - a2)
    for k in range(2, T):
        gamma[k] = a1 * gamma[k - 1] + a2 * gamma[k - 2]
    ar2 = multivariate_normal(np.zeros(T), toeplitz(gamma)).logpdf(s.eps)

    C = regions.distance_matrix()
    e_max = np.linalg.eigvalsh(C).max()
    K = h.tau_zeta * (np.eye(m) - h.omega / e_max * C)
    distance = multivariate_normal(np.zeros(m), np.linalg.inv(K)).logpdf(s.zeta)

    Q = np.diag([len(r.neighbors) for r in regions.regions]).astype(float)
    index = {rid: i for i, rid in enumerate(regions.ids)}
    for i, r in enumerate(regions.regions):
        for n in r.neighbors:
            Q[i, index[n]] = -1.0
    G = np.linalg.pinv(Q)
    G = G / math.exp(np.mean(np.log(np.diag(G))))
    cov = ((1.0 - h.phi_bym) * G + h.phi_bym * np.eye(m)) / h.tau_xi
    bym = multivariate_normal(np.zeros(m), cov).logpdf(s.xi)

    means = np.zeros(12)
    means[PARAM_INDEX["alpha"]] = 1.5
    prior = norm.logpdf(transformed(h), loc=means, scale=1e3).sum()

    constraint = -0.5 * KAPPA * (s.delta.sum() ** 2 + s.zeta.sum() ** 2 + s.xi.sum() ** 2)
    return obs + rw2 + ar2 + distance + bym + prior + constraint


def random_hyper(rng: np.random.Generator):
    return make_hyper(
        phi=rng.uniform(0.05, 2.0), alpha=rng.uniform(0.8, 2.2),
        mu=rng.normal(0.0, 0.5), beta=rng.normal(0.0, 0.3),
        tau_delta=math.exp(rng.uniform(0.0, 6.0)), tau_eps=math.exp(rng.uniform(0.0, 4.0)),
        psi1=rng.uniform(-0.9, 0.9), psi2=rng.uniform(-0.9, 0.9),
        tau_zeta=math.exp(rng.uniform(-1.0, 3.0)), omega=rng.uniform(0.05, 0.95),
        tau_xi=math.exp(rng.uniform(-1.0, 3.0)), phi_bym=rng.uniform(0.05, 0.95),
    )


def random_state(rng: np.random.Generator, T: int, m: int, scale: float = 0.2) -> LatentState:
    def centered(n):
        x = scale * rng.standard_normal(n)
        return x - x.mean()

    return LatentState(delta=centered(T), eps=scale * rng.standard_normal(T), zeta=centered(m), xi=centered(m))


class TestNullModel:

    def test_incidence_rate_example(self):
        regions = two_regions()
        panel = make_panel(regions, [[4, 6], [6, 4]])
        assert incidence_rate(panel, regions) == pytest.approx(25e-6, rel=RTOL)

    def test_expected_counts(self):
        regions = two_regions()
        E = expected_counts(regions, 25e-6, T=3)
        np.testing.assert_allclose(E, [[2.5] * 3, [7.5] * 3])

    def test_standardized_density_example(self):
        np.testing.assert_allclose(standardized_density(two_regions()), [-1.0, 1.0], rtol=RTOL)

    def test_standardized_density_needs_variation(self):
        with pytest.raises(DomainError):
            standardized_density(two_regions(densities=(200.0, 200.0)))

    def test_standardized_density_needs_two_regions(self):
        single = RegionTable(regions=[Region(id="A", population=1.0, area=1.0, centroid_x=0.0, centroid_y=0.0)])
        with pytest.raises(ContractError):
            standardized_density(single)

    def test_standardized_incidence_ratio(self):
        regions = two_regions()
        panel = make_panel(regions, [[5, 0], [15, 3]])
        sir = standardized_incidence_ratio(panel, expected_counts(regions, 25e-6, T=2))
        np.testing.assert_allclose(sir, [[2.0, 0.0], [2.0, 0.4]])

    def test_floor_rate_for_a_panel_without_cases(self, path3):
        panel = make_panel(path3, np.zeros((3, 5), dtype=int))
        model = RiskModel(panel, path3)
        assert model.rate == pytest.approx(0.5 / (5 * path3.populations.sum()), rel=RTOL)
        assert np.all(model.E > 0)


class TestRelativeRiskField:

    def test_baseline_risk(self):
        h = make_hyper(mu=1.0, beta=0.0)
        s = LatentState.zeros(3, 2)
        E = np.full((2, 3), 4.0)
        field = relative_risk_field(h, s, [-1.0, 1.0], E)
        np.testing.assert_allclose(field.theta, math.e, rtol=RTOL)
        np.testing.assert_allclose(field.lam, 4.0 * math.e, rtol=RTOL)

    def test_all_effects_add_on_the_log_scale(self):
        h = make_hyper(mu=-1.0, beta=0.2)
        s = LatentState(delta=[0.1], eps=[-0.046], zeta=[-0.1], xi=[-0.1])
        field = relative_risk_field(h, s, [-1.0], [[1.0]])
        assert field.theta[0, 0] == pytest.approx(math.exp(-1.346), rel=RTOL)
        assert field.theta[0, 0] == pytest.approx(0.260, abs=5e-4)

    def test_linear_predictor_is_clamped(self):
        h = make_hyper(mu=80.0)
        field = relative_risk_field(h, LatentState.zeros(1, 1), [0.0], [[1.0]])
        assert field.theta[0, 0] == pytest.approx(math.exp(50.0))
        assert field.clamped == 1

    def test_each_model_counts_its_own_clamps(self, path3):
        T = 3
        first = RiskModel(make_panel(path3, np.ones((3, T), dtype=int)), path3)
        second = RiskModel(make_panel(path3, np.ones((3, T), dtype=int)), path3)
        first.field(make_hyper(mu=80.0), LatentState.zeros(T, 3))
        second.field(make_hyper(mu=0.0), LatentState.zeros(T, 3))
        assert first.clamps.count == 3 * T
        assert second.clamps.count == 0
        assert first.clamps.reset() == 3 * T
        assert first.clamps.count == 0

    def test_dimension_mismatch(self):
        with pytest.raises(ContractError):
            relative_risk_field(make_hyper(), LatentState.zeros(3, 2), [0.0, 0.0, 0.0], np.ones((2, 3)))


class TestLogJoint:

    @pytest.fixture
    def data(self, grid4, rng):
        T = 10
        counts = rng.poisson(5.0, size=(grid4.m, T))
        return make_panel(grid4, counts), grid4

    def test_matches_dense_oracle(self, data, rng):
        panel, regions = data
        model = RiskModel(panel, regions)
        for _ in range(25):
            h = random_hyper(rng)
            s = random_state(rng, panel.T, regions.m)
            expected = dense_log_joint(h, s, panel, regions)
            assert model.log_joint(h, s) == pytest.approx(expected, rel=RTOL, abs=ATOL)

    def test_module_function_agrees_with_model(self, data, rng):
        panel, regions = data
        h, s = random_hyper(rng), random_state(rng, panel.T, regions.m)
        assert log_joint(h, s, panel, regions) == pytest.approx(RiskModel(panel, regions).log_joint(h, s), rel=1e-12)

    def test_terms_add_up(self, data, rng):
        panel, regions = data
        model = RiskModel(panel, regions)
        h, s = random_hyper(rng), random_state(rng, panel.T, regions.m)
        terms = model.log_joint_terms(h, s)
        assert set(terms) == {"observation", "rw2", "ar2", "distance", "bym", "prior", "constraint"}
        assert sum(terms.values()) == pytest.approx(model.log_joint(h, s), rel=1e-12)
        partial = model.log_joint_terms(h, s, only=("rw2", "bym"))
        assert partial == {"rw2": terms["rw2"], "bym": terms["bym"]}

    def test_state_vector_round_trip(self, data, rng):
        panel, regions = data
        model = RiskModel(panel, regions)
        h, s = random_hyper(rng), random_state(rng, panel.T, regions.m)
        x = model.state_vector(h, s)
        assert x.size == model.dimension == 12 + 2 * panel.T + 2 * regions.m
        assert model.log_joint_vector(x) == pytest.approx(model.log_joint(h, s), rel=1e-10)
        h2, s2 = model.split_state(x)
        np.testing.assert_allclose(h2.as_array(), h.as_array(), rtol=1e-10)
        np.testing.assert_array_equal(s2.as_vector(), s.as_vector())

    def test_permuting_regions_leaves_density_unchanged(self, data, rng):
        panel, regions = data
        h, s = random_hyper(rng), random_state(rng, panel.T, regions.m)
        order = [3, 1, 0, 2]
        ids = [regions.ids[i] for i in order]
        permuted_regions = regions.reordered(ids)
        permuted_panel = CountPanel(region_ids=ids, dates=panel.dates, counts=panel.counts[order])
        permuted_state = LatentState(delta=s.delta, eps=s.eps, zeta=s.zeta[order], xi=s.xi[order])
        original = RiskModel(panel, regions).log_joint(h, s)
        permuted = RiskModel(permuted_panel, permuted_regions).log_joint(h, permuted_state)
        assert permuted == pytest.approx(original, rel=RTOL)

    def test_constraint_penalizes_uncentered_fields(self, data):
        panel, regions = data
        model = RiskModel(panel, regions)
        s = LatentState(delta=np.full(panel.T, 0.01), eps=np.zeros(panel.T),
                        zeta=np.zeros(regions.m), xi=np.zeros(regions.m))
        terms = model.log_joint_terms(make_hyper(), s, only=("constraint",))
        assert terms["constraint"] == pytest.approx(-0.5 * KAPPA * (0.01 * panel.T) ** 2, rel=RTOL)
        free = RiskModel(panel, regions, sum_to_zero=False)
        assert free.log_joint_terms(make_hyper(), s, only=("constraint",))["constraint"] == 0.0

    def test_finite_difference_gradients(self, data, rng):
        panel, regions = data
        model = RiskModel(panel, regions, sum_to_zero=False)
        x = model.state_vector(random_hyper(rng), random_state(rng, panel.T, regions.m, scale=0.1))
        h = 1e-5
        f0 = model.log_joint_vector(x)
        for _ in range(5):
            u = rng.standard_normal(x.size)
            u /= np.linalg.norm(u)
            forward_diff = (model.log_joint_vector(x + h * u) - f0) / h
            central = (model.log_joint_vector(x + h * u) - model.log_joint_vector(x - h * u)) / (2.0 * h)
            assert abs(forward_diff - central) <= 1e-3 * max(1.0, abs(central))

    def test_failing_component_is_named(self, data):
        panel, regions = data
        model = RiskModel(panel, regions)
        x = np.zeros(model.dimension)
        x[PARAM_INDEX["psi1"]] = 1e3
        with pytest.raises(DomainError, match="prior term"):
            model.log_joint_vector(x)

    def test_needs_three_days(self, path3):
        with pytest.raises(ContractError):
            RiskModel(make_panel(path3, np.ones((3, 2), dtype=int)), path3)

    def test_latent_state_must_match(self, data):
        panel, regions = data
        with pytest.raises(ContractError):
            RiskModel(panel, regions).log_joint(make_hyper(), LatentState.zeros(panel.T + 1, regions.m))

    def test_prior_spec_is_used(self, data, rng):
        panel, regions = data
        h, s = random_hyper(rng), random_state(rng, panel.T, regions.m)
        tight = PriorSpec().with_term("mu", variance=1.0)
        diff = (RiskModel(panel, regions, priors=tight).log_joint(h, s)
                - RiskModel(panel, regions).log_joint(h, s))
        expected = norm.logpdf(h.mu, scale=1.0) - norm.logpdf(h.mu, scale=1e3)
        assert diff == pytest.approx(expected, rel=1e-8)


class TestPanel:

    def test_rejects_negative_counts(self, path3):
        with pytest.raises(ValidationError):
            make_panel(path3, [[1, -1, 0], [0, 0, 0], [0, 0, 0]])

    def test_rejects_non_consecutive_dates(self):
        with pytest.raises(ValidationError):
            CountPanel(region_ids=["A"], dates=[date(2020, 3, 1), date(2020, 3, 3)], counts=[[1, 2]])

    def test_aligned_to_reorders_rows(self):
        regions = path_regions(3)
        panel = CountPanel(
            region_ids=["R3", "R1", "R2"],
            dates=[date(2020, 3, 1), date(2020, 3, 2)],
            counts=[[3, 3], [1, 1], [2, 2]]
        )
        aligned = panel.aligned_to(regions)
        assert aligned.region_ids == ["R1", "R2", "R3"]
        np.testing.assert_array_equal(aligned.counts[:, 0], [1, 2, 3])
