"""Латентные компоненты: RW2, AR(2), GMRF по расстояниям, Besag и BYM."""

import math

import numpy as np
import pytest
from pydantic import ValidationError
from scipy.linalg import toeplitz
from scipy.spatial.distance import cdist
from scipy.stats import multivariate_normal, norm

from src.exceptions import ContractError, DomainError, ModelSpecificationError
from src.services.latent_components import (
    Ar2Spec,
    BymConvention,
    BymSpec,
    BymStructure,
    DistanceGmrfSpec,
    DistanceStructure,
    Rw2Spec,
    ar2_autocovariance,
    ar2_log_density,
    ar2_precision_matrix,
    besag_precision,
    bym_covariance,
    distance_covariance,
    distance_precision_factor,
    generalized_inverse,
    is_connected,
    largest_eigenvalue,
    rw2_log_density,
    rw2_quadratic_form,
    scale_besag,
    sum_to_zero_penalty,
)

RTOL = 1e-8
ATOL = 1e-9

PATH4 = [[1], [0, 2], [1, 3], [2]]
COMPLETE4 = [[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]]
# 2x3 сетка с соседством по сторонам
GRID6 = [[1, 3], [0, 2, 4], [1, 5], [0, 4], [1, 3, 5], [2, 4]]


def second_difference_matrix(T: int) -> np.ndarray:
    """R = DᵀD, собранная по стенсилу (1, −2, 1) поэлементно."""
    D = np.zeros((T - 2, T))
    for t in range(T - 2):
        D[t, t], D[t, t + 1], D[t, t + 2] = 1.0, -2.0, 1.0
    return D.T @ D


def yule_walker_autocovariance(psi1: float, psi2: float, tau: float, T: int) -> np.ndarray:
    """Автоковариации AR(2) по коэффициентам лагов (учебная формула для γ₀)."""
    a1, a2 = psi1 * (1.0 - psi2), psi2
    sigma2 = 1.0 / tau
    gamma = np.empty(T)
    gamma[0] = (1.0 - a2) * sigma2 / ((1.0 + a2) * ((1.0 - a2) ** 2 - a1 ** 2))
    gamma[1] = a1 * gamma[0] / (1.0 - a2)
    for k in range(2, T):
        gamma[k] = a1 * gamma[k - 1] + a2 * gamma[k - 2]
    return gamma


class TestRw2:

    def test_three_day_example(self):
        assert rw2_quadratic_form([0.0, 1.0, 0.0], Rw2Spec(T=3, tau_delta=0.5)) == pytest.approx(-1.0)

    def test_matches_dense_structure_matrix(self, rng):
        T, tau = 50, 3.7
        delta = rng.standard_normal(T)
        R = second_difference_matrix(T)
        expected = -0.5 * tau * delta @ R @ delta
        assert rw2_quadratic_form(delta, Rw2Spec(T=T, tau_delta=tau)) == pytest.approx(expected, rel=1e-12)

    def test_log_density_normalizing_constant(self, rng):
        T, tau = 20, 12.0
        delta = rng.standard_normal(T)
        expected = 0.5 * (T - 2) * (math.log(tau) - math.log(2 * math.pi)) - 0.5 * tau * np.sum(np.diff(delta, 2) ** 2)
        assert rw2_log_density(delta, tau) == pytest.approx(expected, rel=1e-12)

    def test_invariant_to_linear_trends(self, rng):
        T = 30
        delta = rng.standard_normal(T)
        trend = 2.5 - 0.3 * np.arange(T)
        spec = Rw2Spec(T=T, tau_delta=8.0)
        assert rw2_quadratic_form(delta + trend, spec) == pytest.approx(rw2_quadratic_form(delta, spec), rel=1e-10)
        assert rw2_quadratic_form(trend, spec) == pytest.approx(0.0, abs=1e-10)

    def test_rejects_length_mismatch(self):
        with pytest.raises(ContractError):
            rw2_quadratic_form(np.zeros(4), Rw2Spec(T=5, tau_delta=1.0))

    def test_needs_three_days(self):
        with pytest.raises(ValidationError):
            Rw2Spec(T=2, tau_delta=1.0)


class TestAr2:

    def test_ar1_special_case(self):
        psi1, tau = 0.7, 4.0
        gamma = ar2_autocovariance(psi1, 0.0, tau, 6)
        gamma0 = 1.0 / (tau * (1.0 - psi1 ** 2))
        np.testing.assert_allclose(gamma, gamma0 * psi1 ** np.arange(6), rtol=1e-12)

    def test_white_noise(self, rng):
        tau = 2.5
        eps = rng.standard_normal(25)
        expected = norm.logpdf(eps, scale=1.0 / math.sqrt(tau)).sum()
        assert ar2_log_density(eps, Ar2Spec(psi1=0.0, psi2=0.0, tau_eps=tau)) == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("psi1,psi2", [(0.632, -0.932), (0.3, 0.2), (-0.8, 0.5)])
    def test_matches_dense_gaussian(self, psi1, psi2, rng):
        T, tau = 200, 7.0
        cov = toeplitz(yule_walker_autocovariance(psi1, psi2, tau, T))
        eps = rng.multivariate_normal(np.zeros(T), cov)
        expected = multivariate_normal(mean=np.zeros(T), cov=cov).logpdf(eps)
        ours = ar2_log_density(eps, Ar2Spec(psi1=psi1, psi2=psi2, tau_eps=tau))
        assert ours == pytest.approx(expected, rel=RTOL)

    @pytest.mark.parametrize("psi1,psi2", [(0.632, -0.932), (0.5, 0.4), (-0.2, -0.6)])
    def test_autocovariance_solves_yule_walker(self, psi1, psi2):
        np.testing.assert_allclose(
            ar2_autocovariance(psi1, psi2, 3.0, 40),
            yule_walker_autocovariance(psi1, psi2, 3.0, 40),
            rtol=1e-10, atol=1e-14
        )

    def test_precision_inverts_covariance(self):
        T = 60
        Q = ar2_precision_matrix(0.632, -0.932, 2.0, T)
        cov = toeplitz(ar2_autocovariance(0.632, -0.932, 2.0, T))
        np.testing.assert_allclose(Q @ cov, np.eye(T), atol=1e-8)

    @pytest.mark.parametrize("psi1,psi2", [(1.0, 0.0), (0.0, -1.0), (1.2, 0.3)])
    def test_rejects_nonstationary_values(self, psi1, psi2):
        with pytest.raises(DomainError):
            ar2_autocovariance(psi1, psi2, 1.0, 10)
        with pytest.raises(DomainError):
            ar2_precision_matrix(psi1, psi2, 1.0, 10)


class TestDistanceGmrf:

    @pytest.fixture
    def points(self, rng) -> np.ndarray:
        return rng.uniform(0.0, 500.0, size=(10, 2))

    def test_independent_when_omega_is_zero(self, points):
        cov = distance_covariance(DistanceGmrfSpec(C=cdist(points, points), omega=0.0, tau_zeta=4.0))
        np.testing.assert_allclose(cov, np.eye(10) / 4.0, atol=1e-15)

    def test_two_region_closed_form(self):
        c, omega, tau = 250.0, 0.6, 2.0
        C = np.array([[0.0, c], [c, 0.0]])
        cov = distance_covariance(DistanceGmrfSpec(C=C, omega=omega, tau_zeta=tau))
        assert cov[0, 1] == pytest.approx(omega / (tau * (1.0 - omega ** 2)), rel=1e-12)
        assert cov[0, 0] == pytest.approx(1.0 / (tau * (1.0 - omega ** 2)), rel=1e-12)

    def test_covariance_inverts_precision(self, points):
        C = cdist(points, points)
        cov = distance_covariance(DistanceGmrfSpec(C=C, omega=0.8, tau_zeta=3.0))
        Q = DistanceStructure(C).precision(0.8, 3.0)
        np.testing.assert_allclose(Q @ cov, np.eye(10), atol=1e-9)

    def test_log_density_matches_dense_gaussian(self, points, rng):
        C = cdist(points, points)
        cov = distance_covariance(DistanceGmrfSpec(C=C, omega=0.45, tau_zeta=6.0))
        zeta = rng.multivariate_normal(np.zeros(10), cov)
        expected = multivariate_normal(mean=np.zeros(10), cov=cov).logpdf(zeta)
        assert DistanceStructure(C).log_density(zeta, 0.45, 6.0) == pytest.approx(expected, rel=1e-10)

    def test_failed_definiteness_check_reports_omega_and_eigenvalue(self, points):
        C = cdist(points, points)
        with pytest.raises(ModelSpecificationError) as info:
            distance_precision_factor(C, 1.5, largest_eigenvalue(C))
        assert info.value.omega == 1.5
        assert info.value.eigenvalue == pytest.approx(-0.5, abs=1e-9)

    def test_spec_rejects_omega_of_one(self, points):
        with pytest.raises(ValidationError):
            DistanceGmrfSpec(C=cdist(points, points), omega=1.0, tau_zeta=1.0)

    def test_structure_rejects_invalid_omega(self, points):
        with pytest.raises(DomainError):
            DistanceStructure(cdist(points, points)).log_density(np.zeros(10), 1.0, 1.0)


class TestBesag:

    def test_path_graph(self):
        Q = besag_precision([[1], [0, 2], [1]])
        np.testing.assert_array_equal(Q, [[1, -1, 0], [-1, 2, -1], [0, -1, 1]])

    def test_complete_graph(self):
        np.testing.assert_array_equal(besag_precision(COMPLETE4), 4.0 * np.eye(4) - np.ones((4, 4)))

    @pytest.mark.parametrize("adjacency", [PATH4, COMPLETE4, GRID6])
    def test_rows_sum_to_zero(self, adjacency):
        np.testing.assert_array_equal(besag_precision(adjacency).sum(axis=1), 0.0)

    def test_rejects_asymmetric_adjacency(self):
        with pytest.raises(ContractError):
            besag_precision([[1], []])

    def test_connectivity(self):
        assert is_connected(GRID6)
        assert not is_connected([[1], [0], [3], [2]])


class TestGeneralizedInverse:

    @pytest.mark.parametrize("adjacency", [PATH4, COMPLETE4, GRID6])
    def test_moore_penrose_identities(self, adjacency):
        Q = besag_precision(adjacency)
        G = generalized_inverse(Q)
        np.testing.assert_allclose(Q @ G @ Q, Q, atol=ATOL)
        np.testing.assert_allclose(G @ Q @ G, G, atol=ATOL)
        np.testing.assert_allclose(G, G.T, atol=1e-14)
        np.testing.assert_allclose(G @ np.ones(len(adjacency)), 0.0, atol=ATOL)

    def test_ridge_limit(self):
        Q = besag_precision(GRID6)
        m, eps = 6, 1e-5
        ridge = np.linalg.inv(Q + eps * np.eye(m)) - np.ones((m, m)) / (m * eps)
        np.testing.assert_allclose(generalized_inverse(Q), ridge, atol=1e-4)

    def test_rejects_non_symmetric(self):
        with pytest.raises(ContractError):
            generalized_inverse(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_scaling_gives_unit_geometric_mean(self):
        scaled = scale_besag(generalized_inverse(besag_precision(GRID6)))
        assert math.exp(np.mean(np.log(np.diag(scaled)))) == pytest.approx(1.0, rel=1e-12)
        np.testing.assert_allclose(scale_besag(scaled), scaled, rtol=1e-12)

    def test_scaling_rejects_zero_diagonal(self):
        with pytest.raises(ContractError):
            scale_besag(np.diag([1.0, 0.0, 2.0]))


class TestBym:

    @pytest.fixture
    def q_minus(self) -> np.ndarray:
        return scale_besag(generalized_inverse(besag_precision(GRID6)))

    def test_endpoints_as_printed(self, q_minus):
        at_zero = bym_covariance(BymSpec(adjacency=GRID6, phi_bym=0.0, tau_xi=2.0), q_minus)
        at_one = bym_covariance(BymSpec(adjacency=GRID6, phi_bym=1.0, tau_xi=2.0), q_minus)
        np.testing.assert_allclose(at_zero, q_minus / 2.0, atol=1e-15)
        np.testing.assert_allclose(at_one, np.eye(6) / 2.0, atol=1e-15)

    def test_endpoints_swap_under_alternative_convention(self, q_minus):
        spec = BymSpec(adjacency=GRID6, phi_bym=1.0, tau_xi=1.0, convention=BymConvention.RIEBLER)
        np.testing.assert_allclose(bym_covariance(spec, q_minus), q_minus, atol=1e-15)

    @pytest.mark.parametrize("phi_bym", [0.0, 0.3, 1.0])
    def test_positive_semidefinite(self, q_minus, phi_bym):
        cov = bym_covariance(BymSpec(adjacency=GRID6, phi_bym=phi_bym, tau_xi=3.0), q_minus)
        assert np.linalg.eigvalsh(cov).min() > -1e-12

    def test_log_density_matches_dense_gaussian(self, q_minus, rng):
        cov = bym_covariance(BymSpec(adjacency=GRID6, phi_bym=0.5, tau_xi=4.0), q_minus)
        xi = rng.multivariate_normal(np.zeros(6), cov)
        expected = multivariate_normal(mean=np.zeros(6), cov=cov).logpdf(xi)
        structure = BymStructure(GRID6, scale=True, convention=BymConvention.AS_PRINTED)
        assert structure.log_density(xi, 0.5, 4.0) == pytest.approx(expected, rel=1e-10)

    def test_purely_structured_field_ignores_constant_shift(self, rng):
        structure = BymStructure(GRID6)
        xi = rng.standard_normal(6)
        assert structure.log_density(xi + 3.0, 0.0, 2.0) == pytest.approx(structure.log_density(xi, 0.0, 2.0), rel=1e-10)

    def test_precision_is_pseudo_inverse_of_covariance(self):
        structure = BymStructure(GRID6)
        cov = structure.covariance(0.3, 2.0)
        np.testing.assert_allclose(cov @ structure.precision(0.3, 2.0), np.eye(6), atol=1e-9)

    def test_rejects_out_of_range_mixing(self):
        with pytest.raises(DomainError):
            BymStructure(GRID6).log_density(np.zeros(6), 1.2, 1.0)


class TestSumToZero:

    def test_penalty(self):
        assert sum_to_zero_penalty(np.array([1.0, 2.0, -1.0]), precision=4.0) == pytest.approx(-8.0)

    def test_zero_for_centered_vectors(self, rng):
        x = rng.standard_normal(9)
        assert sum_to_zero_penalty(x - x.mean()) == pytest.approx(0.0, abs=1e-12)
