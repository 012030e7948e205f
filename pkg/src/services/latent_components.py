#!/usr/bin/env python3
"""
Latent Components - структурированные латентные компоненты модели риска.

RW2-тренд δ, AR(2)-корреляция ε, GMRF по матрице расстояний ζ и
масштабированная BYM-компонента ξ: построители матриц и лог-плотности.
"""

import math
from enum import Enum
from typing import List, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.linalg import cho_solve, cholesky, eigh, LinAlgError
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from src.config import ModelConfig
from src.exceptions import ContractError, DomainError, ModelSpecificationError
from src.utils.logger import get_logger

logger = get_logger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


class BymConvention(str, Enum):
    """Куда ставится вес смешивания φ в Var(ξ)."""
    AS_PRINTED = "as_printed"  # (1−φ)Q⁻ + φI
    RIEBLER = "riebler"  # φQ⁻ + (1−φ)I


# ===========================================
# Спецификации компонент
# ===========================================

class Rw2Spec(BaseModel):
    """Случайное блуждание второго порядка."""
    model_config = ConfigDict(frozen=True)

    T: int = Field(ge=3)
    tau_delta: float = Field(gt=0)


class Ar2Spec(BaseModel):
    """Стационарный AR(2) в частных автокорреляциях."""
    model_config = ConfigDict(frozen=True)

    psi1: float = Field(gt=-1, lt=1)
    psi2: float = Field(gt=-1, lt=1)
    tau_eps: float = Field(gt=0)


class DistanceGmrfSpec(BaseModel):
    """GMRF с ковариацией (1/τ_ζ)(I − (ω/e_max)C)⁻¹."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    C: np.ndarray
    omega: float = Field(ge=0, lt=1)
    tau_zeta: float = Field(gt=0)

    @field_validator('C')
    @classmethod
    def validate_matrix(cls, v):
        v = np.asarray(v, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError("C must be a square matrix")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("C must be finite and nonnegative")
        if not np.allclose(v, v.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(v).max())):
            raise ValueError("C must be symmetric")
        return v


class BymSpec(BaseModel):
    """Масштабированная модель Besag-York-Mollié."""
    model_config = ConfigDict(frozen=True)

    adjacency: List[List[int]]
    phi_bym: float = Field(ge=0, le=1)
    tau_xi: float = Field(gt=0)
    convention: BymConvention = BymConvention.AS_PRINTED

    @model_validator(mode='after')
    def validate_adjacency(self):
        _check_adjacency(self.adjacency)
        return self


# ===========================================
# RW2
# ===========================================

def rw2_structure_matrix(T: int) -> np.ndarray:
    """Матрица R = DᵀD со стенсилом вторых разностей (1, −2, 1), ранг T−2."""
    D = np.diff(np.eye(T), n=2, axis=0)
    return D.T @ D


def rw2_quadratic_form(delta: ArrayLike, spec: Rw2Spec) -> float:
    """
    Лог-плотность RW2 с точностью до константы: −(τ/2)·Σ(δ_{t+1} − 2δ_t + δ_{t−1})².

    Raises:
        ContractError: длина δ не равна T
    """
    delta = np.asarray(delta, dtype=float)
    if delta.shape != (spec.T,):
        raise ContractError(f"delta has shape {delta.shape}, expected ({spec.T},)")
    second = np.diff(delta, n=2)
    return float(-0.5 * spec.tau_delta * np.dot(second, second))


def rw2_log_density(delta: np.ndarray, tau: float) -> float:
    """Обобщённая плотность RW2 ранга T−2 (без псевдоопределителя R)."""
    second = np.diff(delta, n=2)
    rank = delta.size - 2
    return 0.5 * rank * (math.log(tau) - LOG_2PI) - 0.5 * tau * float(np.dot(second, second))


# ===========================================
# AR(2)
# ===========================================

def _check_ar2(psi1: float, psi2: float, tau: float) -> None:
    if not (-1.0 < psi1 < 1.0 and -1.0 < psi2 < 1.0):
        raise DomainError(f"AR(2) partial autocorrelations must lie in (-1, 1): psi1={psi1}, psi2={psi2}")
    if not (tau > 0 and math.isfinite(tau)):
        raise DomainError(f"AR(2) innovation precision must be positive and finite: {tau}")


def ar2_coefficients(psi1: float, psi2: float) -> Tuple[float, float]:
    """Коэффициенты лагов a1 = ψ1(1−ψ2), a2 = ψ2."""
    return psi1 * (1.0 - psi2), psi2


def ar2_autocovariance(psi1: float, psi2: float, tau: float, T: int) -> np.ndarray:
    """
    Автоковариации γ_0..γ_{T−1} по рекурсии Юла–Уокера.

    γ_0 = 1/(τ(1−ψ1²)(1−ψ2²)), γ_1 = ψ1·γ_0, γ_k = a1·γ_{k−1} + a2·γ_{k−2}.
    """
    _check_ar2(psi1, psi2, tau)
    a1, a2 = ar2_coefficients(psi1, psi2)
    gamma = np.empty(max(T, 2))
    gamma[0] = 1.0 / (tau * (1.0 - psi1 ** 2) * (1.0 - psi2 ** 2))
    gamma[1] = psi1 * gamma[0]
    for k in range(2, T):
        gamma[k] = a1 * gamma[k - 1] + a2 * gamma[k - 2]
    return gamma[:T]


def ar2_precision_matrix(psi1: float, psi2: float, tau: float, T: int) -> np.ndarray:
    """Точная матрица точности стационарного AR(2) длины T (ленточная)."""
    gamma = ar2_autocovariance(psi1, psi2, tau, max(T, 2))
    if T == 1:
        return np.array([[1.0 / gamma[0]]])
    a1, a2 = ar2_coefficients(psi1, psi2)
    Q = np.zeros((T, T))
    Q[:2, :2] = np.linalg.inv(np.array([[gamma[0], gamma[1]], [gamma[1], gamma[0]]]))
    if T > 2:
        A = np.zeros((T - 2, T))
        rows = np.arange(T - 2)
        A[rows, rows + 2] = 1.0
        A[rows, rows + 1] = -a1
        A[rows, rows] = -a2
        Q += tau * A.T @ A
    return Q


def ar2_log_density_values(eps: np.ndarray, psi1: float, psi2: float, tau: float) -> float:
    """
    Точная стационарная лог-плотность AR(2).

    Первые два значения - из стационарного двумерного маргинала,
    далее условная рекурсия с точностью инноваций τ.

    Raises:
        DomainError: |ψ| ≥ 1 или τ ≤ 0
    """
    _check_ar2(psi1, psi2, tau)
    eps = np.asarray(eps, dtype=float)
    T = eps.size
    g0 = 1.0 / (tau * (1.0 - psi1 ** 2) * (1.0 - psi2 ** 2))
    if T == 1:
        return -0.5 * (LOG_2PI + math.log(g0) + eps[0] ** 2 / g0)

    g1 = psi1 * g0
    det = g0 * g0 - g1 * g1
    e1, e2 = eps[0], eps[1]
    quad = (g0 * e1 * e1 - 2.0 * g1 * e1 * e2 + g0 * e2 * e2) / det
    value = -LOG_2PI - 0.5 * math.log(det) - 0.5 * quad

    if T > 2:
        a1, a2 = ar2_coefficients(psi1, psi2)
        resid = eps[2:] - a1 * eps[1:-1] - a2 * eps[:-2]
        value += 0.5 * (T - 2) * (math.log(tau) - LOG_2PI) - 0.5 * tau * float(np.dot(resid, resid))
    return float(value)


def ar2_log_density(eps: ArrayLike, spec: Ar2Spec) -> float:
    """Лог-плотность AR(2) по спецификации."""
    return ar2_log_density_values(np.asarray(eps, dtype=float), spec.psi1, spec.psi2, spec.tau_eps)


# ===========================================
# GMRF по расстояниям
# ===========================================

def largest_eigenvalue(C: np.ndarray) -> float:
    """e_max - наибольшее собственное значение симметричной C."""
    return float(np.linalg.eigvalsh(C)[-1])


def distance_precision_factor(C: np.ndarray, omega: float, e_max: float) -> np.ndarray:
    """
    Холецкий-фактор I − (ω/e_max)C с проверкой положительной определённости.

    Raises:
        ModelSpecificationError: матрица не положительно определена
    """
    m = C.shape[0]
    K = np.eye(m) - (omega / e_max) * C if e_max > 0 else np.eye(m)
    try:
        return cholesky(K, lower=True)
    except LinAlgError:
        worst = float(np.linalg.eigvalsh(K)[0])
        raise ModelSpecificationError(
            f"I - (omega/e_max)C is not positive definite at omega={omega}: "
            f"smallest eigenvalue {worst:.6g}",
            omega=omega,
            eigenvalue=worst
        )


def distance_covariance(spec: DistanceGmrfSpec) -> np.ndarray:
    """
    Ковариация (1/τ_ζ)·(I − (ω/e_max)C)⁻¹.

    Raises:
        ModelSpecificationError: проверка положительной определённости не пройдена
    """
    C = spec.C
    L = distance_precision_factor(C, spec.omega, largest_eigenvalue(C))
    cov = cho_solve((L, True), np.eye(C.shape[0])) / spec.tau_zeta
    return 0.5 * (cov + cov.T)


class DistanceStructure:
    """Предвычисленная структура GMRF по расстояниям (C и e_max)."""

    def __init__(self, C: np.ndarray):
        self.C = np.asarray(C, dtype=float)
        self.m = self.C.shape[0]
        self.e_max = largest_eigenvalue(self.C) if self.m > 1 else 0.0

    def precision(self, omega: float, tau: float) -> np.ndarray:
        """Матрица точности τ(I − (ω/e_max)C)."""
        base = np.eye(self.m)
        if self.e_max > 0:
            base = base - (omega / self.e_max) * self.C
        return tau * base

    def log_density(self, zeta: np.ndarray, omega: float, tau: float) -> float:
        """
        Гауссова лог-плотность ζ; Холецкий-разложение проверяет ω на каждом вызове.

        Raises:
            ModelSpecificationError: I − (ω/e_max)C не положительно определена
        """
        if not (0.0 <= omega < 1.0) or not (tau > 0 and math.isfinite(tau)):
            raise DomainError(f"invalid distance GMRF parameters: omega={omega}, tau={tau}")
        L = distance_precision_factor(self.C, omega, self.e_max)
        base = np.eye(self.m) - (omega / self.e_max) * self.C if self.e_max > 0 else np.eye(self.m)
        log_det = self.m * math.log(tau) + 2.0 * float(np.log(np.diag(L)).sum())
        quad = tau * float(zeta @ base @ zeta)
        return 0.5 * (log_det - self.m * LOG_2PI - quad)


# ===========================================
# Besag / BYM
# ===========================================

def _check_adjacency(adjacency: Sequence[Sequence[int]]) -> None:
    m = len(adjacency)
    for i, neighbors in enumerate(adjacency):
        for j in neighbors:
            if not (0 <= j < m):
                raise ContractError(f"region {i} lists unknown neighbor index {j}")
            if j == i:
                raise ContractError(f"region {i} lists itself as a neighbor")
            if i not in adjacency[j]:
                raise ContractError(f"adjacency is not symmetric: {i}~{j} but not {j}~{i}")


def is_connected(adjacency: Sequence[Sequence[int]]) -> bool:
    """Связность графа соседства."""
    m = len(adjacency)
    rows = [i for i, nb in enumerate(adjacency) for _ in nb]
    cols = [j for nb in adjacency for j in nb]
    graph = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(m, m))
    n_components, _ = connected_components(graph, directed=False)
    return n_components == 1


def besag_precision(adjacency: Sequence[Sequence[int]]) -> np.ndarray:
    """
    Матрица Q: Q_ii = n_i, Q_ii′ = −1 для соседей, 0 иначе.

    Raises:
        ContractError: несимметричное соседство или петли
    """
    _check_adjacency(adjacency)
    m = len(adjacency)
    Q = np.zeros((m, m))
    for i, neighbors in enumerate(adjacency):
        for j in set(neighbors):
            Q[i, j] = -1.0
        Q[i, i] = float(len(set(neighbors)))
    return Q


def generalized_inverse(Q: np.ndarray, rel_cutoff: float = ModelConfig.PINV_RELATIVE_CUTOFF) -> np.ndarray:
    """
    Псевдообратная Мура–Пенроуза через спектральное разложение.

    Собственные значения ниже rel_cutoff·max|λ| считаются нулевыми.

    Raises:
        ContractError: Q не симметрична
    """
    Q = np.asarray(Q, dtype=float)
    scale = max(1.0, float(np.abs(Q).max())) if Q.size else 1.0
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or not np.allclose(Q, Q.T, rtol=0.0, atol=1e-12 * scale):
        raise ContractError("generalized inverse requires a symmetric matrix")
    values, vectors = eigh(Q)
    cutoff = rel_cutoff * max(float(np.abs(values).max()), 0.0)
    inv_values = np.zeros_like(values)
    keep = np.abs(values) > cutoff
    inv_values[keep] = 1.0 / values[keep]
    result = (vectors * inv_values) @ vectors.T
    return 0.5 * (result + result.T)


def scale_besag(q_minus: np.ndarray) -> np.ndarray:
    """
    Масштабирование Q⁻ делением на геометрическое среднее диагонали.

    Raises:
        ContractError: нулевой (или отрицательный) диагональный элемент
    """
    diag = np.diag(q_minus)
    if np.any(diag <= 0):
        raise ContractError(
            "scaled BYM requires positive marginal variances; "
            "a region without neighbors yields a zero diagonal entry"
        )
    return q_minus / math.exp(float(np.mean(np.log(diag))))


def bym_mixture_weights(phi_bym: float, convention: BymConvention) -> Tuple[float, float]:
    """Веса (структурный, неструктурный) смеси в Var(ξ)."""
    if not (0.0 <= phi_bym <= 1.0):
        raise DomainError(f"phi_bym must lie in [0, 1]: {phi_bym}")
    if BymConvention(convention) == BymConvention.AS_PRINTED:
        return 1.0 - phi_bym, phi_bym
    return phi_bym, 1.0 - phi_bym


def bym_covariance(spec: BymSpec, q_minus: np.ndarray) -> np.ndarray:
    """
    Var(ξ) = (1/τ_ξ)((1−φ)Q⁻ + φI) в печатной конвенции.

    Raises:
        DomainError: φ_bym вне [0, 1]
    """
    w_struct, w_iid = bym_mixture_weights(spec.phi_bym, spec.convention)
    m = q_minus.shape[0]
    return (w_struct * np.asarray(q_minus, dtype=float) + w_iid * np.eye(m)) / spec.tau_xi


class BymStructure:
    """Предвычисленный спектр (масштабированной) Q⁻ для быстрых плотностей ξ."""

    def __init__(
        self,
        adjacency: Sequence[Sequence[int]],
        scale: bool = ModelConfig.SCALE_BESAG,
        convention: BymConvention = BymConvention(ModelConfig.BYM_CONVENTION)
    ):
        self.m = len(adjacency)
        self.convention = BymConvention(convention)
        self.Q = besag_precision(adjacency)
        if not is_connected(adjacency):
            logger.warning("Neighborhood graph is not connected; Q has more than one null direction")
        q_minus = generalized_inverse(self.Q)
        self.q_minus = scale_besag(q_minus) if scale else q_minus
        values, self.vectors = eigh(self.q_minus)
        self.values = np.clip(values, 0.0, None)
        self.values[values < ModelConfig.PINV_RELATIVE_CUTOFF * max(values.max(), 1e-300)] = 0.0

    def covariance_eigenvalues(self, phi_bym: float, tau: float) -> np.ndarray:
        """Собственные значения Var(ξ) в базисе собственных векторов Q⁻."""
        w_struct, w_iid = bym_mixture_weights(phi_bym, self.convention)
        return (w_struct * self.values + w_iid) / tau

    def covariance(self, phi_bym: float, tau: float) -> np.ndarray:
        sigma = self.covariance_eigenvalues(phi_bym, tau)
        return (self.vectors * sigma) @ self.vectors.T

    def precision(self, phi_bym: float, tau: float) -> np.ndarray:
        """Псевдообратная к Var(ξ)."""
        sigma = self.covariance_eigenvalues(phi_bym, tau)
        inv = np.zeros_like(sigma)
        keep = sigma > ModelConfig.PINV_RELATIVE_CUTOFF * sigma.max()
        inv[keep] = 1.0 / sigma[keep]
        return (self.vectors * inv) @ self.vectors.T

    def log_density(self, xi: np.ndarray, phi_bym: float, tau: float) -> float:
        """Гауссова плотность ξ на подпространстве положительных собственных значений."""
        if not (tau > 0 and math.isfinite(tau)):
            raise DomainError(f"BYM precision must be positive and finite: {tau}")
        sigma = self.covariance_eigenvalues(phi_bym, tau)
        keep = sigma > ModelConfig.PINV_RELATIVE_CUTOFF * sigma.max()
        u = self.vectors.T @ xi
        return -0.5 * float(np.sum(LOG_2PI + np.log(sigma[keep]) + u[keep] ** 2 / sigma[keep]))


def sum_to_zero_penalty(x: np.ndarray, precision: float = ModelConfig.SUM_TO_ZERO_PRECISION) -> float:
    """Мягкое ограничение Σx = 0: −(κ/2)(Σx)²."""
    total = float(np.sum(x))
    return -0.5 * precision * total * total
