#!/usr/bin/env python3
"""
Simulate - генератор синтетических панелей из собственной модели.

Латентные поля выбираются при фиксированных гиперпараметрах, поле риска
строится через risk_model, числа случаев - из обобщённого Пуассона.
Истинные значения возвращаются вместе с панелью.
"""

import math
from datetime import date
from typing import List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.linalg import cholesky

from src.config import ModelConfig
from src.exceptions import ContractError
from src.services.gp_distribution import gp_sample_array
from src.services.latent_components import (
    BymConvention,
    BymStructure,
    DistanceGmrfSpec,
    ar2_autocovariance,
    ar2_coefficients,
    distance_covariance,
    is_connected,
)
from src.services.priors import HyperParams
from src.services.risk_model import (
    CountPanel,
    LatentState,
    Region,
    RegionTable,
    RelativeRiskField,
    expected_counts,
    make_dates,
    relative_risk_field,
    standardized_density,
)
from src.utils.logger import get_logger

logger = get_logger(__name__)

DEFAULT_START = date(2020, 3, 1)

# Истина по умолчанию для синтетических сценариев
DEFAULT_TRUTH = HyperParams(
    phi=0.8, alpha=1.4, mu=-1.0, beta=0.3,
    tau_delta=1000.0, tau_eps=50.0, psi1=0.6, psi2=-0.5,
    tau_zeta=10.0, omega=0.5, tau_xi=10.0, phi_bym=0.5
)


class ScenarioSpec(BaseModel):
    """Сценарий симуляции: геометрия, горизонт, истинные гиперпараметры, seed."""
    model_config = ConfigDict(frozen=True)

    regions: RegionTable
    T: int = Field(ge=3)
    hyper: HyperParams
    seed: int = Field(ge=0)
    incidence_rate: float = Field(default=5e-5, gt=0)
    start_date: date = DEFAULT_START
    center: bool = True  # центрировать δ, ζ, ξ (согласовано с ограничениями суммы)
    bym_convention: BymConvention = BymConvention(ModelConfig.BYM_CONVENTION)
    scale_besag: bool = ModelConfig.SCALE_BESAG

    @model_validator(mode='after')
    def validate_geometry(self):
        if self.regions.m > 1 and not is_connected(self.regions.adjacency):
            raise ValueError("scenario geometry must have a connected neighborhood graph")
        return self


def grid_regions(rows: int, cols: int, seed: int = 0, spacing: float = 100.0) -> RegionTable:
    """
    Прямоугольная сетка регионов с соседством по сторонам.

    Численность и площадь выбираются логнормально (плотности различаются),
    центроиды - узлы сетки с шагом spacing км.
    """
    if rows < 1 or cols < 1 or rows * cols < 2:
        raise ContractError("grid needs at least two regions")
    rng = np.random.default_rng(seed)
    populations = np.round(rng.lognormal(mean=math.log(1e6), sigma=0.6, size=rows * cols))
    areas = np.round(rng.lognormal(mean=math.log(spacing ** 2), sigma=0.4, size=rows * cols), 1)

    def rid(r: int, c: int) -> str:
        return f"R{r * cols + c + 1:02d}"

    regions: List[Region] = []
    for r in range(rows):
        for c in range(cols):
            neighbors = [
                rid(rr, cc)
                for rr, cc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1))
                if 0 <= rr < rows and 0 <= cc < cols
            ]
            k = r * cols + c
            regions.append(Region(
                id=rid(r, c),
                name=f"Region {k + 1}",
                population=float(max(populations[k], 1000.0)),
                area=float(max(areas[k], 1.0)),
                centroid_x=c * spacing,
                centroid_y=r * spacing,
                neighbors=neighbors
            ))
    return RegionTable(regions=regions)


def _finite_sd(tau: float) -> float:
    return 0.0 if math.isinf(tau) else 1.0 / math.sqrt(tau)


def simulate_rw2(T: int, tau: float, rng: np.random.Generator) -> np.ndarray:
    """RW2 с δ₁ = δ₂ = 0 и рекурсией δ_t = 2δ_{t−1} − δ_{t−2} + N(0, 1/τ)."""
    sd = _finite_sd(tau)
    innovations = sd * rng.standard_normal(max(T - 2, 0))
    delta = np.zeros(T)
    for t in range(2, T):
        delta[t] = 2.0 * delta[t - 1] - delta[t - 2] + innovations[t - 2]
    return delta


def simulate_ar2(T: int, psi1: float, psi2: float, tau: float, rng: np.random.Generator) -> np.ndarray:
    """Стационарный AR(2): первые два значения из двумерного маргинала, далее рекурсия."""
    if math.isinf(tau):
        rng.standard_normal(T)
        return np.zeros(T)
    gamma = ar2_autocovariance(psi1, psi2, tau, 2)
    start = cholesky(np.array([[gamma[0], gamma[1]], [gamma[1], gamma[0]]]), lower=True) @ rng.standard_normal(2)
    a1, a2 = ar2_coefficients(psi1, psi2)
    sd = 1.0 / math.sqrt(tau)
    eps = np.zeros(T)
    eps[:min(T, 2)] = start[:min(T, 2)]
    innovations = sd * rng.standard_normal(max(T - 2, 0))
    for t in range(2, T):
        eps[t] = a1 * eps[t - 1] + a2 * eps[t - 2] + innovations[t - 2]
    return eps


def simulate_distance_field(C: np.ndarray, omega: float, tau: float, rng: np.random.Generator) -> np.ndarray:
    """ζ ~ N(0, (1/τ)(I − (ω/e_max)C)⁻¹)."""
    m = C.shape[0]
    z = rng.standard_normal(m)
    if math.isinf(tau):
        return np.zeros(m)
    cov = distance_covariance(DistanceGmrfSpec(C=C, omega=omega, tau_zeta=tau))
    return cholesky(cov, lower=True) @ z


def simulate_bym_field(structure: BymStructure, phi_bym: float, tau: float, rng: np.random.Generator) -> np.ndarray:
    """ξ ~ N(0, Var(ξ)) через спектр Q⁻ (ковариация может быть вырожденной)."""
    z = rng.standard_normal(structure.m)
    if math.isinf(tau):
        return np.zeros(structure.m)
    sigma = structure.covariance_eigenvalues(phi_bym, tau)
    return structure.vectors @ (np.sqrt(sigma) * z)


def simulate_latent(spec: ScenarioSpec, rng: np.random.Generator) -> LatentState:
    """Латентное состояние при истинных гиперпараметрах сценария."""
    h, regions = spec.hyper, spec.regions
    delta = simulate_rw2(spec.T, h.tau_delta, rng)
    eps = simulate_ar2(spec.T, h.psi1, h.psi2, h.tau_eps, rng)
    zeta = simulate_distance_field(regions.distance_matrix(), h.omega, h.tau_zeta, rng)
    structure = BymStructure(regions.adjacency, scale=spec.scale_besag, convention=spec.bym_convention)
    xi = simulate_bym_field(structure, h.phi_bym, h.tau_xi, rng)
    if spec.center:
        delta, zeta, xi = delta - delta.mean(), zeta - zeta.mean(), xi - xi.mean()
    return LatentState(delta=delta, eps=eps, zeta=zeta, xi=xi)


def simulate_panel(spec: ScenarioSpec) -> Tuple[CountPanel, LatentState, RelativeRiskField]:
    """
    Синтетическая панель с известной истиной.

    Returns:
        (CountPanel, LatentState, RelativeRiskField)

    Raises:
        ModelSpecificationError: проверка положительной определённости GMRF не пройдена
    """
    rng = np.random.default_rng(spec.seed)
    latent = simulate_latent(spec, rng)
    E = expected_counts(spec.regions, spec.incidence_rate, spec.T)
    d = standardized_density(spec.regions)
    field = relative_risk_field(spec.hyper, latent, d, E)
    counts = gp_sample_array(rng, field.lam, spec.hyper.phi, spec.hyper.alpha)
    panel = CountPanel(
        region_ids=spec.regions.ids,
        dates=make_dates(spec.start_date, spec.T),
        counts=counts
    )
    logger.info(
        f"Simulated panel m={spec.regions.m}, T={spec.T}, total cases {int(counts.sum())}",
        extra={"seed": spec.seed, "clamped": field.clamped}
    )
    return panel, latent, field
