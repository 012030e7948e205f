#!/usr/bin/env python3
"""
Гиперпараметры модели, их преобразования и априорные распределения.

Двенадцать скаляров (φ, α, μ, β, τ_δ, τ_ε, ψ1, ψ2, τ_ζ, ω, τ_ξ, φ_bym)
в естественной и преобразованной шкалах. Априорные распределения -
независимые гауссовы на преобразованной шкале, без якобиана.
"""

import math
from enum import Enum
from typing import Dict, Tuple

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.special import expit

from src.exceptions import DomainError
from src.utils.logger import get_logger

logger = get_logger(__name__)

PARAM_NAMES: Tuple[str, ...] = (
    "phi", "alpha", "mu", "beta",
    "tau_delta", "tau_eps", "psi1", "psi2",
    "tau_zeta", "omega", "tau_xi", "phi_bym",
)
N_PARAMS = len(PARAM_NAMES)
PARAM_INDEX: Dict[str, int] = {name: i for i, name in enumerate(PARAM_NAMES)}

# Обозначения строк итоговой таблицы
PARAM_SYMBOLS: Dict[str, str] = {
    "phi": "φ", "alpha": "α", "mu": "μ", "beta": "β",
    "tau_delta": "τ_δ", "tau_eps": "τ_ε", "psi1": "ψ₁", "psi2": "ψ₂",
    "tau_zeta": "τ_ζ", "omega": "ω", "tau_xi": "τ_ξ", "phi_bym": "φ_bym",
}

PRECISION_NAMES: Tuple[str, ...] = ("tau_delta", "tau_eps", "tau_zeta", "tau_xi")


class Transform(str, Enum):
    """Преобразование параметра на всю числовую прямую."""
    IDENTITY = "identity"
    LOG = "log"  # log x
    LOGIT = "logit"  # log x/(1−x)
    FISHER = "fisher"  # log (1+x)/(1−x)


class HyperParams(BaseModel):
    """Гиперпараметры модели в естественной шкале."""
    model_config = ConfigDict(frozen=True)

    phi: float = Field(ge=0)
    alpha: float
    mu: float
    beta: float
    tau_delta: float = Field(gt=0)
    tau_eps: float = Field(gt=0)
    psi1: float = Field(gt=-1, lt=1)
    psi2: float = Field(gt=-1, lt=1)
    tau_zeta: float = Field(gt=0)
    omega: float = Field(ge=0, lt=1)
    tau_xi: float = Field(gt=0)
    phi_bym: float = Field(ge=0, le=1)

    @field_validator('phi', 'alpha', 'mu', 'beta', 'psi1', 'psi2', 'omega', 'phi_bym')
    @classmethod
    def validate_finite(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError("value must be finite")
        return v

    def as_array(self) -> np.ndarray:
        """Значения в порядке PARAM_NAMES."""
        return np.array([getattr(self, name) for name in PARAM_NAMES], dtype=float)

    @classmethod
    def from_array(cls, values: ArrayLike) -> "HyperParams":
        values = np.asarray(values, dtype=float)
        return cls(**{name: float(values[i]) for i, name in enumerate(PARAM_NAMES)})

    def replace(self, **changes: float) -> "HyperParams":
        """Копия с изменёнными полями (с валидацией)."""
        return HyperParams(**{**self.model_dump(), **changes})


# ===========================================
# Преобразования
# ===========================================

def forward(transform: Transform, x: ArrayLike) -> np.ndarray:
    """
    Естественная шкала -> ℝ.

    Raises:
        DomainError: значение на границе или вне области преобразования
    """
    x = np.asarray(x, dtype=float)
    if transform == Transform.IDENTITY:
        if not np.all(np.isfinite(x)):
            raise DomainError("identity-transformed value must be finite")
        return x.copy()
    if transform == Transform.LOG:
        if not np.all((x > 0) & np.isfinite(x)):
            raise DomainError(f"log transform requires 0 < x < inf: {x}")
        return np.log(x)
    if transform == Transform.LOGIT:
        if not np.all((x > 0) & (x < 1)):
            raise DomainError(f"logit transform requires 0 < x < 1: {x}")
        return np.log(x) - np.log1p(-x)
    if not np.all((x > -1) & (x < 1)):
        raise DomainError(f"interval transform requires -1 < x < 1: {x}")
    return np.log1p(x) - np.log1p(-x)


def inverse(transform: Transform, v: ArrayLike) -> np.ndarray:
    """
    ℝ -> естественная шкала.

    Raises:
        DomainError: результат попадает на границу в арифметике double
    """
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise DomainError("unconstrained value must be finite")
    if transform == Transform.IDENTITY:
        return v.copy()
    if transform == Transform.LOG:
        with np.errstate(over='ignore', under='ignore'):
            x = np.exp(v)
        if not np.all((x > 0) & np.isfinite(x)):
            raise DomainError(f"exp({v}) is outside the positive finite range")
        return x
    if transform == Transform.LOGIT:
        x = expit(v)
        if not np.all((x > 0) & (x < 1)):
            raise DomainError(f"expit({v}) hits the boundary of (0, 1)")
        return x
    x = np.tanh(0.5 * v)
    if not np.all(np.abs(x) < 1):
        raise DomainError(f"tanh({v}/2) hits the boundary of (-1, 1)")
    return x


# ===========================================
# Априорные распределения
# ===========================================

class PriorTerm(BaseModel):
    """Гауссово априорное распределение одного преобразованного параметра."""
    model_config = ConfigDict(frozen=True)

    transform: Transform
    mean: float = 0.0
    variance: float = Field(default=1e6, gt=0)
    initial: float = 0.0  # начальное значение на преобразованной шкале


DEFAULT_TERMS: Dict[str, PriorTerm] = {
    "phi": PriorTerm(transform=Transform.LOG),
    "alpha": PriorTerm(transform=Transform.IDENTITY, mean=1.5, initial=1.5),
    "mu": PriorTerm(transform=Transform.IDENTITY),
    "beta": PriorTerm(transform=Transform.IDENTITY),
    "tau_delta": PriorTerm(transform=Transform.LOG),
    "tau_eps": PriorTerm(transform=Transform.LOG),
    "psi1": PriorTerm(transform=Transform.FISHER),
    "psi2": PriorTerm(transform=Transform.FISHER),
    "tau_zeta": PriorTerm(transform=Transform.LOG),
    "omega": PriorTerm(transform=Transform.LOGIT),
    "tau_xi": PriorTerm(transform=Transform.LOG),
    "phi_bym": PriorTerm(transform=Transform.LOGIT),
}


class PriorSpec(BaseModel):
    """Набор априорных распределений для всех двенадцати гиперпараметров."""
    model_config = ConfigDict(frozen=True)

    terms: Dict[str, PriorTerm] = Field(default_factory=lambda: dict(DEFAULT_TERMS))

    @model_validator(mode='after')
    def validate_terms(self):
        missing = set(PARAM_NAMES) - set(self.terms)
        extra = set(self.terms) - set(PARAM_NAMES)
        if missing or extra:
            raise ValueError(f"prior terms mismatch: missing={sorted(missing)}, unknown={sorted(extra)}")
        return self

    @property
    def means(self) -> np.ndarray:
        return np.array([self.terms[n].mean for n in PARAM_NAMES])

    @property
    def variances(self) -> np.ndarray:
        return np.array([self.terms[n].variance for n in PARAM_NAMES])

    @property
    def transforms(self) -> Tuple[Transform, ...]:
        return tuple(self.terms[n].transform for n in PARAM_NAMES)

    def with_term(self, name: str, **changes) -> "PriorSpec":
        """Копия с изменённым распределением одного параметра."""
        if name not in PARAM_INDEX:
            raise KeyError(name)
        terms = dict(self.terms)
        terms[name] = PriorTerm(**{**terms[name].model_dump(), **changes})
        return PriorSpec(terms=terms)


def to_unconstrained(h: HyperParams, spec: PriorSpec) -> np.ndarray:
    """
    HyperParams -> вектор из ℝ¹² в порядке PARAM_NAMES.

    Raises:
        DomainError: граничное значение (например, ω = 0 или ψ на краю)
    """
    values = h.as_array()
    return np.array([
        float(forward(transform, values[i]))
        for i, transform in enumerate(spec.transforms)
    ])


def unconstrained_to_natural(v: ArrayLike, spec: PriorSpec) -> np.ndarray:
    """Векторное обратное преобразование для массива формы (..., 12)."""
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != N_PARAMS:
        raise DomainError(f"expected {N_PARAMS} unconstrained coordinates, got {v.shape[-1]}")
    out = np.empty_like(v)
    for i, transform in enumerate(spec.transforms):
        out[..., i] = inverse(transform, v[..., i])
    return out


def from_unconstrained(v: ArrayLike, spec: PriorSpec) -> HyperParams:
    """
    Вектор из ℝ¹² -> HyperParams.

    Raises:
        DomainError: нефинитный вход или выход на границу области
    """
    return HyperParams.from_array(unconstrained_to_natural(v, spec))


def log_prior(v: ArrayLike, spec: PriorSpec) -> float:
    """Сумма независимых гауссовых лог-плотностей на преобразованной шкале."""
    v = np.asarray(v, dtype=float)
    var = spec.variances
    resid = v - spec.means
    return float(-0.5 * np.sum(np.log(2.0 * math.pi * var) + resid * resid / var))


def initial_unconstrained(spec: PriorSpec) -> np.ndarray:
    """Начальные значения на преобразованной шкале."""
    return np.array([spec.terms[n].initial for n in PARAM_NAMES])


def initial_values(spec: PriorSpec) -> HyperParams:
    """Начальные значения гиперпараметров (α = 1.5, остальные 0 на преобразованной шкале)."""
    return from_unconstrained(initial_unconstrained(spec), spec)
