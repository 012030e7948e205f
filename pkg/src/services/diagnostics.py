#!/usr/bin/env python3
"""
Diagnostics - калибровка апостериорного прогноза.

CPO и PIT по схеме важностного взвешивания выборок полного апостериорного
распределения (веса 1/p(y_it | Λ, φ, α)), нерандомизированная PIT для
счётных данных и гистограмма средней PIT по J корзинам.
"""

from typing import List, Optional, Tuple

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict
from scipy import stats
from scipy.special import logsumexp

from src.config import DiagnosticsConfig
from src.exceptions import ContractError
from src.services.gp_distribution import gp_cdf_array, gp_log_pmf_array
from src.services.inference import PosteriorSamples, posterior_linear_predictor
from src.services.priors import PARAM_INDEX
from src.services.risk_model import CountPanel, RegionTable, RiskModel
from src.utils.logger import get_logger

logger = get_logger(__name__)

# Допуск сравнения cpo и pit в арифметике double
PIT_TOLERANCE = 1e-12


class CalibrationReport(BaseModel):
    """CPO/PIT по ячейкам и гистограмма средней PIT."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    cpo: np.ndarray  # (m, T)
    pit: np.ndarray  # (m, T), PIT_it(y_it)
    pit_below: np.ndarray  # (m, T), PIT_it(y_it − 1)
    max_weight: np.ndarray  # (m, T), наибольший нормированный вес
    histogram: np.ndarray  # (J,)
    flagged: List[Tuple[int, int]]  # ячейки с наименьшими CPO
    unreliable: List[Tuple[int, int]]  # вырожденные веса
    zero_cpo: int
    draws_used: int

    @property
    def bins(self) -> int:
        return self.histogram.size

    @property
    def bin_edges(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.bins + 1)


def _draw_predictives(
    samples: PosteriorSamples,
    model: RiskModel,
    max_draws: Optional[int]
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """log p(y|·), F(y|·), F(y−1|·) по выборкам, формы (draws, m, T)."""
    _, eta = posterior_linear_predictor(samples, model, max_draws)
    idx = samples.draw_indices(max_draws)
    hyper = samples.flat_hyper()[idx]
    phi = hyper[:, PARAM_INDEX["phi"], None, None]
    alpha = hyper[:, PARAM_INDEX["alpha"], None, None]
    lam = model.E[None] * np.exp(eta)
    y = model.y[None]

    log_pmf = gp_log_pmf_array(y, lam, phi, alpha, model.log_factorial[None])
    cdf = gp_cdf_array(y, lam, phi, alpha)
    below = np.where(y > 0, gp_cdf_array(np.maximum(y - 1.0, 0.0), lam, phi, alpha), 0.0)
    return log_pmf, cdf, below, idx


def importance_cpo_pit(
    log_pmf: np.ndarray,
    cdf: np.ndarray,
    cdf_below: Optional[np.ndarray] = None
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Оценки CPO и PIT по выборкам вдоль оси 0.

    CPO = [mean_d 1/p_d]⁻¹, PIT = Σ w_d F_d / Σ w_d, w_d = 1/p_d.
    Если p_d = 0 хотя бы для одной выборки, CPO = +0, а веса поровну
    делятся между такими выборками: PIT есть среднее их F_d.

    Returns:
        (cpo, pit, pit_below, max_weight)
    """
    log_pmf = np.asarray(log_pmf, dtype=float)
    cdf = np.asarray(cdf, dtype=float)
    if cdf_below is None:
        cdf_below = np.clip(cdf - np.exp(log_pmf), 0.0, 1.0)
    n = log_pmf.shape[0]
    log_w = -log_pmf

    zero = np.isposinf(log_w)
    any_zero = zero.any(axis=0)
    safe = np.where(any_zero[None], np.where(zero, 0.0, -np.inf), log_w)
    log_norm = logsumexp(safe, axis=0)
    weights = np.exp(safe - log_norm[None])

    with np.errstate(over='ignore'):
        cpo = np.where(any_zero, 0.0, np.exp(np.log(n) - log_norm))
    pit = np.clip(np.sum(weights * cdf, axis=0), 0.0, 1.0)
    pit_below = np.clip(np.sum(weights * cdf_below, axis=0), 0.0, 1.0)
    return cpo, pit, pit_below, weights.max(axis=0)


def flag_low_cpo(cpo: np.ndarray, quantile: float = DiagnosticsConfig.FLAG_QUANTILE) -> List[Tuple[int, int]]:
    """Ячейки с CPO не выше квантиля quantile (возможные выбросы)."""
    threshold = np.quantile(cpo, quantile)
    cells = np.argwhere(cpo <= threshold)
    return [(int(i), int(t)) for i, t in cells]


def calibration_report(
    samples: PosteriorSamples,
    panel: CountPanel,
    regions: RegionTable,
    model: Optional[RiskModel] = None,
    bins: int = DiagnosticsConfig.BINS,
    max_draws: Optional[int] = DiagnosticsConfig.MAX_DRAWS
) -> CalibrationReport:
    """
    Полный отчёт о калибровке.

    Args:
        samples: Апостериорные выборки
        panel: Наблюдения
        regions: Таблица регионов
        model: Модель (иначе строится по умолчанию)
        bins: Число корзин гистограммы J
        max_draws: Предел числа используемых выборок

    Returns:
        CalibrationReport
    """
    if samples.n_total < 1:
        raise ContractError("calibration needs at least one posterior draw")
    model = model or RiskModel(panel, regions)
    log_pmf, cdf, below, idx = _draw_predictives(samples, model, max_draws)
    cpo_values, pit_values, pit_below, max_weight = importance_cpo_pit(log_pmf, cdf, below)

    zero_cpo = int(np.count_nonzero(cpo_values == 0))
    if zero_cpo:
        logger.warning(
            f"{zero_cpo} cells have numerically zero predictive probability in some draw",
            extra={"cells": zero_cpo}
        )
    unreliable = [(int(i), int(t)) for i, t in np.argwhere(max_weight > DiagnosticsConfig.WEIGHT_DEGENERACY)]
    if unreliable and idx.size > 1:
        logger.warning(
            f"{len(unreliable)} cells have degenerate importance weights",
            extra={"cells": len(unreliable), "threshold": DiagnosticsConfig.WEIGHT_DEGENERACY}
        )

    histogram = mean_pit_histogram(pit_values, cpo_values, bins)
    return CalibrationReport(
        cpo=cpo_values,
        pit=pit_values,
        pit_below=pit_below,
        max_weight=max_weight,
        histogram=histogram,
        flagged=flag_low_cpo(cpo_values),
        unreliable=unreliable,
        zero_cpo=zero_cpo,
        draws_used=int(idx.size)
    )


def cpo(samples: PosteriorSamples, panel: CountPanel, regions: RegionTable, **options) -> np.ndarray:
    """Условные прогностические ординаты, матрица m×T."""
    return calibration_report(samples, panel, regions, **options).cpo


def pit(samples: PosteriorSamples, panel: CountPanel, regions: RegionTable, **options) -> np.ndarray:
    """Кросс-валидированные значения PIT, матрица m×T."""
    return calibration_report(samples, panel, regions, **options).pit


def nonrandomized_pit_cdf(u: ArrayLike, pit_y: ArrayLike, cpo_y: ArrayLike) -> np.ndarray:
    """
    Нерандомизированная PIT-функция F(u|y).

    0 при u ≤ PIT(y−1) = pit_y − cpo_y, линейно между, 1 при u ≥ pit_y.

    Raises:
        ContractError: cpo_y > pit_y
    """
    u, pit_y, cpo_y = np.broadcast_arrays(
        np.asarray(u, dtype=float), np.asarray(pit_y, dtype=float), np.asarray(cpo_y, dtype=float)
    )
    if np.any(cpo_y > pit_y + PIT_TOLERANCE):
        raise ContractError("CPO cannot exceed PIT at the observed value")
    lower = np.maximum(pit_y - cpo_y, 0.0)
    with np.errstate(divide='ignore', invalid='ignore'):
        ramp = np.clip((u - lower) / (pit_y - lower), 0.0, 1.0)
    out = np.where(u >= pit_y, 1.0, np.where(u <= lower, 0.0, ramp))
    return out if out.ndim else float(out)


def mean_pit_histogram(pit_values: ArrayLike, cpo_values: ArrayLike, J: int = DiagnosticsConfig.BINS) -> np.ndarray:
    """
    Высоты f̄_j = F̄(j/J) − F̄((j−1)/J), F̄ - среднее F_it по всем ячейкам.

    Raises:
        ContractError: пустой вход или J < 2
    """
    pit_values = np.asarray(pit_values, dtype=float).ravel()
    cpo_values = np.asarray(cpo_values, dtype=float).ravel()
    if pit_values.size == 0 or pit_values.size != cpo_values.size:
        raise ContractError("mean PIT histogram needs matching nonempty PIT and CPO arrays")
    if J < 2:
        raise ContractError(f"histogram needs at least 2 bins, got {J}")
    edges = np.linspace(0.0, 1.0, J + 1)[1:]
    F = nonrandomized_pit_cdf(edges[:, None], pit_values[None, :], cpo_values[None, :]).mean(axis=1)
    return np.diff(np.concatenate([[0.0], F]))


def uniformity_chi_square(histogram: ArrayLike, n_cells: int) -> Tuple[float, float]:
    """χ²-тест равномерности гистограммы средней PIT (статистика, p-value)."""
    histogram = np.asarray(histogram, dtype=float)
    observed = histogram * n_cells
    expected = np.full(histogram.size, n_cells / histogram.size)
    result = stats.chisquare(observed, expected)
    return float(result.statistic), float(result.pvalue)
