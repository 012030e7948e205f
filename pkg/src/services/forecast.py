#!/usr/bin/env python3
"""
Forecast - апостериорный прогноз на k дней вперёд.

Для каждой сохранённой выборки δ продолжается рекурсией RW2, ε - рекурсией
AR(2); пространственные поля фиксированы. Прогнозные числа случаев
выбираются из обобщённого Пуассона и суммируются до уровня страны.
"""

from datetime import date
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.config import DiagnosticsConfig, ForecastConfig, ModelConfig, McmcDefaults
from src.exceptions import ContractError
from src.services.gp_distribution import gp_sample_array
from src.services.inference import PosteriorSamples, credible_interval, posterior_linear_predictor
from src.services.latent_components import ar2_coefficients
from src.services.priors import PARAM_INDEX, HyperParams
from src.services.risk_model import (
    ClampCounter,
    CountPanel,
    LatentState,
    RegionTable,
    RiskModel,
    standardized_density,
)
from src.utils.logger import get_logger

logger = get_logger(__name__)

P = PARAM_INDEX


class ForecastResult(BaseModel):
    """Прогнозные выборки и их сводка."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    horizon: int = Field(ge=1)
    dates: List[date]
    region_ids: List[str]
    region_draws: np.ndarray  # (m, k, draws)
    country_draws: np.ndarray  # (k, draws)

    @property
    def region_mean(self) -> np.ndarray:
        return self.region_draws.mean(axis=2)

    @property
    def region_interval(self) -> Tuple[np.ndarray, np.ndarray]:
        return credible_interval(self.region_draws, axis=2)

    @property
    def country_mean(self) -> np.ndarray:
        return self.country_draws.mean(axis=1)

    @property
    def country_interval(self) -> Tuple[np.ndarray, np.ndarray]:
        return credible_interval(self.country_draws, axis=1)


class CountrySeries(BaseModel):
    """Наблюдаемый и подогнанный ряд Σ_i Ê_it θ_it по дням."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    dates: List[date]
    observed: np.ndarray
    mean: np.ndarray
    lower_95: np.ndarray
    upper_95: np.ndarray


def _innovation_sd(tau: np.ndarray) -> np.ndarray:
    """1/√τ; τ = ∞ даёт нулевую инновацию."""
    tau = np.asarray(tau, dtype=float)
    with np.errstate(divide='ignore'):
        return np.where(np.isinf(tau), 0.0, 1.0 / np.sqrt(tau))


def extend_paths(
    delta: np.ndarray,
    eps: np.ndarray,
    hyper: np.ndarray,
    k: int,
    rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Продолжение δ и ε на k дней для пачки выборок.

    Args:
        delta: История δ, форма (draws, T)
        eps: История ε, форма (draws, T)
        hyper: Гиперпараметры, форма (draws, 12)
        k: Горизонт
        rng: Источник случайности

    Returns:
        (δ_{T+1..T+k}, ε_{T+1..T+k}), формы (draws, k)
    """
    if k <= 0:
        raise ContractError(f"forecast horizon must be positive, got {k}")
    if delta.shape[1] < 2:
        raise ContractError("latent extension needs at least two days of history")
    n = delta.shape[0]
    sd_delta = _innovation_sd(hyper[:, P["tau_delta"]])
    sd_eps = _innovation_sd(hyper[:, P["tau_eps"]])
    a1, a2 = ar2_coefficients(hyper[:, P["psi1"]], hyper[:, P["psi2"]])

    d_prev2, d_prev1 = delta[:, -2].copy(), delta[:, -1].copy()
    e_prev2, e_prev1 = eps[:, -2].copy(), eps[:, -1].copy()
    new_delta = np.empty((n, k))
    new_eps = np.empty((n, k))
    for j in range(k):
        d_next = 2.0 * d_prev1 - d_prev2 + sd_delta * rng.standard_normal(n)
        e_next = a1 * e_prev1 + a2 * e_prev2 + sd_eps * rng.standard_normal(n)
        new_delta[:, j], new_eps[:, j] = d_next, e_next
        d_prev2, d_prev1 = d_prev1, d_next
        e_prev2, e_prev1 = e_prev1, e_next
    return new_delta, new_eps


def extend_latent(draw: Tuple[HyperParams, LatentState], k: int, rng: np.random.Generator) -> LatentState:
    """
    Продолжение одной выборки латентного состояния на k дней.

    Raises:
        ContractError: k ≤ 0 или история короче двух дней
    """
    h, s = draw
    new_delta, new_eps = extend_paths(s.delta[None], s.eps[None], h.as_array()[None], k, rng)
    return LatentState(
        delta=np.concatenate([s.delta, new_delta[0]]),
        eps=np.concatenate([s.eps, new_eps[0]]),
        zeta=s.zeta,
        xi=s.xi
    )


def predictive_counts(
    extended: Sequence[Tuple[HyperParams, LatentState]],
    regions: RegionTable,
    rate: float,
    k: int,
    rng: np.random.Generator,
    d: Optional[np.ndarray] = None,
    dates: Optional[List[date]] = None
) -> ForecastResult:
    """
    Прогнозные числа случаев по продолженным выборкам.

    Ожидаемые числа для будущих дней Ê_i = P_i·ϱ̂₀ (постоянная интенсивность),
    Λ = Ê·θ по последним k дням каждой выборки, счёт ~ обобщённый Пуассон.

    Args:
        extended: Пары (гиперпараметры, продолженное состояние)
        regions: Таблица регионов
        rate: Историческая интенсивность ϱ̂₀
        k: Горизонт
        rng: Источник случайности
        d: Стандартизованная плотность (по умолчанию из regions)
        dates: Даты прогноза (по умолчанию 1..k)
    """
    if k <= 0:
        raise ContractError(f"forecast horizon must be positive, got {k}")
    if not extended:
        raise ContractError("predictive counts need at least one extended draw")
    d = standardized_density(regions) if d is None else np.asarray(d, dtype=float)
    hyper = np.array([h.as_array() for h, _ in extended])
    temporal = np.array([(s.delta + s.eps)[-k:] for _, s in extended])
    spatial = np.array([s.zeta + s.xi for _, s in extended])
    E_future = regions.populations * rate
    return _sample_counts(hyper, temporal, spatial, E_future, regions.ids, d, k, rng, dates)


def _sample_counts(
    hyper: np.ndarray,
    temporal: np.ndarray,
    spatial: np.ndarray,
    E_future: np.ndarray,
    region_ids: List[str],
    d: np.ndarray,
    k: int,
    rng: np.random.Generator,
    dates: Optional[List[date]],
    clamps: Optional[ClampCounter] = None
) -> ForecastResult:
    eta = (hyper[:, P["mu"], None, None] + hyper[:, P["beta"], None, None] * d[None, :, None]
           + temporal[:, None, :] + spatial[:, :, None])
    limit = ModelConfig.LINEAR_PREDICTOR_CLAMP
    clamped = int(np.count_nonzero(np.abs(eta) > limit))
    if clamped:
        if clamps is not None:
            clamps.add(clamped)
        eta = np.clip(eta, -limit, limit)
    lam = E_future[None, :, None] * np.exp(eta)
    counts = gp_sample_array(rng, lam, hyper[:, P["phi"], None, None], hyper[:, P["alpha"], None, None])
    region_draws = np.transpose(counts, (1, 2, 0))
    return ForecastResult(
        horizon=k,
        dates=dates or [],
        region_ids=list(region_ids),
        region_draws=region_draws,
        country_draws=region_draws.sum(axis=0)
    )


def forecast(
    samples: PosteriorSamples,
    model: RiskModel,
    k: int = ForecastConfig.HORIZON,
    seed: int = McmcDefaults.SEED,
    max_draws: Optional[int] = DiagnosticsConfig.MAX_DRAWS
) -> ForecastResult:
    """
    Прогноз на k дней по сохранённым выборкам (детерминирован при фиксированном seed).

    Неопределённость включает инновации латентных рядов и шум наблюдений;
    гиперпараметры не переоцениваются.
    """
    rng = np.random.default_rng(seed)
    idx = samples.draw_indices(max_draws)
    hyper = samples.flat_hyper()[idx]
    latent = samples.flat_latent()[idx]
    T, m = samples.T, samples.m
    new_delta, new_eps = extend_paths(latent[:, :T], latent[:, T:2 * T], hyper, k, rng)
    spatial = latent[:, 2 * T:2 * T + m] + latent[:, 2 * T + m:]
    dates = model.panel.future_dates(k)
    result = _sample_counts(
        hyper, new_delta + new_eps, spatial, model.E[:, -1], model.regions.ids, model.d, k, rng, dates,
        clamps=model.clamps
    )
    logger.info(
        f"Forecast of {k} days from {idx.size} draws",
        extra={"horizon": k, "draws": int(idx.size), "country_mean": result.country_mean.round(2).tolist()}
    )
    return result


def fitted_country_series(
    samples: PosteriorSamples,
    panel: CountPanel,
    regions: RegionTable,
    model: Optional[RiskModel] = None,
    max_draws: Optional[int] = DiagnosticsConfig.MAX_DRAWS
) -> CountrySeries:
    """Апостериорное среднее и 95% интервал Σ_i Ê_it θ_it по дням."""
    model = model or RiskModel(panel, regions)
    _, eta = posterior_linear_predictor(samples, model, max_draws)
    series = (model.E[None] * np.exp(eta)).sum(axis=1)
    lo, hi = credible_interval(series, axis=0)
    return CountrySeries(
        dates=list(model.panel.dates),
        observed=model.panel.country_totals().astype(float),
        mean=series.mean(axis=0),
        lower_95=lo,
        upper_95=hi
    )
