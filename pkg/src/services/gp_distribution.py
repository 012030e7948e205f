#!/usr/bin/env python3
"""
GP Distribution - обобщённое распределение Пуассона в параметризации (Ω, Ψ).

Для интенсивности λ > 0 и параметров (φ, α):

    s = φ·λ^(α−1),  Ω = λ/(1+s),  Ψ = s/(1+s)
    P(Y=y) = exp(−Ω − Ψy)·Ω·(Ω + Ψy)^(y−1) / y!

E[Y] = λ, Var[Y] = λ(1+s)². При φ = 0 получаем обычный Пуассон.
"""

import math
from typing import Optional, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.special import gammaln

from src.config import GpConfig
from src.exceptions import DomainError
from src.utils.logger import get_logger

logger = get_logger(__name__)

ArrayOrFloat = Union[float, np.ndarray]


class GpParams(BaseModel):
    """Параметры наблюдательного распределения."""
    model_config = ConfigDict(frozen=True)

    phi: float = Field(ge=0)
    alpha: float

    @field_validator('phi', 'alpha')
    @classmethod
    def validate_finite(cls, v):
        if not math.isfinite(v):
            raise ValueError("GP parameters must be finite")
        return v


def _check_rate(lam: ArrayLike) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    if not np.all(np.isfinite(lam)) or np.any(lam <= 0):
        raise DomainError("GP rate lambda must be finite and positive")
    return lam


def _check_counts(y: ArrayLike) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)) or np.any(y < 0) or np.any(y != np.floor(y)):
        raise DomainError("GP support is the nonnegative integers")
    return y


def _dispersion(lam: ArrayOrFloat, phi: ArrayOrFloat, alpha: ArrayOrFloat) -> ArrayOrFloat:
    """s = φ·λ^(α−1), степень через exp/log для любого вещественного α."""
    return phi * np.exp((alpha - 1.0) * np.log(lam))


def gp_log_pmf_array(
    y: ArrayLike,
    lam: ArrayLike,
    phi: ArrayLike,
    alpha: ArrayLike,
    log_factorial: Optional[np.ndarray] = None
) -> np.ndarray:
    """
    Векторная log-pmf без проверки аргументов (для горячих циклов).

    Args:
        y: Наблюдения (неотрицательные целые, как float или int)
        lam: Интенсивности λ > 0
        phi: Дисперсия φ ≥ 0 (скаляр или транслируемый массив)
        alpha: Показатель α
        log_factorial: Предвычисленный log(y!) (опционально)

    Returns:
        Массив log P(Y=y)
    """
    y = np.asarray(y, dtype=float)
    lam = np.asarray(lam, dtype=float)
    s = _dispersion(lam, phi, alpha)
    z = lam + s * y  # (1+s)·(Ω + Ψy)
    if log_factorial is None:
        log_factorial = gammaln(y + 1.0)
    with np.errstate(divide='ignore', invalid='ignore'):
        body = np.log(lam) + (y - 1.0) * np.log(z) - y * np.log1p(s) - z / (1.0 + s) - log_factorial
    # y = 0: множитель Ω·Ω^(−1) сокращается
    return np.where(y == 0, -lam / (1.0 + s), body)


def gp_log_pmf(y: ArrayLike, lam: ArrayLike, params: GpParams) -> ArrayOrFloat:
    """
    Логарифм вероятности P(Y=y | λ, φ, α).

    Raises:
        DomainError: λ нефинитна или ≤ 0, y отрицательно или не целое
    """
    y = _check_counts(y)
    lam = _check_rate(lam)
    out = gp_log_pmf_array(y, lam, params.phi, params.alpha)
    return float(out) if out.ndim == 0 else out


def gp_moments(lam: ArrayLike, params: GpParams) -> Tuple[ArrayOrFloat, ArrayOrFloat]:
    """
    Среднее и дисперсия: (λ, λ(1+φλ^(α−1))²).
    """
    lam = _check_rate(lam)
    s = _dispersion(lam, params.phi, params.alpha)
    variance = lam * (1.0 + s) ** 2
    if lam.ndim == 0:
        return float(lam), float(variance)
    return lam, variance


def gp_cdf_array(y: ArrayLike, lam: ArrayLike, phi: ArrayLike, alpha: ArrayLike) -> np.ndarray:
    """
    Векторная cdf прямым суммированием pmf.

    Суммирование начинается с max(0, λ − WINDOW_SD·sd): левый хвост ниже этой
    границы пренебрежимо мал. Ячейки группируются по ширине окна, чтобы
    ограничить память временной сетки.
    """
    y, lam, phi, alpha = np.broadcast_arrays(
        np.asarray(y, dtype=float),
        np.asarray(lam, dtype=float),
        np.asarray(phi, dtype=float),
        np.asarray(alpha, dtype=float),
    )
    shape = y.shape
    y, lam, phi, alpha = (a.ravel() for a in (y, lam, phi, alpha))
    n = y.size
    out = np.empty(n)
    if n == 0:
        return out.reshape(shape)

    sd = np.sqrt(lam) * (1.0 + _dispersion(lam, phi, alpha))
    lo = np.minimum(np.maximum(0.0, np.floor(lam - GpConfig.WINDOW_SD * sd)), y)
    width = (y - lo + 1.0).astype(np.int64)

    order = np.argsort(width, kind='stable')
    w_sorted = width[order]
    pos = 0
    while pos < n:
        cost = np.arange(1, n - pos + 1, dtype=np.int64) * w_sorted[pos:]
        end = pos + max(1, int(np.searchsorted(cost, GpConfig.CDF_CHUNK_CELLS, side='right')))
        idx = order[pos:end]
        k = lo[idx, None] + np.arange(int(w_sorted[end - 1]))[None, :]
        logp = gp_log_pmf_array(k, lam[idx, None], phi[idx, None], alpha[idx, None])
        p = np.where(k <= y[idx, None], np.exp(logp), 0.0)
        out[idx] = p.sum(axis=1)
        pos = end

    return np.clip(out, 0.0, 1.0).reshape(shape)


def gp_cdf(y: ArrayLike, lam: ArrayLike, params: GpParams) -> ArrayOrFloat:
    """
    Функция распределения P(Y ≤ y) = Σ_{k≤y} pmf(k).

    Raises:
        DomainError: как gp_log_pmf
    """
    y = _check_counts(y)
    lam = _check_rate(lam)
    out = gp_cdf_array(y, lam, params.phi, params.alpha)
    return float(out) if out.ndim == 0 else out


def gp_truncation_point(lam: float, params: GpParams, tol: float = GpConfig.TAIL_TOLERANCE) -> int:
    """
    Адаптивная точка усечения носителя.

    Возвращает первое K ≥ ⌊λ⌋, для которого геометрическая мажоранта хвоста
    p_{K+1}/(1 − r_{K+1}), r_k = p_{k+1}/p_k, меньше tol. Окно λ + 50·sd
    удваивается, пока сертификат не получен (до MAX_SUPPORT).

    Args:
        lam: Интенсивность λ > 0
        params: Параметры распределения
        tol: Допуск на массу хвоста

    Returns:
        Индекс усечения K (Σ_{k≤K} pmf ≥ 1 − tol)
    """
    lam = float(_check_rate(lam))
    _, variance = gp_moments(lam, params)
    upper = int(math.ceil(lam + GpConfig.WINDOW_SD * math.sqrt(variance))) + 2
    start = int(math.floor(lam))

    while True:
        k = np.arange(upper + 2, dtype=float)
        logp = gp_log_pmf_array(k, lam, params.phi, params.alpha)
        # bound_k = p_{k+1} / (1 − r_{k+1}) для k = 0..upper−1
        p_next = np.exp(logp[1:-1])
        r_next = np.exp(logp[2:] - logp[1:-1])
        with np.errstate(divide='ignore'):
            bound = np.where(r_next < 1.0, p_next / (1.0 - r_next), np.inf)
        ok = np.flatnonzero((np.arange(bound.size) >= start) & (bound < tol))
        if ok.size:
            return int(ok[0])
        if upper >= GpConfig.MAX_SUPPORT:
            logger.warning(
                f"GP tail certificate not reached below support ceiling {GpConfig.MAX_SUPPORT}",
                extra={"lam": lam, "phi": params.phi, "alpha": params.alpha}
            )
            return upper
        upper = min(2 * upper, GpConfig.MAX_SUPPORT)


def _sample_by_table(rng: np.random.Generator, lam: float, phi: float, alpha: float, size) -> np.ndarray:
    """Инверсия по таблице cdf для общего λ."""
    params = GpParams(phi=phi, alpha=alpha)
    K = gp_truncation_point(lam, params)
    table = np.cumsum(np.exp(gp_log_pmf_array(np.arange(K + 1, dtype=float), lam, phi, alpha)))
    u = rng.random(size)
    return np.minimum(np.searchsorted(table, u, side='left'), K).astype(np.int64)


def _sample_by_blocks(rng: np.random.Generator, lam: np.ndarray, phi: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Инверсия накоплением cdf блоками удваивающейся длины."""
    n = lam.size
    u = rng.random(n)
    out = np.empty(n, dtype=np.int64)

    for start in range(0, n, GpConfig.SAMPLER_BATCH):
        sl = slice(start, min(n, start + GpConfig.SAMPLER_BATCH))
        lam_b, phi_b, alpha_b, u_b = lam[sl], phi[sl], alpha[sl], u[sl]
        m = lam_b.size
        result = np.zeros(m, dtype=np.int64)
        base = np.zeros(m)
        cum = np.zeros(m)
        active = np.arange(m)
        block = GpConfig.SAMPLER_FIRST_BLOCK

        while active.size:
            k = base[active, None] + np.arange(block)[None, :]
            p = np.exp(gp_log_pmf_array(k, lam_b[active, None], phi_b[active, None], alpha_b[active, None]))
            c = cum[active, None] + np.cumsum(p, axis=1)
            hit = c >= u_b[active, None]
            found = hit.any(axis=1)
            first = hit.argmax(axis=1)
            result[active[found]] = k[found, first[found]].astype(np.int64)

            # Остаток массы ниже машинной точности: берём последний k
            stalled = (~found) & (k[:, 0] > lam_b[active]) & (
                (c[:, -1] <= cum[active]) | (k[:, -1] >= GpConfig.MAX_SUPPORT)
            )
            result[active[stalled]] = k[stalled, -1].astype(np.int64)

            cum[active] = c[:, -1]
            base[active] += block
            active = active[~found & ~stalled]
            block = min(2 * block, 1 << 16)

        out[sl] = result
    return out


def gp_sample_array(rng: np.random.Generator, lam: ArrayLike, phi: ArrayLike, alpha: ArrayLike) -> np.ndarray:
    """
    Векторная выборка точной инверсией cdf (параметры транслируются к форме λ).
    """
    lam, phi, alpha = np.broadcast_arrays(
        np.asarray(lam, dtype=float), np.asarray(phi, dtype=float), np.asarray(alpha, dtype=float)
    )
    shape = lam.shape
    draws = _sample_by_blocks(rng, lam.ravel(), phi.ravel(), alpha.ravel())
    return draws.reshape(shape)


def gp_sample(
    rng: np.random.Generator,
    lam: ArrayLike,
    params: GpParams,
    size: Optional[Union[int, Tuple[int, ...]]] = None
) -> Union[int, np.ndarray]:
    """
    Выборка из обобщённого Пуассона инверсией накопленной cdf.

    Args:
        rng: Источник случайности (один на поток исполнения)
        lam: Интенсивность (скаляр или массив)
        params: Параметры распределения
        size: Число выборок для скалярного λ (опционально)

    Returns:
        Целое число или массив целых

    Raises:
        DomainError: λ нефинитна или ≤ 0
    """
    lam = _check_rate(lam)
    if lam.ndim == 0:
        draws = _sample_by_table(rng, float(lam), params.phi, params.alpha, 1 if size is None else size)
        return int(draws[0]) if size is None else draws
    if size is not None:
        raise DomainError("size is only supported for a scalar rate")
    return gp_sample_array(rng, lam, params.phi, params.alpha)
