#!/usr/bin/env python3
"""
Risk Model - модель относительного риска на уровне наблюдений.

Ожидаемые числа случаев при однородной нулевой модели, лог-линейное поле
относительного риска θ_it = exp(μ + βd_i + δ_t + ε_t + ζ_i + ξ_i) и полная
совместная лог-апостериорная плотность, собранная из именованных слагаемых.
"""

import threading
from datetime import date, timedelta
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.spatial.distance import cdist
from scipy.special import gammaln

from src.config import ModelConfig
from src.exceptions import ContractError, DomainError, ModelSpecificationError
from src.services.gp_distribution import gp_log_pmf_array
from src.services.latent_components import (
    BymConvention,
    BymStructure,
    DistanceStructure,
    ar2_log_density_values,
    ar2_precision_matrix,
    rw2_log_density,
    rw2_structure_matrix,
    sum_to_zero_penalty,
)
from src.services.priors import (
    N_PARAMS,
    PARAM_INDEX,
    HyperParams,
    PriorSpec,
    log_prior,
    to_unconstrained,
    unconstrained_to_natural,
)
from src.utils.logger import get_logger

logger = get_logger(__name__)

TERMS: Tuple[str, ...] = ("observation", "rw2", "ar2", "distance", "bym", "prior", "constraint")
LATENT_BLOCKS: Tuple[str, ...] = ("delta", "eps", "zeta", "xi")

# Позиции гиперпараметров в векторе состояния
PHI, ALPHA, MU, BETA = (PARAM_INDEX[n] for n in ("phi", "alpha", "mu", "beta"))
TAU_DELTA, TAU_EPS, PSI1, PSI2 = (PARAM_INDEX[n] for n in ("tau_delta", "tau_eps", "psi1", "psi2"))
TAU_ZETA, OMEGA, TAU_XI, PHI_BYM = (PARAM_INDEX[n] for n in ("tau_zeta", "omega", "tau_xi", "phi_bym"))


# ===========================================
# Модели данных
# ===========================================

class Region(BaseModel):
    """Статические данные региона."""
    model_config = ConfigDict(frozen=True)

    id: str = Field(min_length=1)
    name: str = ""
    population: float = Field(gt=0)
    area: float = Field(gt=0)
    centroid_x: float
    centroid_y: float
    neighbors: List[str] = Field(default_factory=list)

    @field_validator('population', 'area', 'centroid_x', 'centroid_y')
    @classmethod
    def validate_finite(cls, v: float) -> float:
        if not np.isfinite(v):
            raise ValueError("value must be finite")
        return v


class RegionTable(BaseModel):
    """Таблица регионов с симметричным отношением соседства."""
    model_config = ConfigDict(frozen=True)

    regions: List[Region] = Field(min_length=1)

    @model_validator(mode='after')
    def validate_regions(self):
        ids = [r.id for r in self.regions]
        if len(set(ids)) != len(ids):
            duplicates = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate region ids: {duplicates}")
        known = set(ids)
        lookup = {r.id: r for r in self.regions}
        for region in self.regions:
            for other in region.neighbors:
                if other not in known:
                    raise ValueError(f"region {region.id} lists unknown neighbor {other}")
                if other == region.id:
                    raise ValueError(f"region {region.id} lists itself as a neighbor")
                if region.id not in lookup[other].neighbors:
                    raise ValueError(f"neighbor relation is not symmetric: {region.id}~{other}")
        return self

    @property
    def m(self) -> int:
        return len(self.regions)

    @property
    def ids(self) -> List[str]:
        return [r.id for r in self.regions]

    @property
    def populations(self) -> np.ndarray:
        return np.array([r.population for r in self.regions], dtype=float)

    @property
    def areas(self) -> np.ndarray:
        return np.array([r.area for r in self.regions], dtype=float)

    @property
    def centroids(self) -> np.ndarray:
        return np.array([[r.centroid_x, r.centroid_y] for r in self.regions], dtype=float)

    @property
    def adjacency(self) -> List[List[int]]:
        """Списки соседей в индексах строк таблицы."""
        index = {rid: i for i, rid in enumerate(self.ids)}
        return [sorted(index[n] for n in set(r.neighbors)) for r in self.regions]

    def distance_matrix(self) -> np.ndarray:
        """Евклидовы расстояния между центроидами (в единицах координат)."""
        return cdist(self.centroids, self.centroids)

    def reordered(self, ids: Sequence[str]) -> "RegionTable":
        """Таблица с регионами в заданном порядке."""
        lookup = {r.id: r for r in self.regions}
        if sorted(ids) != sorted(lookup):
            raise ContractError("reordering must be a permutation of the region ids")
        return RegionTable(regions=[lookup[i] for i in ids])


class CountPanel(BaseModel):
    """Ежедневные новые случаи Y_it, m регионов × T дней."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    region_ids: List[str]
    dates: List[date]
    counts: np.ndarray
    corrections: int = Field(default=0, ge=0)  # отрицательных разностей, обнулённых при загрузке

    @field_validator('counts')
    @classmethod
    def validate_counts(cls, v):
        arr = np.asarray(v)
        if arr.ndim != 2:
            raise ValueError("counts must be an m x T matrix")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0) or np.any(arr != np.floor(arr)):
            raise ValueError("counts must be nonnegative integers")
        return arr.astype(np.int64)

    @model_validator(mode='after')
    def validate_shape(self):
        m, T = self.counts.shape
        if len(self.region_ids) != m:
            raise ValueError(f"{len(self.region_ids)} region ids for {m} count rows")
        if len(set(self.region_ids)) != m:
            raise ValueError("duplicate region ids in count panel")
        if len(self.dates) != T:
            raise ValueError(f"{len(self.dates)} dates for {T} count columns")
        for prev, cur in zip(self.dates, self.dates[1:]):
            if cur - prev != timedelta(days=1):
                raise ValueError(f"dates are not consecutive: {prev} -> {cur}")
        return self

    @property
    def m(self) -> int:
        return self.counts.shape[0]

    @property
    def T(self) -> int:
        return self.counts.shape[1]

    def aligned_to(self, regions: RegionTable) -> "CountPanel":
        """
        Строки в порядке таблицы регионов.

        Raises:
            ContractError: наборы регионов не совпадают
        """
        if self.region_ids == regions.ids:
            return self
        if sorted(self.region_ids) != sorted(regions.ids):
            raise ContractError("count panel and region table cover different regions")
        order = [self.region_ids.index(rid) for rid in regions.ids]
        return CountPanel(
            region_ids=regions.ids,
            dates=self.dates,
            counts=self.counts[order],
            corrections=self.corrections
        )

    def country_totals(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    def window(self, start: int, stop: int) -> "CountPanel":
        """Подпанель дней [start, stop)."""
        if not (0 <= start < stop <= self.T):
            raise ContractError(f"invalid day window [{start}, {stop}) for T={self.T}")
        return CountPanel(
            region_ids=list(self.region_ids),
            dates=self.dates[start:stop],
            counts=self.counts[:, start:stop]
        )

    def future_dates(self, k: int) -> List[date]:
        return [self.dates[-1] + timedelta(days=j) for j in range(1, k + 1)]


class LatentState(BaseModel):
    """Одна реализация (δ, ε, ζ, ξ)."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    delta: np.ndarray
    eps: np.ndarray
    zeta: np.ndarray
    xi: np.ndarray

    @field_validator('delta', 'eps', 'zeta', 'xi')
    @classmethod
    def validate_vector(cls, v):
        arr = np.asarray(v, dtype=float)
        if arr.ndim != 1:
            raise ValueError("latent components are vectors")
        if not np.all(np.isfinite(arr)):
            raise ValueError("latent entries must be finite")
        return arr

    @model_validator(mode='after')
    def validate_lengths(self):
        if self.delta.size != self.eps.size:
            raise ValueError("delta and eps must have the same length")
        if self.zeta.size != self.xi.size:
            raise ValueError("zeta and xi must have the same length")
        return self

    @classmethod
    def zeros(cls, T: int, m: int) -> "LatentState":
        return cls(delta=np.zeros(T), eps=np.zeros(T), zeta=np.zeros(m), xi=np.zeros(m))

    @property
    def T(self) -> int:
        return self.delta.size

    @property
    def m(self) -> int:
        return self.zeta.size

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.delta, self.eps, self.zeta, self.xi])

    @classmethod
    def from_vector(cls, x: ArrayLike, T: int, m: int) -> "LatentState":
        x = np.asarray(x, dtype=float)
        if x.size != 2 * T + 2 * m:
            raise ContractError(f"latent vector has {x.size} entries, expected {2 * T + 2 * m}")
        return cls(delta=x[:T], eps=x[T:2 * T], zeta=x[2 * T:2 * T + m], xi=x[2 * T + m:])


class RelativeRiskField(BaseModel):
    """θ_it и Λ_it = E_it·θ_it."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    theta: np.ndarray
    lam: np.ndarray
    clamped: int = 0  # ячеек, где линейный предиктор обрезан


class ClampCounter:
    """Потокобезопасный счётчик обрезаний линейного предиктора."""

    def __init__(self):
        self._count = 0
        self._lock = threading.Lock()

    def add(self, n: int) -> None:
        if n:
            with self._lock:
                self._count += n

    @property
    def count(self) -> int:
        return self._count

    def reset(self) -> int:
        with self._lock:
            value, self._count = self._count, 0
        return value


# ===========================================
# Нулевая модель
# ===========================================

def incidence_rate(panel: CountPanel, regions: RegionTable) -> float:
    """
    Оценка однородной дневной заболеваемости ϱ̂₀ = (1/T)·Σ_t Σ_i Y_it / Σ_i P_i.

    Raises:
        ContractError: пустая панель
        DomainError: нулевая суммарная численность
    """
    panel = panel.aligned_to(regions)
    if panel.counts.size == 0:
        raise ContractError("incidence rate requires a nonempty panel")
    total = float(regions.populations.sum())
    if not total > 0:
        raise DomainError("total population is zero")
    return float(np.mean(panel.counts.sum(axis=0) / total))


def expected_counts(regions: RegionTable, rate: float, T: int = 1) -> np.ndarray:
    """Ê_it = P_i·ϱ̂₀, постоянные по t."""
    if not rate > 0:
        raise ContractError(f"expected counts need a positive incidence rate, got {rate}")
    return np.repeat((regions.populations * rate)[:, None], T, axis=1)


def standardized_density(regions: RegionTable) -> np.ndarray:
    """
    Плотность населения P_i/area_i, стандартизованная к среднему 0 и дисперсии 1.

    Raises:
        ContractError: меньше двух регионов
        DomainError: все плотности равны
    """
    if regions.m < 2:
        raise ContractError("density standardization needs at least two regions")
    raw = regions.populations / regions.areas
    sd = float(np.std(raw))
    if not sd > 0 or sd < 1e-12 * float(np.abs(raw).max()):
        raise DomainError("raw population densities have zero variance")
    return (raw - raw.mean()) / sd


def standardized_incidence_ratio(panel: CountPanel, E: np.ndarray) -> np.ndarray:
    """Наивная оценка относительного риска Y_it / Ê_it."""
    E = np.asarray(E, dtype=float)
    if E.shape != panel.counts.shape:
        raise ContractError(f"expected counts shape {E.shape} does not match panel {panel.counts.shape}")
    return panel.counts / E


def _clamp(eta: np.ndarray, counter: Optional[ClampCounter] = None) -> Tuple[np.ndarray, int]:
    limit = ModelConfig.LINEAR_PREDICTOR_CLAMP
    n = int(np.count_nonzero(np.abs(eta) > limit))
    if n:
        if counter is not None:
            counter.add(n)
        logger.debug(f"Linear predictor clamped in {n} cells", extra={"clamped": n})
        eta = np.clip(eta, -limit, limit)
    return eta, n


def relative_risk_field(h: HyperParams, s: LatentState, d: ArrayLike, E: ArrayLike) -> RelativeRiskField:
    """
    θ_it = exp(μ + β·d_i + δ_t + ε_t + ζ_i + ξ_i), Λ_it = Ê_it·θ_it.

    Линейный предиктор обрезается до ±50, число обрезаний учитывается.
    """
    d = np.asarray(d, dtype=float)
    E = np.asarray(E, dtype=float)
    if d.shape != (s.m,) or E.shape != (s.m, s.T):
        raise ContractError(
            f"dimension mismatch: d{d.shape}, E{E.shape}, latent state m={s.m}, T={s.T}"
        )
    eta = h.mu + h.beta * d[:, None] + (s.delta + s.eps)[None, :] + (s.zeta + s.xi)[:, None]
    eta, n = _clamp(eta)
    theta = np.exp(eta)
    return RelativeRiskField(theta=theta, lam=E * theta, clamped=n)


# ===========================================
# Совместная плотность
# ===========================================

class RiskModel:
    """
    Совместная лог-плотность для фиксированных данных.

    Вектор состояния: [12 преобразованных гиперпараметров | δ (T) | ε (T) | ζ (m) | ξ (m)].
    Плотность - сумма слагаемых TERMS; каждое можно вычислить отдельно.
    """

    def __init__(
        self,
        panel: CountPanel,
        regions: RegionTable,
        priors: Optional[PriorSpec] = None,
        bym_convention: BymConvention = BymConvention(ModelConfig.BYM_CONVENTION),
        scale_besag: bool = ModelConfig.SCALE_BESAG,
        sum_to_zero: bool = True,
        expected: Optional[np.ndarray] = None
    ):
        """
        Args:
            panel: Ежедневные числа случаев
            regions: Таблица регионов
            priors: Априорные распределения (по умолчанию PriorSpec())
            bym_convention: Размещение веса смешивания BYM
            scale_besag: Масштабировать Q⁻
            sum_to_zero: Мягкие ограничения Σδ = Σζ = Σξ = 0
            expected: Явные ожидаемые числа (иначе по нулевой модели)

        Raises:
            ContractError: T < 3 или несовпадение регионов
        """
        self.panel = panel.aligned_to(regions)
        self.regions = regions
        self.priors = priors or PriorSpec()
        self.m, self.T = self.panel.counts.shape
        if self.T < 3:
            raise ContractError(f"the RW2 trend needs at least 3 days, got T={self.T}")

        self.y = self.panel.counts.astype(float)
        self.log_factorial = gammaln(self.y + 1.0)

        if expected is not None:
            E = np.asarray(expected, dtype=float)
            if E.shape != (self.m, self.T) or not np.all(E > 0):
                raise ContractError("explicit expected counts must be a positive m x T matrix")
            self.rate = float(E.sum(axis=0).mean() / regions.populations.sum())
        else:
            self.rate = incidence_rate(self.panel, regions)
            if self.rate <= 0:
                # Панель без случаев: половина случая на всю панель
                self.rate = 0.5 / (self.T * float(regions.populations.sum()))
                logger.warning(
                    f"Panel has no cases; using floor incidence rate {self.rate:.3e}",
                    extra={"m": self.m, "T": self.T}
                )
            E = expected_counts(regions, self.rate, self.T)
        self.E = E
        self.log_E = np.log(E)

        self.d = standardized_density(regions) if self.m >= 2 else np.zeros(self.m)
        self.distance = DistanceStructure(regions.distance_matrix())
        self.bym = BymStructure(regions.adjacency, scale=scale_besag, convention=bym_convention)
        self.rw2_structure = rw2_structure_matrix(self.T)
        self.sum_to_zero = sum_to_zero
        self.kappa = ModelConfig.SUM_TO_ZERO_PRECISION
        # обрезания η, накопленные этой моделью
        self.clamps = ClampCounter()

        T, m = self.T, self.m
        self.slices: Dict[str, slice] = {
            "hyper": slice(0, N_PARAMS),
            "delta": slice(N_PARAMS, N_PARAMS + T),
            "eps": slice(N_PARAMS + T, N_PARAMS + 2 * T),
            "zeta": slice(N_PARAMS + 2 * T, N_PARAMS + 2 * T + m),
            "xi": slice(N_PARAMS + 2 * T + m, N_PARAMS + 2 * T + 2 * m),
        }
        self.dimension = N_PARAMS + 2 * T + 2 * m

        logger.info(
            f"Risk model ready: m={m}, T={T}, rate={self.rate:.6g}",
            extra={"m": m, "T": T, "bym_convention": BymConvention(bym_convention).value}
        )

    # ----- упаковка состояния -----

    def state_vector(self, h: HyperParams, s: LatentState) -> np.ndarray:
        """(HyperParams, LatentState) -> вектор состояния."""
        self._check_state(s)
        return np.concatenate([to_unconstrained(h, self.priors), s.as_vector()])

    def split_state(self, x: np.ndarray) -> Tuple[HyperParams, LatentState]:
        """Вектор состояния -> (HyperParams, LatentState)."""
        hv = unconstrained_to_natural(x[self.slices["hyper"]], self.priors)
        return HyperParams.from_array(hv), LatentState.from_vector(x[N_PARAMS:], self.T, self.m)

    def _check_state(self, s: LatentState) -> None:
        if s.T != self.T or s.m != self.m:
            raise ContractError(f"latent state has T={s.T}, m={s.m}; model has T={self.T}, m={self.m}")

    # ----- поле риска -----

    def linear_predictor(self, hv: np.ndarray, x: np.ndarray) -> np.ndarray:
        sl = self.slices
        temporal = x[sl["delta"]] + x[sl["eps"]]
        spatial = x[sl["zeta"]] + x[sl["xi"]]
        return hv[MU] + hv[BETA] * self.d[:, None] + temporal[None, :] + spatial[:, None]

    def rates(self, hv: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Λ_it при обрезанном линейном предикторе."""
        eta, _ = _clamp(self.linear_predictor(hv, x), self.clamps)
        return self.E * np.exp(eta)

    def observation_information(self, hv: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Ожидаемая информация Фишера по η_it: Λ/(1+s)²."""
        lam = self.rates(hv, x)
        s = hv[PHI] * np.exp((hv[ALPHA] - 1.0) * np.log(lam))
        return lam / (1.0 + s) ** 2

    def latent_precision(self, block: str, hv: np.ndarray) -> np.ndarray:
        """Априорная матрица точности латентной компоненты (с учётом ограничения)."""
        if block == "delta":
            Q = hv[TAU_DELTA] * self.rw2_structure
        elif block == "eps":
            Q = ar2_precision_matrix(hv[PSI1], hv[PSI2], hv[TAU_EPS], self.T)
        elif block == "zeta":
            Q = self.distance.precision(hv[OMEGA], hv[TAU_ZETA])
        elif block == "xi":
            Q = self.bym.precision(hv[PHI_BYM], hv[TAU_XI])
        else:
            raise ContractError(f"unknown latent block '{block}'")
        if self.sum_to_zero and block != "eps":
            Q = Q + self.kappa * np.ones_like(Q)
        return Q

    # ----- слагаемые плотности -----

    def _term(self, name: str, hv: np.ndarray, v: np.ndarray, x: np.ndarray) -> float:
        sl = self.slices
        if name == "observation":
            lam = self.rates(hv, x)
            return float(np.sum(gp_log_pmf_array(self.y, lam, hv[PHI], hv[ALPHA], self.log_factorial)))
        if name == "rw2":
            return rw2_log_density(x[sl["delta"]], hv[TAU_DELTA])
        if name == "ar2":
            return ar2_log_density_values(x[sl["eps"]], hv[PSI1], hv[PSI2], hv[TAU_EPS])
        if name == "distance":
            return self.distance.log_density(x[sl["zeta"]], hv[OMEGA], hv[TAU_ZETA])
        if name == "bym":
            return self.bym.log_density(x[sl["xi"]], hv[PHI_BYM], hv[TAU_XI])
        if name == "prior":
            return log_prior(v, self.priors)
        if name == "constraint":
            if not self.sum_to_zero:
                return 0.0
            return (sum_to_zero_penalty(x[sl["delta"]], self.kappa)
                    + sum_to_zero_penalty(x[sl["zeta"]], self.kappa)
                    + sum_to_zero_penalty(x[sl["xi"]], self.kappa))
        raise ContractError(f"unknown log-joint term '{name}'")

    def _evaluate(self, name: str, fn: Callable[[], float]) -> float:
        try:
            return fn()
        except ModelSpecificationError as exc:
            raise ModelSpecificationError(
                f"{name} term: {exc}", omega=exc.omega, eigenvalue=exc.eigenvalue
            ) from exc
        except DomainError as exc:
            raise DomainError(f"{name} term: {exc}") from exc

    def terms_vector(self, x: np.ndarray, only: Optional[Iterable[str]] = None) -> Dict[str, float]:
        """
        Слагаемые плотности для вектора состояния.

        Raises:
            DomainError: компонента вне области определения (с именем компоненты)
            ModelSpecificationError: проверка положительной определённости не пройдена
        """
        v = x[self.slices["hyper"]]
        hv = self._evaluate("prior", lambda: unconstrained_to_natural(v, self.priors))
        names = TERMS if only is None else tuple(only)
        return {name: self._evaluate(name, lambda n=name: self._term(n, hv, v, x)) for name in names}

    def log_joint_vector(self, x: np.ndarray, only: Optional[Iterable[str]] = None) -> float:
        """Совместная лог-плотность (или сумма выбранных слагаемых)."""
        return float(sum(self.terms_vector(x, only).values()))

    def log_joint_terms(
        self,
        h: HyperParams,
        s: LatentState,
        only: Optional[Iterable[str]] = None
    ) -> Dict[str, float]:
        """Слагаемые плотности для (HyperParams, LatentState)."""
        self._check_state(s)
        v = self._evaluate("prior", lambda: to_unconstrained(h, self.priors))
        x = np.concatenate([v, s.as_vector()])
        hv = h.as_array()
        names = TERMS if only is None else tuple(only)
        return {name: self._evaluate(name, lambda n=name: self._term(n, hv, v, x)) for name in names}

    def log_joint(self, h: HyperParams, s: LatentState) -> float:
        return float(sum(self.log_joint_terms(h, s).values()))

    def field(self, h: HyperParams, s: LatentState) -> RelativeRiskField:
        field = relative_risk_field(h, s, self.d, self.E)
        self.clamps.add(field.clamped)
        return field


def log_joint(
    h: HyperParams,
    s: LatentState,
    panel: CountPanel,
    regions: RegionTable,
    priors: Optional[PriorSpec] = None,
    **options
) -> float:
    """
    Совместная лог-апостериорная плотность (без нормировки).

    Сумма: наблюдения + RW2 + AR(2) + GMRF по расстояниям + BYM
    + априорные на преобразованной шкале + мягкие ограничения суммы.
    """
    return RiskModel(panel, regions, priors, **options).log_joint(h, s)


def make_dates(start: date, T: int) -> List[date]:
    return [start + timedelta(days=t) for t in range(T)]
