#!/usr/bin/env python3
"""
Inference - апостериорные вычисления.

Поиск моды для инициализации, запуск адаптивного MCMC по цепям,
контейнер PosteriorSamples и итоговая таблица (среднее, 95% интервал,
split-R̂, ESS).
"""

import math
from concurrent.futures import ThreadPoolExecutor
from datetime import date
from typing import Dict, Iterator, List, Optional, Tuple, Union

import arviz as az
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.optimize import minimize

from src.config import DiagnosticsConfig, McmcDefaults, ModelConfig
from src.exceptions import (
    DegenerateSummaryError,
    DomainError,
    InitializationError,
    ModelSpecificationError,
)
from src.services.priors import (
    N_PARAMS,
    PARAM_INDEX,
    PARAM_NAMES,
    PARAM_SYMBOLS,
    HyperParams,
    PriorSpec,
    initial_unconstrained,
    initial_values,
)
from src.services.risk_model import (
    BETA,
    MU,
    CountPanel,
    LatentState,
    RegionTable,
    RiskModel,
)
from src.services.sampler import HYPER_BLOCKS, BlockLedger, BlockSampler, McmcConfig
from src.utils.logger import get_logger

logger = get_logger(__name__)

InitValue = Union[HyperParams, Tuple[HyperParams, LatentState]]


# ===========================================
# Выборки
# ===========================================

class PosteriorSamples(BaseModel):
    """Выборки (цепь, итерация) гиперпараметров и латентных полей."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    hyper: np.ndarray  # (chains, draws, 12), естественная шкала
    latent: np.ndarray  # (chains, draws, 2T+2m): δ, ε, ζ, ξ
    T: int = Field(ge=1)
    m: int = Field(ge=1)
    region_ids: List[str]
    dates: List[date]
    seed: int
    config: McmcConfig
    log_density: Optional[np.ndarray] = None
    ledger: List[Dict[str, BlockLedger]] = Field(default_factory=list)

    @model_validator(mode='after')
    def validate_draws(self):
        if self.hyper.ndim != 3 or self.hyper.shape[2] != N_PARAMS:
            raise ValueError(f"hyper draws must have shape (chains, draws, {N_PARAMS})")
        if self.latent.shape != self.hyper.shape[:2] + (2 * self.T + 2 * self.m,):
            raise ValueError("latent draws do not match (chains, draws, 2T+2m)")
        if len(self.region_ids) != self.m or len(self.dates) != self.T:
            raise ValueError("region ids / dates do not match m / T")
        h = self.hyper
        p = PARAM_INDEX
        taus = h[..., [p["tau_delta"], p["tau_eps"], p["tau_zeta"], p["tau_xi"]]]
        valid = (
            np.all(np.isfinite(h)) and np.all(np.isfinite(self.latent))
            and np.all(h[..., p["phi"]] >= 0) and np.all(taus > 0)
            and np.all(np.abs(h[..., [p["psi1"], p["psi2"]]]) < 1)
            and np.all((h[..., p["omega"]] >= 0) & (h[..., p["omega"]] < 1))
            and np.all((h[..., p["phi_bym"]] >= 0) & (h[..., p["phi_bym"]] <= 1))
        )
        if not valid:
            raise ValueError("stored draws violate hyperparameter invariants")
        return self

    @property
    def n_chains(self) -> int:
        return self.hyper.shape[0]

    @property
    def n_draws(self) -> int:
        return self.hyper.shape[1]

    @property
    def n_total(self) -> int:
        return self.n_chains * self.n_draws

    def param(self, name: str) -> np.ndarray:
        """Выборки одного гиперпараметра, форма (chains, draws)."""
        return self.hyper[..., PARAM_INDEX[name]]

    def latent_block(self, name: str) -> np.ndarray:
        """Выборки δ/ε/ζ/ξ, форма (chains, draws, длина)."""
        T, m = self.T, self.m
        bounds = {"delta": (0, T), "eps": (T, 2 * T), "zeta": (2 * T, 2 * T + m), "xi": (2 * T + m, 2 * T + 2 * m)}
        lo, hi = bounds[name]
        return self.latent[..., lo:hi]

    def flat_hyper(self) -> np.ndarray:
        return self.hyper.reshape(-1, N_PARAMS)

    def flat_latent(self) -> np.ndarray:
        return self.latent.reshape(self.n_total, -1)

    def hyper_params(self, chain: int, draw: int) -> HyperParams:
        return HyperParams.from_array(self.hyper[chain, draw])

    def latent_state(self, chain: int, draw: int) -> LatentState:
        return LatentState.from_vector(self.latent[chain, draw], self.T, self.m)

    def iter_draws(self) -> Iterator[Tuple[HyperParams, LatentState]]:
        for c in range(self.n_chains):
            for d in range(self.n_draws):
                yield self.hyper_params(c, d), self.latent_state(c, d)

    def draw_indices(self, max_draws: Optional[int] = DiagnosticsConfig.MAX_DRAWS) -> np.ndarray:
        """Равномерно прореженные индексы в плоском порядке (детерминированно)."""
        n = self.n_total
        if max_draws is None or n <= max_draws:
            return np.arange(n)
        return np.unique(np.linspace(0, n - 1, max_draws).round().astype(int))


# ===========================================
# Поиск моды
# ===========================================

class ModeResult(BaseModel):
    """Результат поиска моды на вектор состояния."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    x: np.ndarray
    log_joint: float
    initial_log_joint: float
    trace: List[float]  # лог-плотность после каждого улучшающего шага
    iterations: int
    converged: bool
    restarts: int


def _mode_bounds(model: RiskModel, x0: np.ndarray, radius: float) -> List[Tuple[Optional[float], Optional[float]]]:
    center = initial_unconstrained(model.priors)
    v0 = x0[:N_PARAMS]
    lower = np.minimum(center - radius, v0)
    upper = np.maximum(center + radius, v0)
    bounds: List[Tuple[Optional[float], Optional[float]]] = list(zip(lower.tolist(), upper.tolist()))
    bounds.extend([(None, None)] * (model.dimension - N_PARAMS))
    return bounds


def find_mode_vector(
    model: RiskModel,
    x0: np.ndarray,
    radius: float = McmcDefaults.MODE_RADIUS,
    max_iter: int = McmcDefaults.MODE_MAX_ITER,
    restarts: int = McmcDefaults.MODE_RESTARTS,
    seed: int = McmcDefaults.SEED
) -> ModeResult:
    """
    L-BFGS-B по совместной плотности в неограниченных координатах.

    Гиперпараметры ограничены ящиком radius вокруг начальных значений
    априорной спецификации: вдоль τ → ∞ (латентные → 0) конечного максимума нет.

    Raises:
        InitializationError: нефинитная целевая функция в начальной точке
    """
    def value(x: np.ndarray) -> float:
        try:
            lj = model.log_joint_vector(x)
        except (DomainError, ModelSpecificationError):
            return -math.inf
        return lj if math.isfinite(lj) else -math.inf

    f0 = value(x0)
    if not math.isfinite(f0):
        raise InitializationError("log joint density is not finite at the initial point")
    penalty = abs(f0) + 1e12

    def objective(x: np.ndarray) -> float:
        lj = value(x)
        return -lj if math.isfinite(lj) else penalty

    bounds = _mode_bounds(model, x0, radius)
    rng = np.random.default_rng(seed)
    trace: List[float] = [f0]
    best_x, best_f = np.array(x0, dtype=float), f0
    iterations, converged, attempt = 0, False, 0
    start = best_x

    def record(xk: np.ndarray) -> None:
        f = value(xk)
        if f > trace[-1]:
            trace.append(f)

    while True:
        result = minimize(
            objective, start, method="L-BFGS-B", bounds=bounds, callback=record,
            options={"maxiter": max_iter, "ftol": 1e-8, "maxfun": max_iter * (model.dimension + 1)}
        )
        iterations += int(result.nit)
        f_new = value(result.x)
        if f_new >= best_f:
            best_x, best_f = np.array(result.x), f_new
        converged = bool(result.success)
        if converged or attempt >= restarts:
            break
        attempt += 1
        logger.info(
            f"Mode search restart {attempt}: {result.message}",
            extra={"log_joint": best_f, "iterations": iterations}
        )
        start = best_x.copy()
        start[:N_PARAMS] += 0.1 * rng.standard_normal(N_PARAMS)
        lower = np.array([b[0] for b in bounds[:N_PARAMS]])
        upper = np.array([b[1] for b in bounds[:N_PARAMS]])
        start[:N_PARAMS] = np.clip(start[:N_PARAMS], lower, upper)

    if best_f > trace[-1]:
        trace.append(best_f)
    logger.info(
        f"Mode search finished: log joint {f0:.6g} -> {best_f:.6g}",
        extra={"iterations": iterations, "converged": converged, "restarts": attempt}
    )
    return ModeResult(
        x=best_x, log_joint=best_f, initial_log_joint=f0, trace=trace,
        iterations=iterations, converged=converged, restarts=attempt
    )


def find_mode(
    panel: CountPanel,
    regions: RegionTable,
    priors: Optional[PriorSpec] = None,
    init: Optional[HyperParams] = None,
    model: Optional[RiskModel] = None,
    **options
) -> Tuple[HyperParams, LatentState]:
    """
    Начальная точка MCMC: квазиньютоновский подъём по совместной плотности.

    Args:
        panel: Ежедневные числа случаев
        regions: Таблица регионов
        priors: Априорные распределения
        init: Начальные гиперпараметры (по умолчанию начальные значения PriorSpec)
        model: Готовая модель (иначе строится из panel/regions)
        **options: radius, max_iter, restarts, seed для find_mode_vector

    Returns:
        (HyperParams, LatentState) в найденной точке

    Raises:
        InitializationError: нефинитная плотность в начальной точке
    """
    model = model or RiskModel(panel, regions, priors)
    h0 = init or initial_values(model.priors)
    try:
        x0 = model.state_vector(h0, LatentState.zeros(model.T, model.m))
    except DomainError as exc:
        raise InitializationError(f"initial hyperparameters are on a boundary: {exc}") from exc
    result = find_mode_vector(model, x0, **options)
    return model.split_state(result.x)


# ===========================================
# MCMC
# ===========================================

def updated_hyper_indices(config: McmcConfig) -> np.ndarray:
    """Координаты гиперпараметров, которые обновляет сэмплер."""
    if config.blocks is None:
        return np.arange(N_PARAMS)
    selected = set(config.blocks)
    names = [
        name for group, members in HYPER_BLOCKS.items() for name in members
        if group in selected or name in selected
    ]
    return np.array(sorted(PARAM_INDEX[n] for n in names), dtype=int)


def run_mcmc(
    panel: CountPanel,
    regions: RegionTable,
    priors: Optional[PriorSpec] = None,
    config: Optional[McmcConfig] = None,
    init: Optional[InitValue] = None,
    use_mode: bool = False,
    model: Optional[RiskModel] = None,
    **model_options
) -> PosteriorSamples:
    """
    Адаптивный блочный MCMC по нескольким цепям.

    Args:
        panel: Ежедневные числа случаев
        regions: Таблица регионов
        priors: Априорные распределения
        config: Параметры MCMC
        init: Начальные гиперпараметры или пара (гиперпараметры, латентное состояние)
        use_mode: Начинать с моды (find_mode)
        model: Готовая модель
        **model_options: Опции RiskModel (bym_convention, scale_besag, sum_to_zero, expected)

    Returns:
        PosteriorSamples

    Raises:
        SamplerAbortError: блок устойчиво даёт нефинитную плотность
        InitializationError: нефинитная плотность в начальной точке
    """
    config = config or McmcConfig()
    model = model or RiskModel(panel, regions, priors, **model_options)

    if isinstance(init, tuple):
        h0, s0 = init
    elif use_mode:
        h0, s0 = find_mode(panel, regions, model=model, init=init, seed=config.seed)
    else:
        h0 = init or initial_values(model.priors)
        s0 = LatentState.zeros(model.T, model.m)
    try:
        x_base = model.state_vector(h0, s0)
    except DomainError as exc:
        raise InitializationError(f"initial hyperparameters are on a boundary: {exc}") from exc

    jitter_index = updated_hyper_indices(config)
    seeds = np.random.SeedSequence(config.seed).spawn(config.chains)
    model.clamps.reset()

    def run_chain(chain: int):
        rng = np.random.default_rng(seeds[chain])
        x0 = x_base.copy()
        if jitter_index.size:
            x0[jitter_index] += McmcDefaults.CHAIN_JITTER * rng.standard_normal(jitter_index.size)
        try:
            start_ok = math.isfinite(model.log_joint_vector(x0))
        except (DomainError, ModelSpecificationError):
            start_ok = False
        if not start_ok:
            x0 = x_base.copy()
            try:
                if not math.isfinite(model.log_joint_vector(x0)):
                    raise InitializationError("log joint density is not finite at the initial point")
            except (DomainError, ModelSpecificationError) as exc:
                raise InitializationError(f"log joint density fails at the initial point: {exc}") from exc
        return BlockSampler(model, config, x0, rng, chain).run()

    logger.info(
        f"Starting MCMC: {config.chains} chains x {config.iterations} iterations",
        extra={"burn_in": config.burn_in, "thin": config.thin, "seed": config.seed, "workers": config.workers}
    )
    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        results = list(pool.map(run_chain, range(config.chains)))

    clamped = model.clamps.reset()
    if clamped:
        logger.warning(
            f"Linear predictor was clamped {clamped} times during sampling",
            extra={"clamped": clamped, "limit": ModelConfig.LINEAR_PREDICTOR_CLAMP}
        )

    return PosteriorSamples(
        hyper=np.stack([r.hyper for r in results]),
        latent=np.stack([r.latent for r in results]),
        T=model.T,
        m=model.m,
        region_ids=model.regions.ids,
        dates=list(model.panel.dates),
        seed=config.seed,
        config=config,
        log_density=np.stack([r.log_density for r in results]),
        ledger=[r.ledger for r in results]
    )


# ===========================================
# Сводка
# ===========================================

MIN_DRAWS_PER_CHAIN = 4


def _chains_by_draws(ary: np.ndarray) -> np.ndarray:
    return np.atleast_2d(np.asarray(ary, dtype=float))


def split_rhat(ary: np.ndarray) -> float:
    """
    Ранговый split-R̂ по массиву формы (chains, draws).

    NaN, если в цепи меньше четырёх выборок или цепь одна.
    """
    ary = _chains_by_draws(ary)
    if ary.shape[1] < MIN_DRAWS_PER_CHAIN:
        return float("nan")
    return float(az.rhat(ary, method="rank"))


def effective_sample_size(ary: np.ndarray) -> float:
    """Bulk-ESS по массиву формы (chains, draws)."""
    ary = _chains_by_draws(ary)
    if ary.shape[1] < MIN_DRAWS_PER_CHAIN:
        return float("nan")
    return float(az.ess(ary, method="bulk"))


def hyper_dataset(samples: PosteriorSamples):
    """Гиперпараметры как xarray.Dataset с измерениями (chain, draw)."""
    return az.convert_to_dataset({name: samples.param(name) for name in PARAM_NAMES})


def credible_interval(draws: np.ndarray, axis=0) -> Tuple[np.ndarray, np.ndarray]:
    """Равнохвостый 95% интервал (квантили 2.5% и 97.5%)."""
    lo, hi = np.quantile(draws, [0.025, 0.975], axis=axis)
    return lo, hi


class SummaryRow(BaseModel):
    """Строка итоговой таблицы: среднее и 95% интервал параметра."""
    parameter: str
    symbol: str
    mean: float
    lower_95: float
    upper_95: float
    rhat: float
    ess: float

    @property
    def estimate(self) -> str:
        """Запись вида "0.632 (0.573, 0.671)"."""
        return f"{self.mean:.3f} ({self.lower_95:.3f}, {self.upper_95:.3f})"


def posterior_summary(samples: PosteriorSamples) -> List[SummaryRow]:
    """
    Среднее, 95% интервал, split-R̂ и bulk-ESS для двенадцати гиперпараметров.

    Raises:
        DegenerateSummaryError: меньше двух выборок
    """
    if samples.n_total < 2:
        raise DegenerateSummaryError(f"posterior summary needs at least two draws, got {samples.n_total}")
    rows = []
    dataset = hyper_dataset(samples)
    enough = samples.n_draws >= MIN_DRAWS_PER_CHAIN
    rhat = az.rhat(dataset, method="rank") if enough else None
    ess = az.ess(dataset, method="bulk") if enough else None
    for name in PARAM_NAMES:
        flat = samples.param(name).reshape(-1)
        lo, hi = credible_interval(flat)
        rows.append(SummaryRow(
            parameter=name,
            symbol=PARAM_SYMBOLS[name],
            mean=float(np.mean(flat)),
            lower_95=float(lo),
            upper_95=float(hi),
            rhat=float(rhat[name]) if enough else math.nan,
            ess=float(ess[name]) if enough else math.nan
        ))
    return rows


# ===========================================
# Поле относительного риска по выборкам
# ===========================================

def posterior_linear_predictor(
    samples: PosteriorSamples,
    model: RiskModel,
    max_draws: Optional[int] = DiagnosticsConfig.MAX_DRAWS
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Обрезанный линейный предиктор по выборкам.

    Returns:
        (индексы выборок в плоском порядке, η формы (draws, m, T))
    """
    idx = samples.draw_indices(max_draws)
    hyper = samples.flat_hyper()[idx]
    latent = samples.flat_latent()[idx]
    T, m = samples.T, samples.m
    temporal = latent[:, :T] + latent[:, T:2 * T]
    spatial = latent[:, 2 * T:2 * T + m] + latent[:, 2 * T + m:]
    eta = (hyper[:, MU, None, None] + hyper[:, BETA, None, None] * model.d[None, :, None]
           + temporal[:, None, :] + spatial[:, :, None])
    limit = ModelConfig.LINEAR_PREDICTOR_CLAMP
    n = int(np.count_nonzero(np.abs(eta) > limit))
    if n:
        model.clamps.add(n)
        eta = np.clip(eta, -limit, limit)
    return idx, eta


class RelativeRiskSummary(BaseModel):
    """Апостериорное среднее и 95% интервал θ_it."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    mean: np.ndarray
    lower_95: np.ndarray
    upper_95: np.ndarray


def relative_risk_summary(
    samples: PosteriorSamples,
    model: RiskModel,
    max_draws: Optional[int] = DiagnosticsConfig.MAX_DRAWS
) -> RelativeRiskSummary:
    """Сводка поля относительного риска по (регион, день)."""
    _, eta = posterior_linear_predictor(samples, model, max_draws)
    theta = np.exp(eta)
    lo, hi = credible_interval(theta, axis=0)
    return RelativeRiskSummary(mean=theta.mean(axis=0), lower_95=lo, upper_95=hi)
