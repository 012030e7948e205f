#!/usr/bin/env python3
"""
Sampler - адаптивный блочный Metropolis-within-Gibbs.

Блоки: латентные δ, ε, ζ, ξ (многомерные предложения, предобусловленные
априорной точностью компоненты плюс ожидаемой информацией наблюдений)
и подблоки гиперпараметров observation, fixed_effects, temporal, spatial
(предложения по эмпирической ковариации истории burn-in).

Масштабы предложений адаптируются по окнам в течение burn-in и
замораживаются после него. Каждый блок защищён circuit breaker'ом.
"""

import math
import time
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.linalg import LinAlgError, cholesky, solve_triangular

from src.config import McmcDefaults
from src.exceptions import DomainError, ModelSpecificationError
from src.services.priors import PARAM_INDEX, PARAM_NAMES, unconstrained_to_natural
from src.services.risk_model import LATENT_BLOCKS, RiskModel
from src.utils.breaker import CircuitBreaker
from src.utils.logger import get_logger

logger = get_logger(__name__)

HYPER_BLOCKS: Dict[str, Tuple[str, ...]] = {
    "observation": ("phi", "alpha"),
    "fixed_effects": ("mu", "beta"),
    "temporal": ("tau_delta", "tau_eps", "psi1", "psi2"),
    "spatial": ("tau_zeta", "omega", "tau_xi", "phi_bym"),
}

# Слагаемые плотности, которые зависят от координат блока
BLOCK_TERMS: Dict[str, Tuple[str, ...]] = {
    "delta": ("observation", "rw2", "constraint"),
    "eps": ("observation", "ar2"),
    "zeta": ("observation", "distance", "constraint"),
    "xi": ("observation", "bym", "constraint"),
    "observation": ("observation", "prior"),
    "fixed_effects": ("observation", "prior"),
    "temporal": ("rw2", "ar2", "prior"),
    "spatial": ("distance", "bym", "prior"),
}

ALL_BLOCKS: Tuple[str, ...] = LATENT_BLOCKS + tuple(HYPER_BLOCKS)

# Оптимальный множитель масштаба случайного блуждания 2.38²/d
RW_SCALING = 2.38 ** 2
# Доля предложений из фиксированного распределения MVN(0, 0.01/d·I)
FIXED_PROPOSAL_WEIGHT = 0.05
FIXED_PROPOSAL_VARIANCE = 0.01


class McmcConfig(BaseModel):
    """Параметры запуска MCMC."""
    model_config = ConfigDict(frozen=True)

    chains: int = Field(default=McmcDefaults.CHAINS, ge=1)
    iterations: int = Field(default=McmcDefaults.ITERATIONS, ge=1)
    burn_in: int = Field(default=McmcDefaults.BURN_IN, ge=0)
    thin: int = Field(default=McmcDefaults.THIN, ge=1)
    seed: int = Field(default=McmcDefaults.SEED, ge=0)
    adapt_window: int = Field(default=McmcDefaults.ADAPT_WINDOW, ge=1)
    target_acceptance: float = Field(default=McmcDefaults.TARGET_BLOCK, gt=0, lt=1)
    target_scalar: float = Field(default=McmcDefaults.TARGET_SCALAR, gt=0, lt=1)
    scalar_hyper: bool = False  # обновлять гиперпараметры по одному
    workers: int = Field(default=McmcDefaults.WORKERS, ge=1)
    breaker_threshold: int = Field(default=McmcDefaults.BREAKER_THRESHOLD, ge=1)
    blocks: Optional[List[str]] = None  # None - все блоки

    @field_validator('blocks')
    @classmethod
    def validate_blocks(cls, v):
        if v is None:
            return v
        known = set(ALL_BLOCKS) | set(PARAM_NAMES)
        unknown = [b for b in v if b not in known]
        if unknown:
            raise ValueError(f"unknown sampler blocks: {unknown}")
        if not v:
            raise ValueError("at least one block must be updated")
        return v

    @model_validator(mode='after')
    def validate_lengths(self):
        if self.iterations <= self.burn_in:
            raise ValueError(f"iterations ({self.iterations}) must exceed burn_in ({self.burn_in})")
        if (self.iterations - self.burn_in) < self.thin:
            raise ValueError("no draws would be retained after burn-in and thinning")
        return self

    @property
    def draws_per_chain(self) -> int:
        return (self.iterations - self.burn_in) // self.thin


class WindowRecord(BaseModel):
    """Итоги одного окна адаптации блока."""
    window: int
    start: int
    acceptance: float
    scale: float
    adapting: bool


class BlockLedger(BaseModel):
    """Журнал принятий и масштабов блока в одной цепи."""
    name: str
    target: float
    windows: List[WindowRecord] = Field(default_factory=list)
    accepted: int = 0
    proposed: int = 0
    accepted_after_burn_in: int = 0
    proposed_after_burn_in: int = 0
    failures: int = 0

    @property
    def acceptance_rate(self) -> float:
        if not self.proposed_after_burn_in:
            return float('nan')
        return self.accepted_after_burn_in / self.proposed_after_burn_in

    @property
    def frozen_scales(self) -> List[float]:
        return [w.scale for w in self.windows if not w.adapting]


class ChainResult(BaseModel):
    """Сохранённые выборки одной цепи."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    chain: int
    hyper: np.ndarray  # (draws, 12) естественная шкала
    latent: np.ndarray  # (draws, 2T+2m)
    log_density: np.ndarray  # (draws,)
    ledger: Dict[str, BlockLedger]
    seconds: float


class _Block:
    """Состояние предложений одного блока."""

    def __init__(self, name: str, index: np.ndarray, terms: Tuple[str, ...], target: float, latent: bool):
        self.name = name
        self.index = index
        self.terms = terms
        self.latent = latent
        self.dim = index.size
        self.log_scale = 0.0
        self.factor = np.eye(self.dim) * (McmcDefaults.INITIAL_HYPER_STEP if not latent else 1.0)
        self.window_accepted = 0
        self.window_proposed = 0
        self.ledger = BlockLedger(name=name, target=target)

    @property
    def scale(self) -> float:
        return math.exp(self.log_scale)


def _scalar_terms(name: str) -> Tuple[str, ...]:
    for group, members in HYPER_BLOCKS.items():
        if name in members:
            return BLOCK_TERMS[group]
    raise KeyError(name)


class BlockSampler:
    """
    Одна цепь адаптивного блочного Metropolis-within-Gibbs.

    Цепь владеет своим генератором случайных чисел и своими circuit breaker'ами;
    модель используется только для чтения.
    """

    def __init__(
        self,
        model: RiskModel,
        config: McmcConfig,
        x0: np.ndarray,
        rng: np.random.Generator,
        chain: int = 0
    ):
        self.model = model
        self.config = config
        self.rng = rng
        self.chain = chain
        self.x = np.array(x0, dtype=float)
        self.blocks = self._build_blocks()
        self.breakers = {
            b.name: CircuitBreaker(failure_threshold=config.breaker_threshold, name=b.name, chain=chain)
            for b in self.blocks
        }
        self.terms = model.terms_vector(self.x)
        self.hyper_history: List[np.ndarray] = []

    def _build_blocks(self) -> List[_Block]:
        cfg = self.config
        selected = set(cfg.blocks) if cfg.blocks else None
        blocks: List[_Block] = []
        for name in LATENT_BLOCKS:
            if selected is None or name in selected:
                sl = self.model.slices[name]
                blocks.append(_Block(name, np.arange(sl.start, sl.stop), BLOCK_TERMS[name],
                                     cfg.target_acceptance, latent=True))
        for group, members in HYPER_BLOCKS.items():
            whole = selected is None or group in selected
            if whole and not cfg.scalar_hyper:
                index = np.array([PARAM_INDEX[n] for n in members])
                blocks.append(_Block(group, index, BLOCK_TERMS[group], cfg.target_acceptance, latent=False))
                continue
            for name in members:
                if whole or name in selected:
                    blocks.append(_Block(name, np.array([PARAM_INDEX[name]]), _scalar_terms(name),
                                         cfg.target_scalar, latent=False))
        return blocks

    # ----- предобусловливание -----

    def _update_latent_preconditioners(self) -> None:
        """Предложения ~ MVN(0, c·(Q_prior + diag I_obs)⁻¹) для латентных блоков."""
        latent = [b for b in self.blocks if b.latent]
        if not latent:
            return
        try:
            hv = unconstrained_to_natural(self.x[self.model.slices["hyper"]], self.model.priors)
            info = self.model.observation_information(hv, self.x)
        except (DomainError, ModelSpecificationError):
            return
        for block in latent:
            diag = info.sum(axis=0) if block.name in ("delta", "eps") else info.sum(axis=1)
            try:
                P = self.model.latent_precision(block.name, hv) + np.diag(diag)
                P = P + 1e-8 * np.mean(np.diag(P)) * np.eye(block.dim)
                L = cholesky(P, lower=True)
                block.factor = solve_triangular(L.T, np.eye(block.dim), lower=False)
            except (LinAlgError, DomainError, ModelSpecificationError, ValueError):
                block.factor = np.diag(1.0 / np.sqrt(np.maximum(diag, 1e-8) + 1.0))

    def _update_hyper_covariance(self, block: _Block) -> None:
        history = np.array(self.hyper_history)
        if history.shape[0] < 2 * block.dim + 2:
            return
        recent = history[history.shape[0] // 2:, block.index]
        cov = np.atleast_2d(np.cov(recent, rowvar=False)) + 1e-6 * np.eye(block.dim)
        try:
            block.factor = cholesky(cov, lower=True)
        except LinAlgError:
            pass

    # ----- шаг -----

    def _propose(self, block: _Block) -> np.ndarray:
        z = self.rng.standard_normal(block.dim)
        if not block.latent and self.rng.random() < FIXED_PROPOSAL_WEIGHT:
            return z * math.sqrt(FIXED_PROPOSAL_VARIANCE / block.dim)
        return block.scale * math.sqrt(RW_SCALING / block.dim) * (block.factor @ z)

    def _step(self, block: _Block, after_burn_in: bool) -> None:
        proposal = self.x.copy()
        proposal[block.index] += self._propose(block)
        breaker = self.breakers[block.name]

        accepted = False
        try:
            new_terms = self.model.terms_vector(proposal, block.terms)
            log_ratio = sum(new_terms[t] - self.terms[t] for t in block.terms)
        except (DomainError, ModelSpecificationError) as exc:
            block.ledger.failures += 1
            breaker.record_failure(str(exc))
        else:
            if not math.isfinite(log_ratio):
                block.ledger.failures += 1
                breaker.record_failure("non-finite log density")
            else:
                breaker.record_success()
                if log_ratio >= 0 or math.log(self.rng.random()) < log_ratio:
                    self.x = proposal
                    self.terms.update(new_terms)
                    accepted = True

        block.window_proposed += 1
        block.ledger.proposed += 1
        if accepted:
            block.window_accepted += 1
            block.ledger.accepted += 1
        if after_burn_in:
            block.ledger.proposed_after_burn_in += 1
            block.ledger.accepted_after_burn_in += int(accepted)

    def _close_window(self, window: int, start: int, adapting: bool) -> None:
        for block in self.blocks:
            acc = block.window_accepted / max(block.window_proposed, 1)
            if adapting:
                if block.window_accepted == 0:
                    logger.warning(
                        f"Block {block.name} rejected every proposal in window {window}",
                        extra={"block": block.name, "chain": self.chain, "window": window,
                               "scale": block.scale}
                    )
                block.log_scale += 3.0 * (acc - block.ledger.target) / math.sqrt(window)
                if not block.latent:
                    self._update_hyper_covariance(block)
            block.ledger.windows.append(WindowRecord(
                window=window, start=start, acceptance=acc, scale=block.scale, adapting=adapting
            ))
            block.window_accepted = 0
            block.window_proposed = 0
        if adapting:
            self._update_latent_preconditioners()

    def run(self) -> ChainResult:
        """Прогон цепи: burn-in с адаптацией, затем замороженные предложения."""
        cfg = self.config
        started = time.monotonic()
        self._update_latent_preconditioners()

        n_keep = cfg.draws_per_chain
        hyper = np.empty((n_keep, len(PARAM_NAMES)))
        latent = np.empty((n_keep, self.model.dimension - len(PARAM_NAMES)))
        log_density = np.empty(n_keep)
        kept = 0
        window, window_start = 1, 0

        for it in range(cfg.iterations):
            after_burn_in = it >= cfg.burn_in
            for block in self.blocks:
                self._step(block, after_burn_in)
            if not after_burn_in:
                self.hyper_history.append(self.x[self.model.slices["hyper"]].copy())

            if (it + 1 - window_start) == cfg.adapt_window or it + 1 == cfg.burn_in:
                self._close_window(window, window_start, adapting=not after_burn_in)
                window += 1
                window_start = it + 1

            if after_burn_in and (it - cfg.burn_in) % cfg.thin == cfg.thin - 1 and kept < n_keep:
                v = self.x[self.model.slices["hyper"]]
                hyper[kept] = unconstrained_to_natural(v, self.model.priors)
                latent[kept] = self.x[len(PARAM_NAMES):]
                log_density[kept] = sum(self.terms.values())
                kept += 1

        if window_start < cfg.iterations:
            self._close_window(window, window_start, adapting=False)

        seconds = time.monotonic() - started
        logger.info(
            f"Chain {self.chain} finished in {seconds:.1f}s",
            extra={
                "chain": self.chain,
                "acceptance": {b.name: round(b.ledger.acceptance_rate, 3) for b in self.blocks},
            }
        )
        return ChainResult(
            chain=self.chain,
            hyper=hyper,
            latent=latent,
            log_density=log_density,
            ledger={b.name: b.ledger for b in self.blocks},
            seconds=seconds
        )
