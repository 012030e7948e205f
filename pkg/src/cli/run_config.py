#!/usr/bin/env python3
"""
Run Config - параметры одного запуска командной строки.

Файл конфигурации - плоский текст key=value (читается через dotenv_values),
любой ключ переопределяется флагом --key value, каталог вывода - ещё и
переменной окружения DISEASEMAP_OUTPUT_DIR.
"""

from pathlib import Path
from typing import Any, Dict, Iterable, List, Literal, Mapping, Optional

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from src.config import DiagnosticsConfig, ForecastConfig, McmcDefaults, ModelConfig, OutputConfig
from src.exceptions import ConfigError
from src.services.latent_components import BymConvention
from src.services.sampler import McmcConfig
from src.utils.logger import get_logger

logger = get_logger(__name__)

PATH_KEYS = ("counts", "regions", "adjacency", "merge", "output_dir")


class RunConfig(BaseModel):
    """Параметры запуска: входные файлы, опции модели, MCMC, прогноз, вывод."""
    model_config = ConfigDict(frozen=True, extra='forbid')

    # Входные файлы
    counts: Optional[Path] = None
    regions: Optional[Path] = None
    adjacency: Optional[Path] = None
    merge: Optional[Path] = None
    count_mode: Literal['cumulative', 'daily'] = 'cumulative'

    # Модель
    bym_convention: BymConvention = BymConvention(ModelConfig.BYM_CONVENTION)
    scale_besag: bool = ModelConfig.SCALE_BESAG
    sum_to_zero: bool = True

    # MCMC
    chains: int = Field(default=McmcDefaults.CHAINS, ge=1)
    iterations: int = Field(default=McmcDefaults.ITERATIONS, ge=1)
    burn_in: int = Field(default=McmcDefaults.BURN_IN, ge=0)
    thin: int = Field(default=McmcDefaults.THIN, ge=1)
    seed: int = Field(default=McmcDefaults.SEED, ge=0)
    adapt_window: int = Field(default=McmcDefaults.ADAPT_WINDOW, ge=1)
    target_acceptance: float = Field(default=McmcDefaults.TARGET_BLOCK, gt=0, lt=1)
    workers: int = Field(default=McmcDefaults.WORKERS, ge=1)
    use_mode: bool = False

    # Диагностика и прогноз
    bins: int = Field(default=DiagnosticsConfig.BINS, ge=2)
    max_draws: int = Field(default=DiagnosticsConfig.MAX_DRAWS, ge=1)
    horizon: int = Field(default=ForecastConfig.HORIZON, ge=0)

    # Синтетический сценарий (команда simulate)
    sim_rows: int = Field(default=2, ge=1)
    sim_cols: int = Field(default=3, ge=1)
    sim_days: int = Field(default=60, ge=3)
    sim_seed: int = Field(default=1, ge=0)
    sim_rate: float = Field(default=5e-5, gt=0)

    output_dir: Path = OutputConfig.DEFAULT_DIR

    @model_validator(mode='after')
    def validate_mcmc(self):
        # Ошибки длины цепи ловим сразу, до чтения данных
        try:
            self.mcmc()
        except ValidationError as exc:
            raise ValueError(exc.errors()[0]["msg"]) from None
        return self

    def mcmc(self) -> McmcConfig:
        return McmcConfig(
            chains=self.chains,
            iterations=self.iterations,
            burn_in=self.burn_in,
            thin=self.thin,
            seed=self.seed,
            adapt_window=self.adapt_window,
            target_acceptance=self.target_acceptance,
            workers=self.workers
        )

    def model_options(self) -> Dict[str, Any]:
        return {
            "bym_convention": self.bym_convention,
            "scale_besag": self.scale_besag,
            "sum_to_zero": self.sum_to_zero,
        }

    def require_inputs(self, keys: Iterable[str] = ("counts", "regions", "adjacency")) -> None:
        """
        Проверка, что нужные входные файлы заданы и существуют.

        Raises:
            ConfigError: файл не задан или не найден
        """
        for key in list(keys) + (["merge"] if self.merge is not None else []):
            path = getattr(self, key)
            if path is None:
                raise ConfigError(f"configuration key '{key}' is required for this command")
            if not Path(path).is_file():
                raise ConfigError(f"input file for '{key}' not found: {path}")


def option_names() -> List[str]:
    return list(RunConfig.model_fields)


def read_config_file(path: Path) -> Dict[str, str]:
    """
    Плоский файл key=value; относительные пути - от каталога файла.

    Raises:
        ConfigError: файла нет или ключ неизвестен
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"configuration file not found: {path}")
    raw = dotenv_values(path)
    known = set(option_names())
    values: Dict[str, str] = {}
    for key, value in raw.items():
        name = key.strip().lower()
        if name not in known:
            raise ConfigError(f"{path}: unknown configuration key '{key}'")
        if value is None or value.strip() == "":
            continue
        value = value.strip()
        if name in PATH_KEYS and not Path(value).is_absolute():
            value = str((path.parent / value).resolve())
        values[name] = value
    return values


def build_run_config(
    config_path: Optional[Path] = None,
    overrides: Optional[Mapping[str, Optional[str]]] = None
) -> RunConfig:
    """
    Сборка RunConfig: файл → окружение (только output_dir) → флаги командной строки.

    Raises:
        ConfigError: неизвестный ключ или значение не проходит валидацию
    """
    values: Dict[str, str] = read_config_file(config_path) if config_path is not None else {}
    env_dir = OutputConfig.env_override()
    if env_dir:
        values["output_dir"] = env_dir
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    try:
        config = RunConfig(**values)
    except ValidationError as exc:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in e['loc']) or 'config'}: {e['msg']}" for e in exc.errors()
        )
        raise ConfigError(f"invalid run configuration: {problems}") from None
    logger.debug("Run configuration resolved", extra={"config": config.model_dump(mode='json')})
    return config
