#!/usr/bin/env python3
"""
Централизованная конфигурация проекта.

Все переменные окружения и численные настройки в одном месте.
"""

import os
from pathlib import Path
from typing import Optional
from dotenv import load_dotenv

load_dotenv()

# Корневая директория проекта
PROJECT_ROOT = Path(__file__).parent.parent


class LoggingConfig:
    """Конфигурация логирования."""
    LEVEL: str = os.getenv('LOG_LEVEL', 'INFO').upper()
    JSON_FORMAT: bool = os.getenv('LOG_JSON_FORMAT', 'true').lower() == 'true'
    TO_FILE: bool = os.getenv('LOG_TO_FILE', 'true').lower() == 'true'
    LOG_DIR: Path = Path(os.getenv('LOG_DIR', str(PROJECT_ROOT / 'logs')))


class OutputConfig:
    """Конфигурация каталога результатов."""
    # Единственная опция запуска, которую можно переопределить из окружения
    DIR_ENV: str = 'DISEASEMAP_OUTPUT_DIR'
    DEFAULT_DIR: Path = PROJECT_ROOT / 'output'

    @classmethod
    def env_override(cls) -> Optional[str]:
        """Каталог результатов из окружения (если задан)."""
        value = os.getenv(cls.DIR_ENV, '').strip()
        return value or None


class ModelConfig:
    """Константы модели относительного риска."""
    LINEAR_PREDICTOR_CLAMP: float = 50.0
    SUM_TO_ZERO_PRECISION: float = 1e6
    PINV_RELATIVE_CUTOFF: float = 1e-10
    BYM_CONVENTION: str = 'as_printed'
    SCALE_BESAG: bool = True


class GpConfig:
    """Константы обобщённого распределения Пуассона."""
    TAIL_TOLERANCE: float = 1e-12
    WINDOW_SD: float = 50.0
    MAX_SUPPORT: int = 10 ** 7
    # Бюджет элементов сетки при векторном суммировании cdf
    CDF_CHUNK_CELLS: int = 4_000_000
    SAMPLER_BATCH: int = 32_768
    SAMPLER_FIRST_BLOCK: int = 64


class McmcDefaults:
    """Параметры MCMC по умолчанию."""
    CHAINS: int = 4
    ITERATIONS: int = 4000
    BURN_IN: int = 2000
    THIN: int = 2
    SEED: int = 20200913
    ADAPT_WINDOW: int = 100
    TARGET_BLOCK: float = 0.30
    TARGET_SCALAR: float = 0.44
    WORKERS: int = 1
    BREAKER_THRESHOLD: int = 200
    INITIAL_HYPER_STEP: float = 0.1
    CHAIN_JITTER: float = 0.1
    MODE_RADIUS: float = 5.0
    MODE_MAX_ITER: int = 2000
    MODE_RESTARTS: int = 3


class DiagnosticsConfig:
    """Параметры диагностики калибровки."""
    BINS: int = 20
    WEIGHT_DEGENERACY: float = 0.5
    FLAG_QUANTILE: float = 0.01
    MAX_DRAWS: int = 1000


class ForecastConfig:
    """Параметры прогноза."""
    HORIZON: int = 4
    COUNTRY_ID: str = 'COUNTRY'
