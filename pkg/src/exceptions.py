#!/usr/bin/env python3
"""
Иерархия исключений проекта.

CLI сопоставляет семейства исключений с кодами выхода:
ConfigError -> 2, DataError -> 3, NumericalError/ContractError -> 4.
"""


class DiseaseMapError(Exception):
    """Базовое исключение проекта."""
    pass


class ConfigError(DiseaseMapError):
    """Ошибка конфигурации запуска или отсутствующий артефакт."""
    pass


class DataError(DiseaseMapError):
    """Ошибка входных данных (с указанием файла и строки)."""
    pass


class ContractError(DiseaseMapError, ValueError):
    """Нарушено предусловие операции."""
    pass


class NumericalError(DiseaseMapError):
    """Численный сбой."""
    pass


class DomainError(NumericalError, ValueError):
    """Параметр вне области определения распределения или преобразования."""
    pass


class ModelSpecificationError(NumericalError):
    """Матрица точности не прошла проверку положительной определённости."""

    def __init__(self, message: str, omega: float = float('nan'), eigenvalue: float = float('nan')):
        super().__init__(message)
        self.omega = omega
        self.eigenvalue = eigenvalue


class InitializationError(NumericalError):
    """Нефинитная целевая функция в начальной точке."""
    pass


class SamplerAbortError(NumericalError):
    """Сэмплер остановлен circuit breaker'ом блока."""

    def __init__(self, message: str, block: str = ""):
        super().__init__(message)
        self.block = block


class DegenerateSummaryError(NumericalError):
    """Сводка по одной выборке не определена."""
    pass
