"""
Утилиты проекта.

Логирование и circuit breaker для численных сбоев.
"""

from .logger import get_logger, setup_logger
from .breaker import CircuitBreaker, CircuitState

__all__ = [
    'get_logger',
    'setup_logger',
    'CircuitBreaker',
    'CircuitState'
]
