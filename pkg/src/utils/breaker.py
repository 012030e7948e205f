#!/usr/bin/env python3
"""
Circuit breaker для численных сбоев сэмплера.

Считает подряд идущие нефинитные предложения блока и останавливает цепь,
когда сбои становятся устойчивыми.
"""

import threading
from enum import Enum
from typing import Optional

from src.exceptions import SamplerAbortError
from src.utils.logger import get_logger

logger = get_logger(__name__)


class CircuitState(Enum):
    """Состояния circuit breaker."""
    CLOSED = "closed"  # Нормальная работа
    OPEN = "open"  # Блок признан неисправным, цепь останавливается


class CircuitBreaker:
    """
    Circuit Breaker для защиты от зацикливания на нефинитной плотности.

    Принцип работы:
    - CLOSED: предложения оцениваются нормально, нефинитные просто отклоняются
    - OPEN: после N нефинитных предложений подряд блок открывается и
      record_failure() выбрасывает SamplerAbortError с именем блока
    """

    def __init__(
        self,
        failure_threshold: int = 200,
        name: str = "circuit_breaker",
        chain: Optional[int] = None
    ):
        """
        Args:
            failure_threshold: Количество сбоев подряд для открытия
            name: Имя блока для логирования
            chain: Номер цепи (для контекста логов)
        """
        self.failure_threshold = failure_threshold
        self.name = name
        self.chain = chain

        self.state = CircuitState.CLOSED
        self.failure_count = 0
        self.total_failures = 0
        self._lock = threading.Lock()

    def record_success(self) -> None:
        """Обработка финитного предложения."""
        with self._lock:
            self.failure_count = 0

    def record_failure(self, reason: str = "") -> None:
        """
        Обработка нефинитного предложения.

        Raises:
            SamplerAbortError: Если порог сбоев подряд достигнут
        """
        with self._lock:
            self.failure_count += 1
            self.total_failures += 1

            if self.state == CircuitState.CLOSED and self.failure_count >= self.failure_threshold:
                logger.warning(
                    f"Circuit breaker {self.name} transitioning to OPEN "
                    f"(failure_count={self.failure_count} >= threshold={self.failure_threshold})",
                    extra={"block": self.name, "chain": self.chain, "reason": reason}
                )
                self.state = CircuitState.OPEN

            if self.state == CircuitState.OPEN:
                raise SamplerAbortError(
                    f"Block '{self.name}' produced {self.failure_count} consecutive "
                    f"non-finite proposals (chain {self.chain}): {reason}",
                    block=self.name
                )
