#!/usr/bin/env python3
"""
Логирование - настройка структурированного логирования.

Предоставляет JSON формат логирования (python-json-logger) для всех модулей системы.
"""

import logging
import sys
from datetime import datetime, timezone
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Any, Dict, Optional

from pythonjsonlogger import jsonlogger

from src.config import LoggingConfig

CONSOLE_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
CONSOLE_DATEFMT = '%Y-%m-%d %H:%M:%S'


class CustomJsonFormatter(jsonlogger.JsonFormatter):
    """Кастомный JSON форматтер с дополнительными полями."""

    def add_fields(
        self,
        log_record: Dict[str, Any],
        record: logging.LogRecord,
        message_dict: Dict[str, Any]
    ) -> None:
        """Добавление служебных полей к записи."""
        super().add_fields(log_record, record, message_dict)
        log_record["timestamp"] = datetime.now(timezone.utc).isoformat()
        log_record["level"] = record.levelname
        log_record["logger"] = record.name
        log_record["module"] = record.module
        log_record["function"] = record.funcName
        log_record["line"] = record.lineno
        log_record["process_id"] = record.process
        log_record["thread_id"] = record.thread


def setup_logger(
    name: str,
    log_file: Optional[str] = None,
    level: int = logging.INFO,
    json_format: bool = True,
    console_output: bool = True
) -> logging.Logger:
    """
    Настройка логгера с JSON форматом.

    Args:
        name: Имя логгера
        log_file: Путь к файлу лога (опционально)
        level: Уровень логирования
        json_format: Использовать JSON формат в файле (по умолчанию True)
        console_output: Выводить в консоль (по умолчанию True)

    Returns:
        Настроенный логгер
    """
    logger = logging.getLogger(name)
    logger.setLevel(level)
    logger.propagate = False

    # Удаляем существующие обработчики
    for handler in list(logger.handlers):
        handler.close()
    logger.handlers.clear()

    readable = logging.Formatter(CONSOLE_FORMAT, datefmt=CONSOLE_DATEFMT)

    # Обработчик для файла (с ротацией)
    if log_file:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        file_handler = RotatingFileHandler(
            log_file,
            maxBytes=10 * 1024 * 1024,  # 10 MB
            backupCount=5,
            encoding='utf-8'
        )
        if json_format:
            file_handler.setFormatter(CustomJsonFormatter(json_ensure_ascii=False))
        else:
            file_handler.setFormatter(readable)
        logger.addHandler(file_handler)

    # В консоль выводим читаемый формат, даже если в файл пишем JSON
    if console_output:
        console_handler = logging.StreamHandler(sys.stderr)
        console_handler.setFormatter(readable)
        logger.addHandler(console_handler)

    return logger


def get_logger(name: str, log_file: Optional[str] = None) -> logging.Logger:
    """
    Получить настроенный логгер.

    Args:
        name: Имя логгера (обычно __name__)
        log_file: Путь к файлу лога (опционально, по умолчанию LOG_DIR/{module}.log)

    Returns:
        Настроенный логгер
    """
    if not log_file and LoggingConfig.TO_FILE:
        module_name = name.split('.')[-1] if '.' in name else name

        # Если модуль запущен как скрипт
        if module_name == "__main__":
            argv0 = sys.argv[0] if sys.argv and sys.argv[0] else ""
            module_name = Path(argv0).stem or "main"

        log_file = str(LoggingConfig.LOG_DIR / f"{module_name}.log")

    level = getattr(logging, LoggingConfig.LEVEL, logging.INFO)

    return setup_logger(
        name=name,
        log_file=log_file,
        level=level,
        json_format=LoggingConfig.JSON_FORMAT,
        console_output=True
    )
