#!/usr/bin/env python3
"""
Сквозной запуск конвейера DiseaseMap Engine.

fit → diagnose → forecast → report для одного файла конфигурации;
остальные аргументы передаются каждой команде как флаги.

    python run_all.py data/toy/toy.conf --chains 2 --iterations 400 --burn_in 200
"""

import sys
import time
from pathlib import Path
from typing import List, Optional

# Корневая директория проекта - тот же каталог, где лежит этот скрипт
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

from dotenv import load_dotenv

load_dotenv()

from src.cli.main import EXIT_CONFIG, EXIT_OK, main as run_command
from src.utils.logger import get_logger

logger = get_logger(__name__)

PIPELINE = ("fit", "diagnose", "forecast", "report")


def run_pipeline(config_path: Path, extra: Optional[List[str]] = None) -> int:
    """
    Последовательный запуск шагов конвейера.

    Returns:
        Код выхода первого неуспешного шага или 0
    """
    extra = list(extra or [])
    started = time.monotonic()
    logger.info("=" * 60)
    logger.info(f"DiseaseMap Engine - pipeline for {config_path}")
    logger.info("=" * 60)

    for step in PIPELINE:
        logger.info(f"Running step '{step}'")
        code = run_command([step, "--config", str(config_path)] + extra)
        if code != EXIT_OK:
            logger.error(f"[FAIL] step '{step}' exited with code {code}, stopping")
            return code
        logger.info(f"[OK] {step}")

    logger.info("=" * 60)
    logger.info(f"Pipeline finished in {time.monotonic() - started:.1f}s")
    logger.info("=" * 60)
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if not argv:
        print("usage: run_all.py CONFIG [--key value ...]", file=sys.stderr)
        return EXIT_CONFIG
    return run_pipeline(Path(argv[0]), argv[1:])


if __name__ == "__main__":
    sys.exit(main())
