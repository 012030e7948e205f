#!/usr/bin/env python3
"""
Командная строка: fit, simulate, diagnose, forecast, report.

    python -m src.cli fit --config data/toy/toy.conf --chains 2

Коды выхода: 0 - успех, 2 - ошибка конфигурации (в том числе нет нужного
артефакта), 3 - ошибка данных, 4 - численный сбой или нарушение контракта.
"""

import argparse
import sys
import time
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

from pydantic import ValidationError

from src import __version__
from src.cli.run_config import RunConfig, build_run_config, option_names
from src.data.loader import load_counts, load_regions, merge_panel, merge_regions, read_merge
from src.data.samples_store import find_samples, load_samples, save_samples
from src.exceptions import ConfigError, ContractError, DataError, DiseaseMapError, NumericalError
from src.services.data_exporter import DataExporter
from src.services.diagnostics import calibration_report
from src.services.forecast import fitted_country_series, forecast
from src.services.inference import PosteriorSamples, posterior_summary, relative_risk_summary, run_mcmc
from src.services.risk_model import CountPanel, RegionTable, RiskModel, standardized_incidence_ratio
from src.services.simulate import DEFAULT_TRUTH, ScenarioSpec, grid_regions, simulate_panel
from src.utils.logger import get_logger

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4

COMMANDS = ("fit", "simulate", "diagnose", "forecast", "report")


# ===========================================
# Загрузка входных данных
# ===========================================

def load_inputs(config: RunConfig) -> Tuple[CountPanel, RegionTable]:
    """
    Регионы и панель по конфигурации (с директивой слияния).

    Raises:
        ConfigError: не заданы или не найдены входные файлы
        DataError: файлы не разбираются или не согласованы
    """
    config.require_inputs()
    regions = load_regions(config.regions, config.adjacency)
    panel = load_counts(config.counts, config.count_mode, regions.ids)
    if config.merge is not None:
        mapping = read_merge(config.merge)
        regions = merge_regions(regions, mapping)
        panel = merge_panel(panel, mapping)
    try:
        return panel.aligned_to(regions), regions
    except ContractError as exc:
        raise DataError(str(exc)) from None


def load_fitted(config: RunConfig) -> Tuple[PosteriorSamples, RiskModel]:
    """
    Выборки предыдущего fit и модель на тех же данных.

    Raises:
        ConfigError: нет файла выборок или он относится к другим данным
    """
    path = find_samples(config.output_dir)
    if not path.is_file():
        raise ConfigError(f"posterior samples not found: {path} (run 'fit' first)")
    panel, regions = load_inputs(config)
    samples = load_samples(path)
    if samples.region_ids != regions.ids or samples.dates != list(panel.dates):
        raise ConfigError(f"posterior samples in {path} were fitted to different regions or dates")
    return samples, RiskModel(panel, regions, **config.model_options())


# ===========================================
# Команды
# ===========================================

def cli_fit(config: RunConfig) -> List[str]:
    """MCMC по данным конфигурации; выборки и итоговая таблица."""
    panel, regions = load_inputs(config)
    model = RiskModel(panel, regions, **config.model_options())
    samples = run_mcmc(panel, regions, config=config.mcmc(), use_mode=config.use_mode, model=model)
    rows = posterior_summary(samples)
    out = config.output_dir
    return [
        save_samples(samples, find_samples(out)),
        DataExporter.export_summary_csv(rows, out),
        DataExporter.export_summary_excel(rows, out),
    ]


def cli_simulate(config: RunConfig) -> List[str]:
    """Синтетический сценарий на сетке регионов в форматах входных файлов."""
    regions = grid_regions(config.sim_rows, config.sim_cols, seed=config.sim_seed)
    spec = ScenarioSpec(
        regions=regions,
        T=config.sim_days,
        hyper=DEFAULT_TRUTH,
        seed=config.sim_seed,
        incidence_rate=config.sim_rate,
        bym_convention=config.bym_convention,
        scale_besag=config.scale_besag
    )
    panel, latent, _ = simulate_panel(spec)
    out = config.output_dir
    return (
        DataExporter.export_regions(regions, out)
        + [DataExporter.export_counts(panel, out, mode=config.count_mode)]
        + DataExporter.export_truth(spec.hyper, latent, panel, out)
    )


def cli_diagnose(config: RunConfig) -> List[str]:
    """CPO/PIT по ячейкам и гистограмма средней PIT."""
    samples, model = load_fitted(config)
    report = calibration_report(
        samples, model.panel, model.regions, model=model, bins=config.bins, max_draws=config.max_draws
    )
    return DataExporter.export_calibration(report, model.panel, config.output_dir)


def cli_forecast(config: RunConfig) -> List[str]:
    """Прогноз на horizon дней вперёд."""
    if config.horizon == 0:
        logger.info("Forecast horizon is 0, nothing to forecast")
        return []
    samples, model = load_fitted(config)
    result = forecast(samples, model, k=config.horizon, seed=config.seed, max_draws=config.max_draws)
    return [DataExporter.export_forecast(result, config.output_dir)]


def cli_report(config: RunConfig) -> List[str]:
    """Данные для графиков: тренд, пространственные эффекты, ряд по стране, гистограмма PIT."""
    samples, model = load_fitted(config)
    out = config.output_dir
    rr = relative_risk_summary(samples, model, config.max_draws)
    sir = standardized_incidence_ratio(model.panel, model.E)
    series = fitted_country_series(samples, model.panel, model.regions, model=model, max_draws=config.max_draws)
    report = calibration_report(
        samples, model.panel, model.regions, model=model, bins=config.bins, max_draws=config.max_draws
    )
    return [
        DataExporter.export_trend(samples, out),
        DataExporter.export_spatial_effects(samples, model.regions, out, relative_risk=rr, sir=sir),
        DataExporter.export_country_series(series, out),
        DataExporter.export_relative_risk(rr, model.panel, out, sir=sir),
        DataExporter.export_pit_histogram(report, out),
    ]


HANDLERS: Dict[str, Callable[[RunConfig], List[str]]] = {
    "fit": cli_fit,
    "simulate": cli_simulate,
    "diagnose": cli_diagnose,
    "forecast": cli_forecast,
    "report": cli_report,
}


# ===========================================
# Точка входа
# ===========================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="diseasemap",
        description="Spatio-temporal relative-risk mapping with generalized Poisson counts"
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", type=Path, default=None, help="flat key=value configuration file")
    for name in option_names():
        parser.add_argument(f"--{name}", dest=name, default=None, metavar="VALUE")
    return parser


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, DataError):
        return EXIT_DATA
    return EXIT_NUMERICAL


def main(argv: Optional[List[str]] = None) -> int:
    """
    Выполнение одной команды.

    Returns:
        Код выхода
    """
    args = build_parser().parse_args(argv)
    overrides = {name: getattr(args, name) for name in option_names()}
    started = time.monotonic()
    try:
        config = build_run_config(args.config, overrides)
        logger.info(
            f"Command '{args.command}' started",
            extra={"command": args.command, "output_dir": str(config.output_dir)}
        )
        artifacts = HANDLERS[args.command](config)
    except (ConfigError, DataError, ContractError, NumericalError) as exc:
        code = exit_code_for(exc)
        logger.error(f"Command '{args.command}' failed: {exc}", extra={"command": args.command, "exit_code": code})
        print(f"error: {exc}", file=sys.stderr)
        return code
    except ValidationError as exc:
        # Доменные типы, собранные из файлов
        logger.error(f"Command '{args.command}' failed on invalid data: {exc}", extra={"command": args.command})
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DiseaseMapError as exc:
        logger.error(f"Command '{args.command}' failed: {exc}", extra={"command": args.command})
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL

    logger.info(
        f"Command '{args.command}' finished in {time.monotonic() - started:.1f}s",
        extra={"command": args.command, "artifacts": artifacts}
    )
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
