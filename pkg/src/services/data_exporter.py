#!/usr/bin/env python3
"""
Data Exporter - запись артефактов в CSV и Excel.

Итоговая таблица гиперпараметров (CSV + xlsx), отчёт о калибровке,
прогноз, данные для графиков и файлы синтетических сценариев.
Все CSV имеют заголовок, числа с плавающей точкой пишутся с 17 значащими
цифрами, поэтому чтение воспроизводит значения бит в бит.
"""

import csv
from datetime import date, timedelta
from pathlib import Path
from typing import Any, Iterable, List, Optional, Sequence

import numpy as np
from openpyxl import Workbook
from openpyxl.styles import Alignment, Border, Font, PatternFill, Side
from openpyxl.utils import get_column_letter

from src.config import ForecastConfig
from src.services.diagnostics import CalibrationReport, uniformity_chi_square
from src.services.forecast import CountrySeries, ForecastResult
from src.services.inference import (
    PosteriorSamples,
    RelativeRiskSummary,
    SummaryRow,
    credible_interval,
)
from src.services.priors import PARAM_NAMES, HyperParams
from src.services.risk_model import CountPanel, LatentState, RegionTable
from src.utils.logger import get_logger

logger = get_logger(__name__)

SUMMARY_HEADERS = ["parameter", "symbol", "mean", "lower_95", "upper_95", "rhat", "ess", "estimate"]
REGION_HEADERS = ["id", "name", "population", "area_km2", "centroid_x", "centroid_y"]
ADJACENCY_HEADERS = ["id_a", "id_b"]
COUNT_HEADERS = ["date", "region_id", "value"]


def format_value(value: Any) -> str:
    """Строковое представление ячейки: float - 17 значащих цифр, даты - ISO."""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), '.17g')
    if isinstance(value, date):
        return value.isoformat()
    return str(value)


def _directory(path: Path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_csv(path: Path, headers: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    """
    Запись CSV с заголовком.

    Args:
        path: Путь к файлу
        headers: Имена колонок
        rows: Строки значений

    Returns:
        Путь к созданному файлу
    """
    path = Path(path)
    _directory(path.parent)
    count = 0
    with open(path, 'w', newline='', encoding='utf-8') as csvfile:
        writer = csv.writer(csvfile, lineterminator='\n')
        writer.writerow(headers)
        for row in rows:
            writer.writerow([format_value(v) for v in row])
            count += 1
    logger.info(f"Wrote {count} rows to {path}", extra={"artifact": path.name, "rows": count})
    return str(path)


class DataExporter:
    """Запись артефактов запуска в каталог вывода."""

    @staticmethod
    def export_summary_csv(rows: List[SummaryRow], directory: Path, filename: str = "summary.csv") -> str:
        """Итоговая таблица гиперпараметров: среднее, 95% интервал, R̂, ESS."""
        return write_csv(
            _directory(directory) / filename,
            SUMMARY_HEADERS,
            ([r.parameter, r.symbol, r.mean, r.lower_95, r.upper_95, r.rhat, r.ess, r.estimate] for r in rows)
        )

    @staticmethod
    def export_summary_excel(rows: List[SummaryRow], directory: Path, filename: str = "summary.xlsx") -> str:
        """
        Та же итоговая таблица в Excel.

        Args:
            rows: Строки сводки
            directory: Каталог вывода
            filename: Имя файла

        Returns:
            Путь к созданному Excel файлу
        """
        filepath = _directory(directory) / filename

        wb = Workbook()
        ws = wb.active
        ws.title = "Posterior summary"

        # Стили заголовков
        header_fill = PatternFill(start_color="4472C4", end_color="4472C4", fill_type="solid")
        header_font = Font(bold=True, color="FFFFFF", size=11)
        header_alignment = Alignment(horizontal="center", vertical="center", wrap_text=True)
        border = Border(
            left=Side(style='thin'),
            right=Side(style='thin'),
            top=Side(style='thin'),
            bottom=Side(style='thin')
        )

        for col_num, header in enumerate(SUMMARY_HEADERS, 1):
            cell = ws.cell(row=1, column=col_num, value=header)
            cell.fill = header_fill
            cell.font = header_font
            cell.alignment = header_alignment
            cell.border = border

        for row_num, r in enumerate(rows, 2):
            values = [r.parameter, r.symbol, r.mean, r.lower_95, r.upper_95, r.rhat, r.ess, r.estimate]
            for col_num, value in enumerate(values, 1):
                # NaN в Excel не представим
                if isinstance(value, float) and not np.isfinite(value):
                    value = None
                cell = ws.cell(row=row_num, column=col_num, value=value)
                cell.border = border
                if 3 <= col_num <= 7:
                    cell.number_format = '0.000'
                    cell.alignment = Alignment(horizontal="right")

        # Ширина колонок по содержимому
        for col_num in range(1, len(SUMMARY_HEADERS) + 1):
            column_letter = get_column_letter(col_num)
            max_length = max(len(str(c.value)) for c in ws[column_letter] if c.value is not None)
            ws.column_dimensions[column_letter].width = min(max_length + 2, 50)

        wb.save(str(filepath))
        logger.info(f"Exported {len(rows)} summary rows to Excel: {filepath}")
        return str(filepath)

    @staticmethod
    def export_calibration(report: CalibrationReport, panel: CountPanel, directory: Path) -> List[str]:
        """
        CPO/PIT по ячейкам, гистограмма средней PIT и χ²-тест равномерности.

        Returns:
            Пути к cpo_pit.csv, pit_histogram.csv, calibration.csv
        """
        directory = _directory(directory)
        flagged = set(report.flagged)
        unreliable = set(report.unreliable)
        cells = (
            [panel.dates[t], rid, int(panel.counts[i, t]), report.cpo[i, t], report.pit[i, t],
             report.pit_below[i, t], report.max_weight[i, t], (i, t) in flagged, (i, t) in unreliable]
            for t in range(panel.T) for i, rid in enumerate(panel.region_ids)
        )
        paths = [write_csv(
            directory / "cpo_pit.csv",
            ["date", "region_id", "y", "cpo", "pit", "pit_below", "max_weight", "flagged", "unreliable"],
            cells
        )]
        paths.append(DataExporter.export_pit_histogram(report, directory))
        statistic, pvalue = uniformity_chi_square(report.histogram, report.cpo.size)
        paths.append(write_csv(
            directory / "calibration.csv",
            ["key", "value"],
            [
                ["cells", report.cpo.size],
                ["draws_used", report.draws_used],
                ["zero_cpo", report.zero_cpo],
                ["unreliable", len(report.unreliable)],
                ["log_score", float(-np.mean(np.log(np.maximum(report.cpo, np.finfo(float).tiny))))],
                ["chi_square", statistic],
                ["p_value", pvalue],
            ]
        ))
        return paths

    @staticmethod
    def export_pit_histogram(report: CalibrationReport, directory: Path, filename: str = "pit_histogram.csv") -> str:
        """Гистограмма средней PIT: границы корзин и высоты."""
        edges = report.bin_edges
        return write_csv(
            _directory(directory) / filename,
            ["bin_left", "bin_right", "height"],
            ([edges[j], edges[j + 1], report.histogram[j]] for j in range(report.bins))
        )

    @staticmethod
    def export_forecast(result: ForecastResult, directory: Path, filename: str = "forecast.csv") -> str:
        """Прогноз по регионам и по стране (region_id = COUNTRY)."""
        lo, hi = result.region_interval
        mean = result.region_mean
        c_lo, c_hi = result.country_interval
        c_mean = result.country_mean

        def rows():
            for j, day in enumerate(result.dates):
                for i, rid in enumerate(result.region_ids):
                    yield [day, rid, mean[i, j], lo[i, j], hi[i, j]]
                yield [day, ForecastConfig.COUNTRY_ID, c_mean[j], c_lo[j], c_hi[j]]

        return write_csv(
            _directory(directory) / filename,
            ["date", "region_id", "mean", "lower95", "upper95"],
            rows()
        )

    @staticmethod
    def export_trend(samples: PosteriorSamples, directory: Path, filename: str = "trend.csv") -> str:
        """Временной тренд δ_t и exp(δ_t) с 95% полосой."""
        delta = samples.latent_block("delta").reshape(-1, samples.T)
        lo, hi = credible_interval(delta, axis=0)
        rr = np.exp(delta)
        rr_lo, rr_hi = credible_interval(rr, axis=0)
        mean, rr_mean = delta.mean(axis=0), rr.mean(axis=0)
        return write_csv(
            _directory(directory) / filename,
            ["date", "mean", "lower_95", "upper_95", "rr_mean", "rr_lower_95", "rr_upper_95"],
            ([d, mean[t], lo[t], hi[t], rr_mean[t], rr_lo[t], rr_hi[t]] for t, d in enumerate(samples.dates))
        )

    @staticmethod
    def export_spatial_effects(
        samples: PosteriorSamples,
        regions: RegionTable,
        directory: Path,
        relative_risk: Optional[RelativeRiskSummary] = None,
        sir: Optional[np.ndarray] = None,
        filename: str = "spatial_effects.csv"
    ) -> str:
        """Апостериорные средние ζ_i и ξ_i по регионам, средний риск и SIR."""
        zeta = samples.latent_block("zeta").reshape(-1, samples.m).mean(axis=0)
        xi = samples.latent_block("xi").reshape(-1, samples.m).mean(axis=0)
        rr = relative_risk.mean.mean(axis=1) if relative_risk is not None else np.full(samples.m, np.nan)
        sir_mean = sir.mean(axis=1) if sir is not None else np.full(samples.m, np.nan)
        lookup = {r.id: r.name for r in regions.regions}
        return write_csv(
            _directory(directory) / filename,
            ["region_id", "name", "zeta_mean", "xi_mean", "spatial_mean", "relative_risk_mean", "sir_mean"],
            (
                [rid, lookup.get(rid, ""), zeta[i], xi[i], zeta[i] + xi[i], rr[i], sir_mean[i]]
                for i, rid in enumerate(samples.region_ids)
            )
        )

    @staticmethod
    def export_country_series(series: CountrySeries, directory: Path, filename: str = "country_series.csv") -> str:
        """Наблюдаемый и подогнанный ряд по стране."""
        return write_csv(
            _directory(directory) / filename,
            ["date", "observed", "fitted_mean", "lower_95", "upper_95"],
            (
                [d, series.observed[t], series.mean[t], series.lower_95[t], series.upper_95[t]]
                for t, d in enumerate(series.dates)
            )
        )

    @staticmethod
    def export_relative_risk(
        summary: RelativeRiskSummary,
        panel: CountPanel,
        directory: Path,
        sir: Optional[np.ndarray] = None,
        filename: str = "relative_risk.csv"
    ) -> str:
        """θ_it: среднее и 95% интервал по (регион, день), рядом SIR."""
        sir = sir if sir is not None else np.full(panel.counts.shape, np.nan)
        return write_csv(
            _directory(directory) / filename,
            ["date", "region_id", "mean", "lower_95", "upper_95", "sir"],
            (
                [d, rid, summary.mean[i, t], summary.lower_95[i, t], summary.upper_95[i, t], sir[i, t]]
                for t, d in enumerate(panel.dates) for i, rid in enumerate(panel.region_ids)
            )
        )

    # ----- входные файлы сценариев -----

    @staticmethod
    def export_regions(regions: RegionTable, directory: Path) -> List[str]:
        """regions.csv и adjacency.csv (каждая пара соседей один раз)."""
        directory = _directory(directory)
        paths = [write_csv(
            directory / "regions.csv",
            REGION_HEADERS,
            ([r.id, r.name, r.population, r.area, r.centroid_x, r.centroid_y] for r in regions.regions)
        )]
        ids = regions.ids
        pairs = [
            [ids[i], ids[j]]
            for i, neighbors in enumerate(regions.adjacency) for j in neighbors if i < j
        ]
        paths.append(write_csv(directory / "adjacency.csv", ADJACENCY_HEADERS, pairs))
        return paths

    @staticmethod
    def export_counts(
        panel: CountPanel,
        directory: Path,
        mode: str = "cumulative",
        filename: str = "counts.csv"
    ) -> str:
        """
        Панель в длинном формате date,region_id,value.

        В режиме cumulative первой пишется нулевая строка за день до начала,
        так что разностное чтение восстанавливает панель целиком.
        """
        if mode not in ("cumulative", "daily"):
            raise ValueError(f"unknown count mode: {mode}")
        if mode == "cumulative":
            values = np.concatenate([np.zeros((panel.m, 1), dtype=np.int64), np.cumsum(panel.counts, axis=1)], axis=1)
            dates = [panel.dates[0] - timedelta(days=1)] + list(panel.dates)
        else:
            values, dates = panel.counts, list(panel.dates)
        return write_csv(
            _directory(directory) / filename,
            COUNT_HEADERS,
            ([d, rid, int(values[i, t])] for t, d in enumerate(dates) for i, rid in enumerate(panel.region_ids))
        )

    @staticmethod
    def export_truth(hyper: HyperParams, latent: LatentState, panel: CountPanel, directory: Path) -> List[str]:
        """Истинные гиперпараметры и латентные поля сценария."""
        directory = _directory(directory)
        paths = [write_csv(
            directory / "truth_hyper.csv",
            ["parameter", "value"],
            ([name, value] for name, value in zip(PARAM_NAMES, hyper.as_array()))
        )]
        rows: List[List[Any]] = []
        for name, labels in (("delta", panel.dates), ("eps", panel.dates),
                             ("zeta", panel.region_ids), ("xi", panel.region_ids)):
            for label, value in zip(labels, getattr(latent, name)):
                rows.append([name, label, value])
        paths.append(write_csv(directory / "truth_latent.csv", ["component", "index", "value"], rows))
        return paths
