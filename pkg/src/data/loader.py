#!/usr/bin/env python3
"""
Loader - чтение входных файлов.

regions.csv (id,name,population,area_km2,centroid_x,centroid_y),
adjacency.csv (пары id_a,id_b, каждая строка - неориентированное ребро),
merge.csv (source_id,target_id,target_name) и длинная панель
date,region_id,value в накопленном или дневном виде.

Любая ошибка формата - DataError с указанием "путь:строка".
"""

import csv
from collections import OrderedDict
from datetime import date, timedelta
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError

from src.exceptions import DataError
from src.services.risk_model import CountPanel, Region, RegionTable
from src.utils.logger import get_logger

logger = get_logger(__name__)

REGION_COLUMNS = ("id", "name", "population", "area_km2", "centroid_x", "centroid_y")
ADJACENCY_COLUMNS = ("id_a", "id_b")
MERGE_COLUMNS = ("source_id", "target_id", "target_name")
COUNT_COLUMNS = ("date", "region_id", "value")
COUNT_MODES = ("cumulative", "daily")

# Сколько пропусков перечислять в сообщении
MAX_LISTED_GAPS = 10

MergeMap = Dict[str, Tuple[str, str]]


def _fail(path: Path, line: int, message: str) -> DataError:
    return DataError(f"{path}:{line}: {message}")


def _validation_message(exc: ValidationError) -> str:
    return "; ".join(f"{'.'.join(str(p) for p in e['loc']) or 'row'}: {e['msg']}" for e in exc.errors())


def _read_table(path: Path, columns: Sequence[str], header_optional: bool = False) -> Iterator[Tuple[int, List[str]]]:
    """
    Строки CSV как (номер строки, значения) с проверкой заголовка.

    Пустые строки пропускаются. При header_optional первая строка, не
    совпадающая с заголовком, считается данными.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: file not found")
    with open(path, newline='', encoding='utf-8-sig') as f:
        reader = csv.reader(f)
        first = True
        for row in reader:
            line = reader.line_num
            cells = [c.strip() for c in row]
            if not any(cells):
                continue
            if first:
                first = False
                if [c.lower() for c in cells] == list(columns):
                    continue
                if not header_optional:
                    raise _fail(path, line, f"expected header {','.join(columns)}, got {','.join(cells)}")
            if len(cells) != len(columns):
                raise _fail(path, line, f"expected {len(columns)} fields, got {len(cells)}")
            yield line, cells
        if first and not header_optional:
            raise DataError(f"{path}: file is empty")


def _parse_float(path: Path, line: int, name: str, text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise _fail(path, line, f"{name} is not a number: {text!r}") from None
    if not np.isfinite(value):
        raise _fail(path, line, f"{name} must be finite, got {text!r}")
    return value


# ===========================================
# Регионы
# ===========================================

def read_adjacency(path: Path, known: Sequence[str]) -> Dict[str, List[str]]:
    """
    Списки соседей из файла пар.

    Raises:
        DataError: неизвестный id, петля или неполная строка
    """
    path = Path(path)
    known_set = set(known)
    neighbors: Dict[str, List[str]] = {rid: [] for rid in known}
    for line, (a, b) in _read_table(path, ADJACENCY_COLUMNS, header_optional=True):
        for rid in (a, b):
            if rid not in known_set:
                raise _fail(path, line, f"unknown region id {rid!r}")
        if a == b:
            raise _fail(path, line, f"region {a} cannot neighbor itself")
        if b not in neighbors[a]:
            neighbors[a].append(b)
        if a not in neighbors[b]:
            neighbors[b].append(a)
    return neighbors


def read_merge(path: Path) -> MergeMap:
    """
    Директива слияния: source_id → (target_id, target_name).

    Raises:
        DataError: повторный source_id или пустой target_id
    """
    path = Path(path)
    mapping: MergeMap = {}
    for line, (source, target, name) in _read_table(path, MERGE_COLUMNS):
        if not source or not target:
            raise _fail(path, line, "source_id and target_id must be nonempty")
        if source in mapping:
            raise _fail(path, line, f"region {source} is merged twice")
        mapping[source] = (target, name)
    return mapping


def _group_of(rid: str, mapping: MergeMap) -> str:
    return mapping[rid][0] if rid in mapping else rid


def merge_regions(regions: RegionTable, mapping: MergeMap) -> RegionTable:
    """
    Слияние регионов по директиве.

    Численности и площади суммируются, центроид взвешивается по площади,
    соседи объединяются (без внутренних рёбер группы).
    """
    groups: "OrderedDict[str, List[Region]]" = OrderedDict()
    for region in regions.regions:
        groups.setdefault(_group_of(region.id, mapping), []).append(region)

    names = {target: name for target, name in mapping.values() if name}
    merged = []
    for gid, members in groups.items():
        if len(members) == 1 and members[0].id == gid and gid not in names:
            region = members[0]
            merged.append(region.model_copy(update={
                "neighbors": sorted({_group_of(n, mapping) for n in region.neighbors} - {gid})
            }))
            continue
        areas = np.array([r.area for r in members])
        weights = areas / areas.sum()
        own = next((r for r in members if r.id == gid), members[0])
        merged.append(Region(
            id=gid,
            name=names.get(gid, own.name),
            population=float(sum(r.population for r in members)),
            area=float(areas.sum()),
            centroid_x=float(np.dot(weights, [r.centroid_x for r in members])),
            centroid_y=float(np.dot(weights, [r.centroid_y for r in members])),
            neighbors=sorted({_group_of(n, mapping) for r in members for n in r.neighbors} - {gid})
        ))
    if len(merged) != regions.m:
        logger.info(
            f"Merged {regions.m} regions into {len(merged)}",
            extra={"groups": {g: [r.id for r in ms] for g, ms in groups.items() if len(ms) > 1}}
        )
    return RegionTable(regions=merged)


def merge_panel(panel: CountPanel, mapping: MergeMap) -> CountPanel:
    """Суммирование строк панели по директиве слияния."""
    order: List[str] = []
    for rid in panel.region_ids:
        gid = _group_of(rid, mapping)
        if gid not in order:
            order.append(gid)
    counts = np.zeros((len(order), panel.T), dtype=np.int64)
    for i, rid in enumerate(panel.region_ids):
        counts[order.index(_group_of(rid, mapping))] += panel.counts[i]
    return CountPanel(region_ids=order, dates=list(panel.dates), counts=counts, corrections=panel.corrections)


def load_regions(
    regions_path: Path,
    adjacency_path: Path,
    merge_path: Optional[Path] = None
) -> RegionTable:
    """
    Таблица регионов из regions.csv и adjacency.csv.

    Args:
        regions_path: Файл регионов
        adjacency_path: Файл пар соседей
        merge_path: Необязательная директива слияния

    Returns:
        RegionTable (с применённым слиянием)

    Raises:
        DataError: дубликаты id, неизвестные id, неверные значения
    """
    regions_path = Path(regions_path)
    rows: List[Tuple[int, dict]] = []
    seen: Dict[str, int] = {}
    for line, cells in _read_table(regions_path, REGION_COLUMNS):
        rid, name, population, area, cx, cy = cells
        if not rid:
            raise _fail(regions_path, line, "region id is empty")
        if rid in seen:
            raise _fail(regions_path, line, f"duplicate region id {rid!r} (first on line {seen[rid]})")
        seen[rid] = line
        rows.append((line, {
            "id": rid,
            "name": name,
            "population": _parse_float(regions_path, line, "population", population),
            "area": _parse_float(regions_path, line, "area_km2", area),
            "centroid_x": _parse_float(regions_path, line, "centroid_x", cx),
            "centroid_y": _parse_float(regions_path, line, "centroid_y", cy),
        }))
    if not rows:
        raise DataError(f"{regions_path}: no regions")

    neighbors = read_adjacency(adjacency_path, list(seen))
    regions = []
    for line, fields in rows:
        try:
            regions.append(Region(neighbors=neighbors[fields["id"]], **fields))
        except ValidationError as exc:
            raise _fail(regions_path, line, _validation_message(exc)) from None
    try:
        table = RegionTable(regions=regions)
    except ValidationError as exc:
        raise DataError(f"{regions_path}: {_validation_message(exc)}") from None

    if merge_path is not None:
        table = merge_regions(table, read_merge(merge_path))
    logger.info(f"Loaded {table.m} regions from {regions_path}", extra={"m": table.m})
    return table


# ===========================================
# Панель
# ===========================================

def _parse_count(path: Path, line: int, text: str) -> int:
    value = _parse_float(path, line, "value", text)
    if value != np.floor(value):
        raise _fail(path, line, f"value must be an integer, got {text!r}")
    return int(value)


def load_counts(
    path: Path,
    mode: str = "cumulative",
    region_ids: Optional[Sequence[str]] = None
) -> CountPanel:
    """
    Панель ежедневных случаев из длинного CSV date,region_id,value.

    В накопленном режиме берутся разности соседних дней (первая дата уходит),
    отрицательные разности обнуляются с предупреждением; число обнулений
    сохраняется в CountPanel.corrections.

    Args:
        path: Файл панели
        mode: cumulative | daily
        region_ids: Допустимые регионы и порядок строк (иначе порядок появления)

    Returns:
        CountPanel

    Raises:
        DataError: неизвестный регион, повтор ячейки, немонотонные даты,
            пропуски в диапазоне дат, отрицательные значения
    """
    path = Path(path)
    if mode not in COUNT_MODES:
        raise DataError(f"{path}: unknown count mode {mode!r}, expected one of {COUNT_MODES}")
    known = set(region_ids) if region_ids is not None else None

    cells: Dict[Tuple[str, date], int] = {}
    last_date: Dict[str, Tuple[date, int]] = {}
    order: List[str] = []
    for line, (day_text, rid, value_text) in _read_table(path, COUNT_COLUMNS):
        try:
            day = date.fromisoformat(day_text)
        except ValueError:
            raise _fail(path, line, f"invalid date {day_text!r}") from None
        if known is not None and rid not in known:
            raise _fail(path, line, f"unknown region id {rid!r}")
        if (rid, day) in cells:
            raise _fail(path, line, f"duplicate entry for {rid} on {day}")
        if rid in last_date and day < last_date[rid][0]:
            prev, prev_line = last_date[rid]
            raise _fail(path, line, f"dates for {rid} are not increasing ({prev} on line {prev_line}, then {day})")
        value = _parse_count(path, line, value_text)
        if value < 0:
            raise _fail(path, line, f"negative {mode} count {value}")
        cells[(rid, day)] = value
        last_date[rid] = (day, line)
        if rid not in order:
            order.append(rid)
    if not cells:
        raise DataError(f"{path}: no observations")

    ids = list(region_ids) if region_ids is not None else order
    missing_regions = [rid for rid in ids if rid not in last_date]
    if missing_regions:
        raise DataError(f"{path}: no observations for regions {missing_regions}")

    days = sorted({d for _, d in cells})
    span = (days[-1] - days[0]).days + 1
    dates = [days[0] + timedelta(days=j) for j in range(span)]
    gaps = [(rid, d) for d in dates for rid in ids if (rid, d) not in cells]
    if gaps:
        listed = ", ".join(f"{rid}@{d}" for rid, d in gaps[:MAX_LISTED_GAPS])
        more = f" and {len(gaps) - MAX_LISTED_GAPS} more" if len(gaps) > MAX_LISTED_GAPS else ""
        raise DataError(f"{path}: {len(gaps)} missing cells: {listed}{more}")

    values = np.array([[cells[(rid, d)] for d in dates] for rid in ids], dtype=np.int64)
    corrections = 0
    if mode == "cumulative":
        if len(dates) < 2:
            raise DataError(f"{path}: cumulative counts need at least two dates")
        daily = np.diff(values, axis=1)
        negative = daily < 0
        corrections = int(np.count_nonzero(negative))
        if corrections:
            logger.warning(
                f"Clamped {corrections} negative daily differences to zero",
                extra={"path": str(path), "corrections": corrections}
            )
            daily = np.where(negative, 0, daily)
        values, dates = daily, dates[1:]

    panel = CountPanel(region_ids=ids, dates=dates, counts=values, corrections=corrections)
    logger.info(
        f"Loaded {mode} panel from {path}: m={panel.m}, T={panel.T}",
        extra={"m": panel.m, "T": panel.T, "corrections": corrections}
    )
    return panel
