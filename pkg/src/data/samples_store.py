#!/usr/bin/env python3
"""
Samples Store - сохранение и чтение PosteriorSamples.

Колоночный CSV: chain, draw, log_density, 12 гиперпараметров,
delta[t], eps[t], zeta[i], xi[i]; метаданные (T, m, регионы, даты, seed,
параметры MCMC, журналы блоков) - в JSON рядом с файлом.
"""

import csv
import json
from datetime import date
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ValidationError

from src.exceptions import DataError
from src.services.data_exporter import write_csv
from src.services.inference import PosteriorSamples
from src.services.priors import N_PARAMS, PARAM_NAMES
from src.services.sampler import BlockLedger, McmcConfig
from src.utils.logger import get_logger

logger = get_logger(__name__)

SAMPLES_FILE = "samples.csv"
META_SUFFIX = ".meta.json"


class SamplesMeta(BaseModel):
    """Метаданные файла выборок."""
    T: int
    m: int
    region_ids: List[str]
    dates: List[date]
    seed: int
    chains: int
    draws: int
    config: McmcConfig
    ledger: List[Dict[str, BlockLedger]] = []


def meta_path(path: Path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + META_SUFFIX)


def sample_columns(T: int, m: int) -> List[str]:
    return (
        ["chain", "draw", "log_density"] + list(PARAM_NAMES)
        + [f"delta[{t}]" for t in range(T)] + [f"eps[{t}]" for t in range(T)]
        + [f"zeta[{i}]" for i in range(m)] + [f"xi[{i}]" for i in range(m)]
    )


def save_samples(samples: PosteriorSamples, path: Path) -> str:
    """
    Запись выборок и метаданных.

    Returns:
        Путь к CSV с выборками
    """
    path = Path(path)
    log_density = samples.log_density
    if log_density is None:
        log_density = np.full(samples.hyper.shape[:2], np.nan)

    def rows():
        for c in range(samples.n_chains):
            for d in range(samples.n_draws):
                yield [c, d, float(log_density[c, d])] + samples.hyper[c, d].tolist() + samples.latent[c, d].tolist()

    written = write_csv(path, sample_columns(samples.T, samples.m), rows())
    meta = SamplesMeta(
        T=samples.T,
        m=samples.m,
        region_ids=samples.region_ids,
        dates=samples.dates,
        seed=samples.seed,
        chains=samples.n_chains,
        draws=samples.n_draws,
        config=samples.config,
        ledger=samples.ledger
    )
    meta_path(path).write_text(meta.model_dump_json(indent=2), encoding='utf-8')
    return written


def load_samples(path: Path) -> PosteriorSamples:
    """
    Чтение выборок, записанных save_samples.

    Raises:
        DataError: нет файла, неверный формат или нарушены инварианты выборок
    """
    path = Path(path)
    meta_file = meta_path(path)
    if not path.is_file():
        raise DataError(f"{path}: samples file not found")
    if not meta_file.is_file():
        raise DataError(f"{meta_file}: samples metadata not found")
    try:
        meta = SamplesMeta.model_validate(json.loads(meta_file.read_text(encoding='utf-8')))
    except (ValueError, ValidationError) as exc:
        raise DataError(f"{meta_file}: invalid metadata: {exc}") from None

    columns = sample_columns(meta.T, meta.m)
    width = len(columns) - 3 - N_PARAMS
    hyper = np.empty((meta.chains, meta.draws, N_PARAMS))
    latent = np.empty((meta.chains, meta.draws, width))
    log_density = np.empty((meta.chains, meta.draws))
    seen = np.zeros((meta.chains, meta.draws), dtype=bool)

    with open(path, newline='', encoding='utf-8') as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != columns:
            raise DataError(f"{path}:1: header does not match the metadata (T={meta.T}, m={meta.m})")
        for row in reader:
            line = reader.line_num
            if len(row) != len(columns):
                raise DataError(f"{path}:{line}: expected {len(columns)} fields, got {len(row)}")
            try:
                c, d = int(row[0]), int(row[1])
                values = np.array([float(v) for v in row[2:]])
            except ValueError as exc:
                raise DataError(f"{path}:{line}: {exc}") from None
            if not (0 <= c < meta.chains and 0 <= d < meta.draws) or seen[c, d]:
                raise DataError(f"{path}:{line}: unexpected chain/draw index ({c}, {d})")
            seen[c, d] = True
            log_density[c, d] = values[0]
            hyper[c, d] = values[1:1 + N_PARAMS]
            latent[c, d] = values[1 + N_PARAMS:]
    if not seen.all():
        raise DataError(f"{path}: {int((~seen).sum())} draws are missing")

    try:
        samples = PosteriorSamples(
            hyper=hyper,
            latent=latent,
            T=meta.T,
            m=meta.m,
            region_ids=meta.region_ids,
            dates=meta.dates,
            seed=meta.seed,
            config=meta.config,
            log_density=None if np.all(np.isnan(log_density)) else log_density,
            ledger=meta.ledger
        )
    except ValidationError as exc:
        raise DataError(f"{path}: stored draws are invalid: {exc}") from None
    logger.info(
        f"Loaded {samples.n_total} draws from {path}",
        extra={"chains": samples.n_chains, "draws": samples.n_draws}
    )
    return samples


def find_samples(directory: Path, filename: Optional[str] = None) -> Path:
    return Path(directory) / (filename or SAMPLES_FILE)
