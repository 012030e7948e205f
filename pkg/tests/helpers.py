"""Построители тестовых данных."""

from datetime import date
from typing import Optional, Sequence

import numpy as np

from src.services.inference import PosteriorSamples
from src.services.priors import HyperParams
from src.services.risk_model import CountPanel, Region, RegionTable, make_dates
from src.services.sampler import McmcConfig

START = date(2020, 3, 1)


def path_regions(m: int = 3) -> RegionTable:
    """Цепочка R1 - R2 - ... - Rm с разными плотностями населения."""
    ids = [f"R{i + 1}" for i in range(m)]
    regions = []
    for i, rid in enumerate(ids):
        neighbors = [ids[j] for j in (i - 1, i + 1) if 0 <= j < m]
        regions.append(Region(
            id=rid,
            name=f"Region {i + 1}",
            population=1e5 * (i + 1),
            area=100.0 + 50.0 * i * i,
            centroid_x=100.0 * i,
            centroid_y=10.0 * (i % 2),
            neighbors=neighbors
        ))
    return RegionTable(regions=regions)


def make_panel(regions: RegionTable, counts: np.ndarray, start: date = START) -> CountPanel:
    counts = np.asarray(counts)
    return CountPanel(region_ids=regions.ids, dates=make_dates(start, counts.shape[1]), counts=counts)


def make_hyper(**changes: float) -> HyperParams:
    base = dict(
        phi=0.5, alpha=1.5, mu=0.0, beta=0.2,
        tau_delta=100.0, tau_eps=20.0, psi1=0.4, psi2=-0.3,
        tau_zeta=5.0, omega=0.4, tau_xi=5.0, phi_bym=0.5,
    )
    base.update(changes)
    return HyperParams(**base)


def make_samples(
    hyper: np.ndarray,
    latent: np.ndarray,
    T: int,
    region_ids: Sequence[str],
    start: date = START,
    log_density: Optional[np.ndarray] = None
) -> PosteriorSamples:
    """PosteriorSamples из готовых массивов формы (chains, draws, ...)."""
    chains, draws = hyper.shape[:2]
    return PosteriorSamples(
        hyper=hyper,
        latent=latent,
        T=T,
        m=len(region_ids),
        region_ids=list(region_ids),
        dates=make_dates(start, T),
        seed=0,
        config=McmcConfig(chains=chains, iterations=draws + 1, burn_in=1, thin=1),
        log_density=log_density
    )
