"""Empirical covariance of two increasing occupancy events."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Union

import numpy as np

from ..lattice import Geometry, InitialLaw, Params, Site, SiteState, _as_tuple
from ._batch import forward
from .report import config_hash

EventSpec = Union[Iterable[Site], Mapping]


def event_sites(geometry: Geometry, spec: EventSpec) -> np.ndarray:
    """Sites that must all be occupied; mappings may only ask for ``OCCUPIED``.

    A requirement of vacant or blocked is not an increasing event and is rejected.
    """
    if isinstance(spec, Mapping):
        for site, value in spec.items():
            if int(value) != SiteState.OCCUPIED:
                raise ValueError(f"event requiring state {int(value)} at {_as_tuple(site)} is not increasing")
        spec = list(spec)
    return geometry.indices(spec)


@dataclass(frozen=True)
class CorrelationReport:
    p_f: float
    p_g: float
    p_fg: float
    covariance: float
    stderr: float
    replicates: int
    seed: int
    config_hash: str
    z: float = 4.0

    @property
    def passed(self) -> bool:
        """One-sided: fails only if the covariance is below ``-z`` standard errors."""
        return self.covariance >= -self.z * self.stderr - 1e-15

    def to_json(self) -> str:
        return json.dumps({**self.__dict__, "passed": self.passed})


def check_positive_correlations(params: Params, geometry: Geometry, init: InitialLaw, t: float,
                                C1: EventSpec, C2: EventSpec, replicates: int, seed: int,
                                start: int = 0, workers: int = 1, z: float = 4.0) -> CorrelationReport:
    """Covariance of ``f = 1{C1 all occupied at t}`` and ``g = 1{C2 all occupied at t}``."""
    i1, i2 = event_sites(geometry, C1), event_sites(geometry, C2)
    if replicates < 2:
        raise ValueError("need at least two replicates")
    snaps, _, _ = forward(params, geometry, init, seed, start, replicates, t, [t], workers=workers)
    occ = snaps[:, 0, :] == SiteState.OCCUPIED
    f = occ[:, i1].all(axis=1).astype(float)
    g = occ[:, i2].all(axis=1).astype(float)
    pf, pg, pfg = f.mean(), g.mean(), (f * g).mean()
    phi = (f - pf) * (g - pg)
    cov = float(pfg - pf * pg)
    se = float(phi.std(ddof=1) / math.sqrt(replicates))
    h = config_hash({"op": "correlations", "params": params.to_dict(), "geometry": geometry.to_dict(),
                     "init": init.to_dict(), "t": t, "C1": i1.tolist(), "C2": i2.tolist()})
    return CorrelationReport(float(pf), float(pg), float(pfg), cov, se, replicates, int(seed), h, z)
