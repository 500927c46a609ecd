"""Finite-horizon survival from a single occupied site or from ``nu(A)``."""

from __future__ import annotations

from typing import Iterable, Optional, Sequence

import numpy as np

from ..lattice import Geometry, InitialLaw, Params, Site
from ..tableau import MAX_HORIZON
from ._batch import forward
from .report import EstimateReport, config_hash


def survival_law(params: Params, geometry: Geometry, mode: str = "S2",
                 A: Optional[Iterable[Site]] = None) -> InitialLaw:
    """``chi({0})`` for mode S2; ``nu(A)`` for mode S1 (``A`` defaults to the origin)."""
    origin = (0,) * geometry.d
    if mode == "S2":
        if not geometry.contains(origin):
            raise ValueError("the origin must lie in the box")
        return InitialLaw.chi([origin])
    if mode == "S1":
        return InitialLaw.nu([origin] if A is None else list(A), params.rho)
    raise ValueError(f"mode must be 'S1' or 'S2', got {mode!r}")


def _config(params, geometry, law, mode):
    return {"op": "survival", "mode": mode, "params": params.to_dict(),
            "geometry": geometry.to_dict(), "init": law.to_dict()}


def survival_curve(params: Params, geometry: Geometry, times: Sequence[float], replicates: int, seed: int,
                   mode: str = "S2", A: Optional[Iterable[Site]] = None, start: int = 0,
                   workers: int = 1) -> list:
    """Survival estimates at each time in ``times`` from one set of replicates."""
    times = [float(t) for t in times]
    if not times or min(times) <= 0 or max(times) > MAX_HORIZON:
        raise ValueError(f"times must lie in (0, {MAX_HORIZON:g}]")
    if replicates < 1:
        raise ValueError("replicates must be positive")
    law = survival_law(params, geometry, mode, A)
    _, tau, cens = forward(params, geometry, law, seed, start, replicates, max(times),
                           stop_when_extinct=True, workers=workers)
    h = config_hash(_config(params, geometry, law, mode))
    rng = [(start, start + replicates)]
    return [EstimateReport.from_indicators(f"survival_{mode}", tau > t, seed, h, rng, horizon=t, censored=cens)
            for t in times]


def estimate_survival_S2(params: Params, geometry: Geometry, horizon: float, replicates: int, seed: int,
                         mode: str = "S2", A: Optional[Iterable[Site]] = None, start: int = 0,
                         workers: int = 1) -> EstimateReport:
    """Fraction of replicates with occupied sites at ``horizon``.

    Censored replicates (an occupied site reached the box boundary) count
    as survivors in the estimate; the bracket reports both treatments.
    """
    return survival_curve(params, geometry, [horizon], replicates, seed, mode, A, start, workers)[0]


def survival_indicators(params: Params, geometry: Geometry, law: InitialLaw, horizon: float,
                        replicates: int, seed: int, start: int = 0, workers: int = 1) -> tuple:
    """Per-replicate ``(survived, censored)`` arrays."""
    _, tau, cens = forward(params, geometry, law, seed, start, replicates, horizon, workers=workers)
    return np.isinf(tau), cens
