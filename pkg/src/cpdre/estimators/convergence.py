"""Late-time cylinder probabilities against the survival-weighted mixture of the extremal invariant laws."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .._rng import derive_seed
from ..lattice import Configuration, Geometry, InitialLaw, Params, Site, SiteState
from ._batch import forward
from .report import config_hash

_UPPER_TAG = 0xB0B


def lower_invariant_probabilities(rho: float, n_C: int, n_D: int) -> tuple:
    """``(P(A meets C), P(B meets D), joint)`` under the law with no 1's and product environment."""
    pB = 1.0 - (1.0 - rho) ** n_D
    return 0.0, pB, 0.0


def _events(snaps: np.ndarray, ic: np.ndarray, idd: np.ndarray) -> tuple:
    a = (snaps[..., ic] == SiteState.OCCUPIED).any(axis=-1)
    b = (snaps[..., idd] == SiteState.BLOCKED).any(axis=-1)
    return a, b, a & b


def _mean_se(x: np.ndarray) -> tuple:
    p = x.mean(axis=0)
    return p, np.sqrt(p * (1 - p) / x.shape[0])


@dataclass(frozen=True)
class ConvergenceReport:
    """Cylinder estimates on the time grid and the mixture prediction at the last grid time.

    Triples are ordered ``(A_t meets C, B_t meets D, both)``.
    """

    times: tuple
    estimates: np.ndarray = field(repr=False)  # (n_times, 3)
    stderrs: np.ndarray = field(repr=False)
    survival: float
    survival_se: float
    upper: tuple
    upper_se: tuple
    lower: tuple
    prediction: tuple
    prediction_se: tuple
    replicates: int
    seed: int
    config_hash: str

    def z_scores(self) -> tuple:
        """``(late - prediction) / combined standard error`` per event (0 when both errors vanish)."""
        out = []
        for k in range(3):
            diff = self.estimates[-1, k] - self.prediction[k]
            se = math.hypot(self.stderrs[-1, k], self.prediction_se[k])
            out.append(0.0 if se == 0 and diff == 0 else (math.inf if se == 0 else diff / se))
        return tuple(out)

    def consistent(self, z: float = 3.0) -> bool:
        return all(abs(s) <= z for s in self.z_scores())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "p_A_C", "se_A_C", "p_B_D", "se_B_D", "p_joint", "se_joint"])
        for t, est, se in zip(self.times, self.estimates, self.stderrs):
            w.writerow([repr(t)] + [repr(float(v)) for pair in zip(est, se) for v in pair])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({
            "times": list(self.times), "estimates": self.estimates.tolist(), "stderrs": self.stderrs.tolist(),
            "survival": self.survival, "survival_se": self.survival_se, "upper": list(self.upper),
            "upper_se": list(self.upper_se), "lower": list(self.lower), "prediction": list(self.prediction),
            "prediction_se": list(self.prediction_se), "z_scores": list(self.z_scores()),
            "replicates": self.replicates, "seed": self.seed, "config_hash": self.config_hash})


def convergence_diagnostic(params: Params, geometry: Geometry, mu: InitialLaw, C: Iterable[Site],
                           D: Iterable[Site], t_grid: Sequence[float], replicates: int, seed: int,
                           horizon: Optional[float] = None, upper_replicates: Optional[int] = None,
                           workers: int = 1) -> ConvergenceReport:
    """Compare late-time cylinder estimates from ``mu`` with the mixture prediction.

    The survival weight is the fraction of runs from ``mu`` still alive at the
    last grid time. The upper law is approximated by independent runs from the
    fully occupied box observed at the last grid time; the lower law is exact.
    """
    times = tuple(sorted(float(t) for t in t_grid))
    horizon = times[-1] if horizon is None else float(horizon)
    if not times or times[0] < 0 or times[-1] > horizon:
        raise ValueError("t-grid must lie in [0, horizon]")
    if replicates < 2:
        raise ValueError("need at least two replicates")
    ic, idd = geometry.indices(C), geometry.indices(D)
    snaps, tau, _ = forward(params, geometry, mu, seed, 0, replicates, horizon, times,
                            stop_when_extinct=False, workers=workers)
    est, se = _mean_se(np.stack(_events(snaps, ic, idd), axis=-1).astype(float))
    alive = np.isinf(tau) | (tau > times[-1])
    p_surv = float(alive.mean())
    p_surv_se = math.sqrt(p_surv * (1 - p_surv) / replicates)

    full = InitialLaw.deterministic(Configuration.filled(geometry, SiteState.OCCUPIED))
    n_up = upper_replicates or replicates
    up_snaps, _, _ = forward(params, geometry, full, derive_seed(seed, _UPPER_TAG), 0, n_up, times[-1],
                             [times[-1]], stop_when_extinct=False, workers=workers)
    up, up_se = _mean_se(np.stack(_events(up_snaps[:, 0, :], ic, idd), axis=-1).astype(float))

    low = lower_invariant_probabilities(params.rho, ic.size, idd.size)
    pred, pred_se = [], []
    for k in range(3):
        pred.append(float(p_surv * up[k] + (1 - p_surv) * low[k]))
        pred_se.append(float(math.hypot((up[k] - low[k]) * p_surv_se, p_surv * up_se[k])))
    h = config_hash({"op": "converge", "params": params.to_dict(), "geometry": geometry.to_dict(),
                     "mu": mu.to_dict(), "C": ic.tolist(), "D": idd.tolist(), "t_grid": list(times),
                     "horizon": horizon, "upper_replicates": n_up})
    return ConvergenceReport(times, est, se, p_surv, p_surv_se, tuple(map(float, up)), tuple(map(float, up_se)),
                             low, tuple(pred), tuple(pred_se), replicates, int(seed), h)
