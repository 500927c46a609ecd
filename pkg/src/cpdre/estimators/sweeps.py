"""Survival scans along the birth-rate or unblocking axis and pseudo-critical bisection."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .. import _kernels
from .._rng import check_seed, derive_seed
from ..lattice import Geometry, InitialLaw, Params
from ._batch import forward, run_batches
from .report import EstimateReport, config_hash
from .survival import survival_law

AXES = ("beta", "delta")
_THIN_TAG = 0x7819


def thinning_seed(seed: int) -> int:
    """The mark seed used by beta sweeps run with ``seed``."""
    return derive_seed(seed, _THIN_TAG)


@dataclass(frozen=True)
class SweepResult:
    axis: str
    values: tuple
    reports: tuple
    survived: np.ndarray = field(repr=False)
    censored: np.ndarray = field(repr=False)

    def to_csv(self) -> str:
        """Phase-diagram table: one row per axis value."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([self.axis, "estimate", "stderr", "ci_low", "ci_high", "lower", "upper", "replicates",
                    "horizon", "seed", "config_hash"])
        for v, r in zip(self.values, self.reports):
            lo, hi = r.bracket
            c0, c1 = r.ci()
            w.writerow([repr(v), repr(r.estimate), repr(r.stderr), repr(c0), repr(c1), repr(lo), repr(hi),
                        r.replicates, repr(r.horizon), r.seed, r.config_hash])
        return buf.getvalue()


def _check_values(values: Sequence[float]) -> tuple:
    values = tuple(float(v) for v in values)
    if not values:
        raise ValueError("no sweep values")
    if any(b < a for a, b in zip(values, values[1:])):
        raise ValueError("sweep values must be ascending")
    if values[0] < 0:
        raise ValueError("sweep values must be nonnegative")
    return values


def sweep_indicators(params: Params, axis: str, values: Sequence[float], geometry: Geometry, horizon: float,
                     replicates: int, seed: int, law: InitialLaw, start: int = 0, workers: int = 1) -> tuple:
    """``(survived, censored)`` arrays of shape ``(replicates, len(values))``.

    Along ``beta`` all values share each replicate's tableau at the largest
    rate and thin its arrows with fixed marks, so survival is monotone per
    replicate. Along ``delta`` each value gets its own tableau under the same
    replicate seeds.
    """
    if axis not in AXES:
        raise ValueError(f"axis must be one of {AXES}")
    values = _check_values(values)
    if replicates < 1:
        raise ValueError("replicates must be positive")
    if axis == "delta":
        cols = []
        for v in values:
            p = params.replace(delta=v)
            lw = law if law.kind not in ("nu", "mu_rho") else InitialLaw(law.kind, law.sites, p.rho)
            _, tau, cens = forward(p, geometry, lw, seed, start, replicates, horizon, workers=workers)
            cols.append((np.isinf(tau), cens))
        return np.stack([c[0] for c in cols], axis=1), np.stack([c[1] for c in cols], axis=1)
    top = values[-1]
    p = params.replace(beta=top)
    keep = np.array([v / top if top > 0 else 0.0 for v in values])
    template, use_nu, a_mask, rho = law.kernel_args(geometry)
    nd = 2 * p.d
    seed_u = np.uint64(check_seed(seed))
    thin_u = np.uint64(thinning_seed(seed))
    rates = p.slot_rates()

    def kernel(rep0, nrep):
        return _kernels.sweep_batch(seed_u, thin_u, rep0, nrep, rates, nd + 3, nd, geometry.neighbors,
                                    geometry.birth_mask, geometry.boundary_mask, template, use_nu, a_mask,
                                    rho, float(horizon), keep)

    tau, cens = run_batches(kernel, start, replicates, workers)
    return np.isinf(tau), cens


def monotonicity_sweep(params: Params, axis: str, values: Sequence[float], geometry: Geometry, horizon: float,
                       replicates: int, seed: int, law: Optional[InitialLaw] = None, start: int = 0,
                       workers: int = 1) -> SweepResult:
    """Survival at ``horizon`` for each value along ``axis`` (default start: one occupied site)."""
    law = law or survival_law(params, geometry, "S2")
    values = _check_values(values)
    surv, cens = sweep_indicators(params, axis, values, geometry, horizon, replicates, seed, law, start, workers)
    rng = [(start, start + replicates)]
    reports = []
    for j, v in enumerate(values):
        h = config_hash({"op": "sweep", "axis": axis, "value": v, "params": params.to_dict(),
                         "geometry": geometry.to_dict(), "init": law.to_dict(), "values": list(values)})
        reports.append(EstimateReport.from_indicators(f"survival_{axis}={v!r}", surv[:, j], seed, h, rng,
                                                      horizon=horizon, censored=cens[:, j]))
    return SweepResult(axis, values, tuple(reports), surv, cens)


@dataclass(frozen=True)
class BisectionResult:
    """Bracket of the pseudo-critical value at a fixed horizon.

    ``lo``/``hi`` is the bisection bracket. ``ci_lo``/``ci_hi`` are the
    largest evaluated value whose estimate is significantly below the
    target and the smallest significantly above it (``z`` standard errors).
    """

    axis: str
    lo: float
    hi: float
    ci_lo: float
    ci_hi: float
    target: float
    horizon: float
    history: tuple

    @property
    def label(self) -> str:
        return f"pseudo-critical {self.axis} at horizon T={self.horizon:g}"

    def to_json(self) -> str:
        return json.dumps({"label": self.label, "axis": self.axis, "bracket": [self.lo, self.hi],
                           "ci_bracket": [self.ci_lo, self.ci_hi], "target": self.target,
                           "horizon": self.horizon,
                           "history": [{"value": v, "estimate": r.estimate, "stderr": r.stderr}
                                       for v, r in self.history]})


def bisect_pseudo_critical(params: Params, axis: str, bracket: tuple, geometry: Geometry, horizon: float,
                           replicates: int, seed: int, target: float = 0.5, tolerance: float = 0.05,
                           law: Optional[InitialLaw] = None, z: float = 2.0, workers: int = 1) -> BisectionResult:
    """Bisect the finite-horizon survival estimate against ``target``.

    Every evaluation reuses the same replicate seeds. Along ``beta`` the
    tableaus are thinned from the upper end of the bracket, so the estimate
    is an exactly monotone function of the value.
    """
    lo, hi = float(bracket[0]), float(bracket[1])
    if not lo < hi:
        raise ValueError("bracket must satisfy lo < hi")
    if not 0 <= target <= 1:
        raise ValueError("target must be a probability")
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    law = law or survival_law(params, geometry, "S2")
    top = hi
    history = []

    def evaluate(v):
        if axis == "beta":
            res = monotonicity_sweep(params, axis, [v, top], geometry, horizon, replicates, seed, law, workers=workers)
        else:
            res = monotonicity_sweep(params, axis, [v], geometry, horizon, replicates, seed, law, workers=workers)
        history.append((v, res.reports[0]))
        return res.reports[0].estimate

    def result(a, b):
        below = [v for v, r in history if r.estimate + z * r.stderr < target]
        above = [v for v, r in history if r.estimate - z * r.stderr > target]
        return BisectionResult(axis, a, b, max(below, default=lo), min(above, default=hi),
                               float(target), float(horizon), tuple(history))

    e_lo = evaluate(lo)
    if e_lo == target:
        return result(lo, lo)
    e_hi = evaluate(hi)
    if e_hi == target:
        return result(hi, hi)
    if not e_lo < target < e_hi:
        raise ValueError(f"bracket does not straddle the target: estimates {e_lo} at {lo} and {e_hi} at {hi}")
    while hi - lo > tolerance:
        mid = 0.5 * (lo + hi)
        if evaluate(mid) < target:
            lo = mid
        else:
            hi = mid
    return result(lo, hi)
