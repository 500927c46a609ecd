"""The dual process on a shared tableau and Monte Carlo duality estimates."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from . import _kernels
from ._rng import check_seed, derive_seed
from .estimators.report import EstimateReport, config_hash
from .forward import Trajectory, evolve_environment_only
from .lattice import Geometry, InitialLaw, Params, Site, sample_initial
from .tableau import EventTableau

_SELF_DUAL_TAG = 0x5E1F


@dataclass(frozen=True, eq=False)
class DualRun:
    """A forward environment on ``[0, t]`` and the dual occupied set run back from ``t``.

    The dual environment at dual time ``s`` is the forward environment at
    ``t - s``. The dual log holds ``(s, site, member)`` entries in increasing
    ``s``; ``member`` is 1 when the site joins the dual set.
    """

    t: float
    C: frozenset
    forward_env: Trajectory
    initial_set: np.ndarray
    log_s: np.ndarray
    log_site: np.ndarray
    log_new: np.ndarray
    final_env: np.ndarray

    def dual_set_at(self, s: float) -> np.ndarray:
        """Boolean membership of the dual set at dual time ``s``."""
        if not 0 <= s <= self.t:
            raise ValueError(f"dual time {s} outside [0, {self.t}]")
        member = self.initial_set.copy()
        upto = int(np.searchsorted(self.log_s, s, side="right"))
        member[self.log_site[:upto]] = self.log_new[:upto].astype(bool)
        return member

    def dual_env_at(self, s: float) -> np.ndarray:
        """Blocked sites of the dual environment at dual time ``s``."""
        if not 0 <= s <= self.t:
            raise ValueError(f"dual time {s} outside [0, {self.t}]")
        return self.forward_env.state_at(self.t - s).states == -1

    @property
    def final_set(self) -> np.ndarray:
        return self.dual_set_at(self.t)

    def hits(self, sites: np.ndarray) -> bool:
        """Whether the dual set at time ``t`` meets the given row-major indices."""
        return bool(self.final_set[sites].any())


def run_dual(tableau: EventTableau, C: Iterable[Site], t: float, env_seed: int, replicate: int = 0) -> DualRun:
    """Build the dual from ``C`` at time ``t`` on ``tableau``.

    The environment starts from ``mu_rho`` drawn with ``(env_seed, replicate)``
    (the same blocked sites a ``nu(A)`` draw with that seed would have),
    is run forward to ``t`` and reversed. The dual starts from the
    non-blocked sites of ``C`` and replays arrows backwards in time with
    reversed direction; deaths and unblock symbols (blocked below, free
    above) remove dual particles.
    """
    g = tableau.geometry
    if not 0 < t <= tableau.horizon:
        raise ValueError(f"t must lie in (0, {tableau.horizon}]")
    cmask = g.mask(C)
    env0 = sample_initial(InitialLaw.mu_rho(tableau.params.rho), g, env_seed, replicate)
    fwd = evolve_environment_only(tableau, env0, t)
    blocked0 = env0.states == -1
    eff, blocked_t = _kernels.env_effective(tableau.times, tableau.streams, tableau.nslot,
                                            2 * tableau.params.d, blocked0, t)
    _, final_env, ls, lsite, lnew = _kernels.dual_replay(
        tableau.times, tableau.streams, tableau.nslot, 2 * tableau.params.d, g.neighbors,
        eff, blocked_t, cmask, t, True)
    return DualRun(float(t), frozenset(int(i) for i in np.flatnonzero(cmask)), fwd,
                   cmask & ~blocked_t, ls, lsite, lnew, final_env)


@dataclass(frozen=True)
class DualityEstimate:
    """Both sides of the coupled identity plus the independent self-duality side."""

    forward: EstimateReport
    dual: EstimateReport
    self_dual: EstimateReport

    def rows(self) -> list:
        return [(name, r.estimate, r.stderr, r.replicates, r.seed)
                for name, r in (("forward", self.forward), ("dual", self.dual), ("self_dual", self.self_dual))]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["side", "estimate", "stderr", "replicates", "seed"])
        for row in self.rows():
            w.writerow([row[0], repr(row[1]), repr(row[2]), row[3], row[4]])
        return buf.getvalue()


def duality_indicators(params: Params, geometry: Geometry, A, C, D, t: float, seed: int,
                       start: int, stop: int):
    """Per-replicate indicators for replicates ``start .. stop-1``."""
    nd = 2 * params.d
    return _kernels.dual_batch(
        np.uint64(seed), np.uint64(derive_seed(seed, _SELF_DUAL_TAG)), start, stop - start,
        params.slot_rates(), nd + 3, nd, geometry.neighbors, params.rho,
        geometry.mask(A), geometry.mask(C), geometry.mask(D), float(t))


def coupled_duality_estimate(params: Params, geometry: Geometry, A: Iterable[Site], C: Iterable[Site],
                             D: Iterable[Site], t: float, replicates: int, seed: int,
                             start: int = 0) -> DualityEstimate:
    """Estimate ``P^{nu_A}(A_t meets C, B_t meets D)`` three ways.

    ``forward``: forward runs from ``nu_A``. ``dual``: the dual from ``C`` on
    the same tableaus and environments, event ``{dual set at t meets A, dual
    environment at 0 meets D}``. ``self_dual``: independent forward runs from
    ``nu_C`` with event ``{A_t meets A, B_0 meets D}``.
    """
    if replicates < 1:
        raise ValueError("replicates must be positive")
    if geometry.birth_domain is not None:
        raise ValueError("duality is not defined for the restricted process")
    seed = check_seed(seed)
    A, C, D = (sorted(geometry.site(i) for i in geometry.indices(s)) for s in (A, C, D))
    if not t > 0:
        raise ValueError("t must be positive")
    left, right, selfd = duality_indicators(params, geometry, A, C, D, t, seed, start, start + replicates)
    h = config_hash({"op": "duality", "params": params.to_dict(), "geometry": geometry.to_dict(),
                     "A": A, "C": C, "D": D, "t": t})
    rng = [(start, start + replicates)]
    return DualityEstimate(
        EstimateReport.from_indicators("forward", left, seed, h, rng, horizon=t),
        EstimateReport.from_indicators("dual", right, seed, h, rng, horizon=t),
        EstimateReport.from_indicators("self_dual", selfd, seed, h, rng, horizon=t),
    )
