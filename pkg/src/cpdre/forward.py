"""Forward replay of a tableau into a trajectory ``t -> (A_t, B_t)``."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Optional, Sequence

import numpy as np

from . import _kernels
from .lattice import Configuration, Geometry, Site
from .tableau import EventTableau

_SNAPSHOT_EVERY = 64


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Initial configuration plus a time-sorted log of effective site changes.

    ``tau`` is the first time ``A_t`` is empty (``inf`` if it is not empty on
    ``[0, horizon]``); ``censored`` records that an occupied site touched the
    boundary of an unrestricted absorbing-free box.
    """

    initial: Configuration
    horizon: float
    times: np.ndarray
    sites: np.ndarray
    old: np.ndarray
    new: np.ndarray
    tau: float = math.inf
    censored: bool = False

    def __post_init__(self):
        for name in ("times", "sites", "old", "new"):
            getattr(self, name).setflags(write=False)

    @property
    def geometry(self) -> Geometry:
        return self.initial.geometry

    @property
    def n_changes(self) -> int:
        return int(self.times.shape[0])

    @cached_property
    def _snapshots(self) -> np.ndarray:
        k = _SNAPSHOT_EVERY
        state = self.initial.states.copy()
        snaps = [state.copy()]
        for j in range(0, self.n_changes, k):
            chunk = slice(j, min(j + k, self.n_changes))
            for x, v in zip(self.sites[chunk], self.new[chunk]):
                state[x] = v
            snaps.append(state.copy())
        return np.array(snaps)

    def state_at(self, t: float) -> Configuration:
        """Configuration right after the last change at time ``<= t``."""
        if not 0 <= t <= self.horizon:
            raise ValueError(f"time {t} outside [0, {self.horizon}]")
        upto = int(np.searchsorted(self.times, t, side="right"))
        block = upto // _SNAPSHOT_EVERY
        state = self._snapshots[block].copy()
        start = block * _SNAPSHOT_EVERY
        state[self.sites[start:upto]] = self.new[start:upto]
        return Configuration(self.geometry, state)

    @property
    def final(self) -> Configuration:
        return self.state_at(self.horizon)

    def change_times(self) -> np.ndarray:
        return np.unique(self.times)

    def occupied_intervals(self, site: int, T: Optional[float] = None) -> list:
        """Closed intervals of ``[0, T]`` during which ``site`` is occupied."""
        T = self.horizon if T is None else T
        out = []
        start = 0.0 if self.initial.states[site] == 1 else None
        for i in np.flatnonzero(self.sites == site):
            t = float(self.times[i])
            if t > T:
                break
            if self.new[i] == 1 and start is None:
                start = t
            elif self.old[i] == 1 and start is not None:
                out.append((start, t))
                start = None
        if start is not None:
            out.append((start, T))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "site", "old", "new"])
        for row in zip(self.times, self.sites, self.old, self.new):
            w.writerow([repr(float(row[0])), int(row[1]), int(row[2]), int(row[3])])
        return buf.getvalue()

    def snapshots_json(self, times: Sequence[float]) -> str:
        return json.dumps({
            "geometry": self.geometry.to_dict(),
            "horizon": self.horizon,
            "snapshots": [{"time": float(t), "states": self.state_at(t).to_text()} for t in times],
        })


def _check(tableau: EventTableau, init: Configuration, horizon: Optional[float]) -> float:
    if init.geometry != tableau.geometry:
        raise ValueError("initial configuration and tableau have different geometries")
    horizon = tableau.horizon if horizon is None else float(horizon)
    if not 0 <= horizon <= tableau.horizon:
        raise ValueError(f"horizon {horizon} exceeds the tableau horizon {tableau.horizon}")
    return horizon


def _replay(tableau, init, horizon, env_only):
    g = tableau.geometry
    boundary = np.zeros(g.n_sites, np.bool_) if env_only else g.boundary_mask
    t, s, o, n, tau, cens = _kernels.replay_log(
        tableau.times, tableau.streams, tableau.nslot, 2 * tableau.params.d, g.neighbors,
        g.birth_mask, boundary, init.states, horizon, env_only)
    return Trajectory(init, horizon, t, s, o, n, tau if not env_only else math.inf, bool(cens))


def evolve(tableau: EventTableau, init: Configuration, horizon: Optional[float] = None) -> Trajectory:
    """Replay the tableau sequentially from ``init``.

    Arrow ``x -> y`` occupies ``y`` if ``x`` is occupied, ``y`` is vacant and
    ``y`` lies in the birth domain; death empties an occupied site; block
    sets a site blocked (killing any occupant); unblock frees a blocked site.
    """
    horizon = _check(tableau, init, horizon)
    return _replay(tableau, init, horizon, False)


def evolve_environment_only(tableau: EventTableau, init_blocked: Iterable[Site] | Configuration,
                            horizon: Optional[float] = None) -> Trajectory:
    """The blocked set alone, ignoring arrows and deaths. Non-blocked sites are vacant."""
    g = tableau.geometry
    if isinstance(init_blocked, Configuration):
        blocked = init_blocked.blocked
        if init_blocked.geometry != g:
            raise ValueError("initial configuration and tableau have different geometries")
    else:
        blocked = g.indices(init_blocked)
    states = np.zeros(g.n_sites, np.int8)
    states[blocked] = -1
    init = Configuration(g, states)
    horizon = _check(tableau, init, horizon)
    return _replay(tableau, init, horizon, True)


def state_at(trajectory: Trajectory, t: float) -> Configuration:
    return trajectory.state_at(t)


@dataclass(frozen=True)
class FaceWindow:
    """The face ``{L} x [0, L)^(d-1)`` observed over ``[0, T]``."""

    L: int
    T: float
    d: int = 1

    def __post_init__(self):
        if self.L < 1:
            raise ValueError("L must be a positive integer")
        if self.T < 0:
            raise ValueError("T must be nonnegative")

    def face_sites(self) -> list:
        rest = np.stack(np.meshgrid(*[np.arange(self.L)] * (self.d - 1), indexing="ij"), -1).reshape(-1, self.d - 1) \
            if self.d > 1 else np.zeros((1, 0), dtype=int)
        return [(self.L, *map(int, r)) for r in rest]

    def face_indices(self, geometry: Geometry) -> np.ndarray:
        sites = self.face_sites()
        for s in sites:
            if not geometry.contains(s):
                raise ValueError(f"face site {s} lies outside the geometry box")
        return np.array([geometry.index(s) for s in sites], dtype=np.int64)


def pack_points(intervals: Sequence[tuple]) -> int:
    """Most points in a union of disjoint, sorted closed intervals with pairwise gaps >= 1.

    Earliest-first greedy is optimal for this one-dimensional packing.
    """
    count = 0
    allowed = -math.inf
    for a, b in intervals:
        first = max(a, allowed)
        if first <= b:
            k = math.floor(b - first) + 1
            # b - first can round across an integer; decide on the points themselves
            while first + k <= b:
                k += 1
            while first + (k - 1) > b:
                k -= 1
            count += k
            allowed = first + k
    return count


def count_n_plus(trajectory: Trajectory, window: FaceWindow) -> int:
    """Packing count of occupied space-time points on the face over ``[0, T]``."""
    if window.d != trajectory.geometry.d:
        raise ValueError("window dimension does not match the trajectory")
    if window.T > trajectory.horizon:
        raise ValueError("window time exceeds the trajectory horizon")
    return sum(pack_points(trajectory.occupied_intervals(int(x), window.T))
               for x in window.face_indices(trajectory.geometry))
