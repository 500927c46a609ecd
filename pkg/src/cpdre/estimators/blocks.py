"""Block-condition and face-crossing events of the restricted process.

Boxes are closed: the block geometry is ``[-(L+2n), L+2n]^d`` with births
allowed everywhere in it, and the crossing-event geometry is ``[-L, L]^d``.
With open boxes the face ``{L} x [0, L)^(d-1)`` could never be occupied.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass

import numpy as np

from .. import _kernels
from .._rng import check_seed
from ..lattice import Geometry, InitialLaw, Params
from ._batch import run_batches
from .report import EstimateReport, config_hash


@dataclass(frozen=True)
class BlockSpec:
    """Seed half-width ``n``, block length ``L``, block time ``T``, threshold ``epsilon``
    and the occupancy targets ``N``, ``M``."""

    n: int
    L: int
    T: float
    epsilon: float = 0.5
    N: int = 0
    M: int = 0

    def __post_init__(self):
        for name in ("n", "L", "N", "M"):
            v = getattr(self, name)
            if int(v) != v:
                raise ValueError(f"{name} must be an integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        if self.n < 0:
            raise ValueError("n must be nonnegative")
        if self.L < 1:
            raise ValueError("L must be at least 1")
        if not (math.isfinite(self.T) and self.T >= 0):
            raise ValueError("T must be a finite nonnegative time")
        if not 0 < self.epsilon <= 1:
            raise ValueError("epsilon must lie in (0, 1]")
        if self.N < 0 or self.M < 0:
            raise ValueError("N and M must be nonnegative")
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "epsilon", float(self.epsilon))

    def block_geometry(self, d: int) -> Geometry:
        r = self.L + 2 * self.n
        return Geometry.cube(r, d, birth_radius=r)

    def crossing_geometry(self, d: int) -> Geometry:
        return Geometry.cube(self.L, d, birth_radius=self.L)

    def seed_cube(self, d: int) -> list:
        return list(itertools.product(range(-self.n, self.n + 1), repeat=d))

    def to_dict(self) -> dict:
        return asdict(self)


def passes(report: EstimateReport, epsilon: float) -> bool:
    """The threshold reading of a block condition: estimate above ``1 - epsilon``."""
    return report.estimate > 1.0 - epsilon


def _cubes(geometry: Geometry, centers, n: int) -> np.ndarray:
    offsets = list(itertools.product(range(-n, n + 1), repeat=geometry.d))
    return np.array([[geometry.index(tuple(c + o for c, o in zip(x, off))) for off in offsets] for x in centers],
                    dtype=np.int64)


def _membership(cubes: np.ndarray, n_sites: int) -> tuple:
    """CSR lists of the cubes containing each site."""
    owners = [[] for _ in range(n_sites)]
    for c, row in enumerate(cubes):
        for x in set(row.tolist()):
            owners[x].append(c)
    ptr = np.zeros(n_sites + 1, dtype=np.int64)
    ptr[1:] = np.cumsum([len(o) for o in owners])
    members = np.array([c for o in owners for c in o], dtype=np.int64)
    return ptr, members


def _setup(params: Params, geometry: Geometry, spec: BlockSpec, seed: int):
    if params.d != geometry.d:
        raise ValueError("params.d does not match the geometry dimension")
    template, _, _, _ = InitialLaw.chi(spec.seed_cube(params.d)).kernel_args(geometry)
    nd = 2 * params.d
    return np.uint64(check_seed(seed)), params.slot_rates(), nd, template


def estimate_block_conditions(params: Params, spec: BlockSpec, replicates: int, seed: int,
                              start: int = 0, workers: int = 1) -> tuple:
    """Estimates of the two block events from a filled seed cube.

    First: at time ``T + 1`` some translate ``x + [-n, n]^d`` with
    ``x`` in ``[0, L)^d`` is fully occupied. Second: at some time in
    ``[1, T + 1]`` a translate centered on the face ``{L + n} x [0, L)^(d-1)``
    is fully occupied (checked after every occupation change).
    """
    d = params.d
    g = spec.block_geometry(d)
    seed_u, rates, nd, template = _setup(params, g, spec, seed)
    centers1 = list(itertools.product(range(spec.L), repeat=d))
    centers2 = [(spec.L + spec.n, *rest) for rest in itertools.product(range(spec.L), repeat=d - 1)]
    cubes1, cubes2 = _cubes(g, centers1, spec.n), _cubes(g, centers2, spec.n)
    ptr2, members2 = _membership(cubes2, g.n_sites)

    def kernel(rep0, nrep):
        return _kernels.block_batch(seed_u, rep0, nrep, rates, nd + 3, nd, g.neighbors, g.birth_mask,
                                    template, spec.T, cubes1, cubes2, ptr2, members2)

    ev1, ev2 = run_batches(kernel, start, replicates, workers)
    h = config_hash({"op": "blocks", "params": params.to_dict(), "spec": spec.to_dict()})
    rng = [(start, start + replicates)]
    extra = {"epsilon": spec.epsilon}
    return (EstimateReport.from_indicators("BC1", ev1, seed, h, rng, horizon=spec.T + 1, extra=extra),
            EstimateReport.from_indicators("BC2", ev2, seed, h, rng, horizon=spec.T + 1, extra=extra))


def occupancy_crossing_counts(params: Params, spec: BlockSpec, replicates: int, seed: int, start: int = 0,
                   workers: int = 1) -> tuple:
    """Per-replicate occupied count in ``[0, L)^d`` at ``T`` and the face packing count on ``[0, T]``."""
    d = params.d
    g = spec.crossing_geometry(d)
    seed_u, rates, nd, template = _setup(params, g, spec, seed)
    orthant = np.all((g.coords >= 0) & (g.coords < spec.L), axis=1)
    face = (g.coords[:, 0] == spec.L) & np.all((g.coords[:, 1:] >= 0) & (g.coords[:, 1:] < spec.L), axis=1)
    face_index = np.full(g.n_sites, -1, dtype=np.int64)
    face_index[face] = np.arange(int(face.sum()))

    def kernel(rep0, nrep):
        return _kernels.occupancy_crossing_batch(seed_u, rep0, nrep, rates, nd + 3, nd, g.neighbors, g.birth_mask,
                                      template, spec.T, orthant, face_index)

    return run_batches(kernel, start, replicates, workers)


def estimate_lemma42_events(params: Params, spec: BlockSpec, replicates: int, seed: int,
                            start: int = 0, workers: int = 1) -> tuple:
    """Estimates of ``{occupied count in [0, L)^d at T > N}`` and ``{N_plus(L, T) > M}``."""
    count, nplus = occupancy_crossing_counts(params, spec, replicates, seed, start, workers)
    h = config_hash({"op": "occupancy_crossing", "params": params.to_dict(), "spec": spec.to_dict()})
    rng = [(start, start + replicates)]
    return (EstimateReport.from_indicators("count_gt_N", count > spec.N, seed, h, rng, horizon=spec.T),
            EstimateReport.from_indicators("nplus_gt_M", nplus > spec.M, seed, h, rng, horizon=spec.T))
