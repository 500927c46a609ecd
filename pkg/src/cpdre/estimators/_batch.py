"""Replicate batching over the JIT kernels, optionally on a thread pool.

Kernels release the GIL, and every replicate is keyed by its global index,
so results do not depend on chunking or on the number of workers.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Optional

import numpy as np

from .. import _kernels
from .._rng import check_seed
from ..lattice import Geometry, InitialLaw, Params

CHUNK = 2048


def run_batches(kernel: Callable, start: int, replicates: int, workers: int = 1,
                chunk: Optional[int] = None) -> tuple:
    """Call ``kernel(rep0, nrep)`` over ``[start, start + replicates)`` and concatenate outputs."""
    if replicates < 1:
        raise ValueError("replicates must be positive")
    chunk = chunk or max(1, min(CHUNK, -(-replicates // max(workers, 1))))
    spans = [(a, min(chunk, start + replicates - a)) for a in range(start, start + replicates, chunk)]
    if workers > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda s: kernel(*s), spans))
    else:
        parts = [kernel(*s) for s in spans]
    return tuple(np.concatenate(arrs, axis=0) for arrs in zip(*parts))


def forward(params: Params, geometry: Geometry, law: InitialLaw, seed: int, start: int, replicates: int,
            horizon: float, qtimes=(), stop_when_extinct: bool = True, workers: int = 1):
    """Snapshots at ``qtimes``, extinction times and censoring flags for each replicate."""
    if params.d != geometry.d:
        raise ValueError("params.d does not match the geometry dimension")
    template, use_nu, a_mask, rho = law.kernel_args(geometry)
    seed = np.uint64(check_seed(seed))
    nd = 2 * params.d
    rates = params.slot_rates()
    q = np.asarray(sorted(qtimes), dtype=float)
    if q.size and (q[0] < 0 or q[-1] > horizon):
        raise ValueError("snapshot times must lie in [0, horizon]")

    def kernel(rep0, nrep):
        return _kernels.forward_batch(seed, rep0, nrep, rates, nd + 3, nd, geometry.neighbors,
                                      geometry.birth_mask, geometry.boundary_mask, template, use_nu,
                                      a_mask, rho, float(horizon), q, stop_when_extinct)

    return run_batches(kernel, start, replicates, workers)
