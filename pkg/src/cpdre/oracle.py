"""Exact Markov chain computations on lattices of at most nine sites.

Configurations are indexed in base 3 with digit ``state + 1`` per site and
site 0 as the most significant digit, so ``np.kron`` of per-site vectors
yields product measures in the same order.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Iterable, Optional

import numpy as np
import scipy.sparse as sp
from scipy.special import pdtrc

from .lattice import Configuration, Geometry, InitialLaw, Params, Site

MAX_STATES = 20_000
TAIL_MASS = 1e-14
_MAX_STEP_MASS = 40.0  # uniformization steps with Lambda*t above this are split


@lru_cache(maxsize=16)
def state_table(n_sites: int) -> np.ndarray:
    """All ``3^n`` configurations as an ``(3^n, n)`` int8 array in index order."""
    digits = np.array(list(itertools.product((0, 1, 2), repeat=n_sites)), dtype=np.int8).reshape(-1, n_sites)
    table = digits - 1
    table.setflags(write=False)
    return table


def encode(config: Configuration) -> int:
    idx = 0
    for s in config.states:
        idx = 3 * idx + int(s) + 1
    return idx


def decode(index: int, geometry: Geometry) -> Configuration:
    return Configuration(geometry, state_table(geometry.n_sites)[index].copy())


def _check_size(geometry: Geometry) -> int:
    n = geometry.n_sites
    if 3 ** n > MAX_STATES:
        raise ValueError(f"lattice too large for the exact oracle: 3^{n} states exceeds {MAX_STATES}")
    return n


def _arrow_counts(geometry: Geometry) -> np.ndarray:
    """``W[x, y]``: number of arrow slots from ``x`` landing on ``y``."""
    n = geometry.n_sites
    W = np.zeros((n, n), dtype=np.int64)
    for x, row in enumerate(geometry.neighbors):
        for y in row:
            if y >= 0:
                W[x, y] += 1
    return W


@dataclass(frozen=True, eq=False)
class GeneratorMatrix:
    """Sparse ``3^n`` rate matrix; rows are sources.

    Diagonal entries are computed in exact rational arithmetic from the
    off-diagonal rates and converted to float last.
    """

    params: Params
    geometry: Geometry
    matrix: sp.csr_matrix

    @property
    def n_sites(self) -> int:
        return self.geometry.n_sites

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def rate(self, source: Configuration, target: Configuration) -> float:
        return float(self.matrix[encode(source), encode(target)])

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()


def _transitions(params: Params, geometry: Geometry):
    """Off-diagonal transitions as (source, target, kind, multiplicity) arrays.

    ``kind``: 0 birth (rate beta/(2d) per arrow), 1 death, 2 block, 3 unblock.
    """
    n = _check_size(geometry)
    S = state_table(n)
    N = S.shape[0]
    occ = (S == 1).astype(np.int64)
    k = occ @ _arrow_counts(geometry)
    birth_ok = geometry.birth_mask
    src, dst, kind, mult = [], [], [], []
    for i in range(n):
        place = 3 ** (n - 1 - i)
        s = S[:, i]
        moves = (
            ((s == 0) & birth_ok[i] & (k[:, i] > 0), 1, 0, k[:, i]),
            (s == 1, -1, 1, 1),
            (s == 1, -2, 2, 1),
            (s == 0, -1, 2, 1),
            (s == -1, 1, 3, 1),
        )
        for cond, shift, kd, m in moves:
            sel = np.flatnonzero(cond)
            if sel.size == 0:
                continue
            src.append(sel)
            dst.append(sel + shift * place)
            kind.append(np.full(sel.size, kd))
            mult.append(np.broadcast_to(m, (N,))[sel] if np.ndim(m) else np.full(sel.size, m))
    if not src:
        empty = np.zeros(0, np.int64)
        return N, empty, empty, empty, empty
    return (N, np.concatenate(src), np.concatenate(dst), np.concatenate(kind),
            np.concatenate(mult).astype(np.int64))


def _exact_rates(params: Params) -> tuple:
    a = Fraction(params.alpha)
    return (Fraction(params.beta) / (2 * params.d), Fraction(1), a, a * Fraction(params.delta))


def build_generator(params: Params, geometry: Geometry) -> GeneratorMatrix:
    """Rate matrix of the joint particle/environment chain on ``geometry``."""
    if params.d != geometry.d:
        raise ValueError("params.d does not match the geometry dimension")
    N, src, dst, kind, mult = _transitions(params, geometry)
    exact = _exact_rates(params)
    rates = np.array([float(r) for r in exact])[kind] * mult
    # exit rate of each source as an exact integer combination of the four base rates
    counts = np.zeros((N, 4), dtype=np.int64)
    np.add.at(counts, (src, kind), mult)
    uniq, inverse = np.unique(counts, axis=0, return_inverse=True)
    exit_exact = np.array([float(sum(int(c) * r for c, r in zip(row, exact))) for row in uniq])
    diag = -exit_exact[inverse.reshape(-1)]
    rows = np.concatenate([src, np.arange(N)])
    cols = np.concatenate([dst, np.arange(N)])
    vals = np.concatenate([rates, diag])
    Q = sp.csr_matrix((vals, (rows, cols)), shape=(N, N))
    return GeneratorMatrix(params, geometry, Q)


def _check_distribution(vec: np.ndarray, n: int) -> np.ndarray:
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (n,):
        raise ValueError(f"distribution must have shape ({n},)")
    if (vec < 0).any() or abs(vec.sum() - 1.0) > 1e-12:
        raise ValueError("initial vector is not a probability distribution")
    return vec


def propagate(gen: GeneratorMatrix, vec: np.ndarray, t: float, tail: float = TAIL_MASS) -> np.ndarray:
    """``vec @ exp(tQ)`` for any nonnegative vector by uniformization (no normalization)."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    vec = np.asarray(vec, dtype=float).copy()
    if t == 0:
        return vec
    Q = gen.matrix
    lam = float(-Q.diagonal().min())
    if lam <= 0:
        return vec
    PT = (sp.identity(Q.shape[0], format="csr") + Q / lam).T.tocsr()
    steps = max(1, math.ceil(lam * t / _MAX_STEP_MASS))
    m = lam * t / steps
    K = 0
    while pdtrc(K, m) >= tail:
        K += 1
    weights = np.exp(np.arange(K + 1) * math.log(m) - m - np.array([math.lgamma(k + 1) for k in range(K + 1)]))
    for _ in range(steps):
        term = vec
        acc = weights[0] * term
        for k in range(1, K + 1):
            term = PT @ term
            acc += weights[k] * term
        vec = acc
    return vec


def transient_distribution(gen: GeneratorMatrix, init: np.ndarray, t: float, tol: float = 1e-12) -> np.ndarray:
    """Distribution at time ``t`` started from ``init``; truncation mass below ``tol``."""
    init = _check_distribution(init, gen.dimension)
    out = propagate(gen, init, t, min(TAIL_MASS, tol))
    return out / out.sum()


def point_mass(config: Configuration) -> np.ndarray:
    vec = np.zeros(3 ** config.geometry.n_sites)
    vec[encode(config)] = 1.0
    return vec


def _site_laws(law: InitialLaw, geometry: Geometry) -> Optional[list]:
    """Per-site ``(P(-1), P(0), P(1))`` when the law is a product measure."""
    template, use_nu, a_mask, rho = law.kernel_args(geometry)
    out = []
    for i in range(geometry.n_sites):
        if use_nu:
            out.append((rho, 0.0, 1.0 - rho) if a_mask[i] else (rho, 1.0 - rho, 0.0))
        else:
            v = [0.0, 0.0, 0.0]
            v[int(template[i]) + 1] = 1.0
            out.append(tuple(v))
    return out


def product_distribution(law: InitialLaw, geometry: Geometry) -> np.ndarray:
    """The initial law as a Kronecker product of per-site vectors."""
    _check_size(geometry)
    vec = np.ones(1)
    for p in _site_laws(law, geometry):
        vec = np.kron(vec, np.array(p))
    return vec


def initial_distribution(law: InitialLaw, geometry: Geometry) -> np.ndarray:
    """The initial law as weighted point masses over its blocked-set patterns."""
    _check_size(geometry)
    template, use_nu, a_mask, rho = law.kernel_args(geometry)
    n = geometry.n_sites
    vec = np.zeros(3 ** n)
    if not use_nu:
        vec[encode(Configuration(geometry, template))] = 1.0
        return vec
    if rho in (0.0, 1.0):
        blocked = np.full(n, rho == 1.0)
        states = np.where(blocked, -1, a_mask.astype(np.int8)).astype(np.int8)
        vec[encode(Configuration(geometry, states))] = 1.0
        return vec
    for bits in itertools.product((False, True), repeat=n):
        blocked = np.array(bits)
        states = np.where(blocked, -1, a_mask.astype(np.int8)).astype(np.int8)
        nb = int(blocked.sum())
        vec[encode(Configuration(geometry, states))] += rho ** nb * (1.0 - rho) ** (n - nb)
    return vec


def hit_mask(geometry: Geometry, sites: Iterable[Site], value: int) -> np.ndarray:
    """States where some site of ``sites`` holds ``value``."""
    S = state_table(_check_size(geometry))
    idx = geometry.indices(sites)
    if idx.size == 0:
        return np.zeros(S.shape[0], dtype=bool)
    return (S[:, idx] == value).any(axis=1)


def pattern_mask(geometry: Geometry, pattern: dict) -> np.ndarray:
    """States matching ``{site: state}`` on every listed site."""
    S = state_table(_check_size(geometry))
    mask = np.ones(S.shape[0], dtype=bool)
    for site, value in pattern.items():
        mask &= S[:, geometry.index(site)] == int(value)
    return mask


def probability(dist: np.ndarray, mask: np.ndarray) -> float:
    return float(dist[mask].sum())


def hitting_probability(gen: GeneratorMatrix, init: np.ndarray, target: np.ndarray, t: float) -> float:
    """``P(chain visits target during [0, t])`` with the target made absorbing."""
    init = _check_distribution(init, gen.dimension)
    Q = gen.matrix.tolil()
    for i in np.flatnonzero(target):
        Q.rows[i] = []
        Q.data[i] = []
    absorbed = GeneratorMatrix(gen.params, gen.geometry, Q.tocsr())
    return probability(propagate(absorbed, init, t), target)


@dataclass(frozen=True)
class StationarityReport:
    params: Params
    n_sites: int
    stationary_residual: float
    detailed_balance_residual: float
    tolerance: float = 1e-12

    @property
    def ok(self) -> bool:
        return max(self.stationary_residual, self.detailed_balance_residual) < self.tolerance

    def to_json(self) -> str:
        return json.dumps({"params": self.params.to_dict(), "n_sites": self.n_sites,
                           "stationary_residual": self.stationary_residual,
                           "detailed_balance_residual": self.detailed_balance_residual, "ok": self.ok})


def environment_generator(params: Params, n_sites: int) -> np.ndarray:
    """Dense ``2^n`` generator of the blocked set; bit ``n-1-i`` of the index is site ``i``."""
    if 2 ** n_sites > MAX_STATES:
        raise ValueError("lattice too large for the exact oracle")
    N = 2 ** n_sites
    Q = np.zeros((N, N))
    for x in range(N):
        for i in range(n_sites):
            bit = 1 << (n_sites - 1 - i)
            Q[x, x ^ bit] = params.alpha * params.delta if x & bit else params.alpha
        Q[x, x] = -Q[x].sum()
    return Q


def environment_measure(rho: float, n_sites: int) -> np.ndarray:
    vec = np.ones(1)
    for _ in range(n_sites):
        vec = np.kron(vec, np.array([1.0 - rho, rho]))
    return vec


def check_environment_stationarity(params: Params, geometry: Geometry) -> StationarityReport:
    """Residuals of ``mu_rho Q = 0`` and of detailed balance for the flip chain."""
    n = _check_size(geometry)
    Q = environment_generator(params, n)
    mu = environment_measure(params.rho, n)
    flux = mu[:, None] * Q
    np.fill_diagonal(flux, 0.0)
    return StationarityReport(params, n, float(np.abs(mu @ Q).max()), float(np.abs(flux - flux.T).max()))


@dataclass(frozen=True)
class DualityCheck:
    params: Params
    A: tuple
    C: tuple
    D: tuple
    t: float
    lhs: float
    rhs: float

    @property
    def gap(self) -> float:
        return abs(self.lhs - self.rhs)

    def __iter__(self):
        return iter((self.lhs, self.rhs, self.gap))

    def to_json(self) -> str:
        return json.dumps({"params": self.params.to_dict(),
                           "sets": {"A": [list(s) for s in self.A], "C": [list(s) for s in self.C],
                                    "D": [list(s) for s in self.D]},
                           "t": self.t, "lhs": self.lhs, "rhs": self.rhs, "gap": self.gap})


def exact_duality_check(params: Params, geometry: Geometry, A: Iterable[Site], C: Iterable[Site],
                        D: Iterable[Site], t: float, gen: Optional[GeneratorMatrix] = None) -> DualityCheck:
    """Both sides of the self-duality identity computed exactly.

    ``lhs = P^{nu_A}(A_t meets C, B_t meets D)`` and
    ``rhs = P^{nu_C}(A_t meets A, B_0 meets D)``.
    """
    if geometry.birth_domain is not None:
        raise ValueError("duality is not defined for the restricted process")
    A, C, D = (tuple(geometry.site(i) for i in geometry.indices(s)) for s in (A, C, D))
    gen = gen or build_generator(params, geometry)
    rho = params.rho
    left = transient_distribution(gen, initial_distribution(InitialLaw.nu(A, rho), geometry), t)
    lhs = probability(left, hit_mask(geometry, C, 1) & hit_mask(geometry, D, -1))
    start = initial_distribution(InitialLaw.nu(C, rho), geometry)
    start[~hit_mask(geometry, D, -1)] = 0.0
    right = propagate(gen, start, t)
    rhs = probability(right, hit_mask(geometry, A, 1))
    return DualityCheck(params, A, C, D, float(t), lhs, rhs)


def expectation(dist: np.ndarray, geometry: Geometry, f: Callable[[np.ndarray], np.ndarray]) -> float:
    """``E f`` for a vectorized ``f`` acting on the ``(3^n, n)`` state table."""
    return float(dist @ f(state_table(geometry.n_sites)))
