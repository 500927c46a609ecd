"""Counter-based random numbers for the JIT kernels.

Every random quantity in the simulator is addressed by a key derived from
``(seed, replicate, domain, index)`` and a counter. The draw is the SplitMix64
output at position ``counter`` of the sequence seeded by the key, so any draw
can be recomputed without replaying earlier ones. This is what lets a tableau
be generated window by window and still be bit-identical to the fully
materialized one, and what makes replicate ``r`` independent of how replicates
are sharded across workers.
"""

import math

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0

# key domains; never reuse a value for a different purpose
DOMAIN_STREAM = 1
DOMAIN_INIT = 2
DOMAIN_THIN = 3
DOMAIN_DERIVE = 4

MAX_SEED = 2**64 - 1


@njit(inline="always", cache=True)
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(inline="always", cache=True)
def make_key(seed, rep, domain, index):
    h = mix64(np.uint64(seed) + _GOLDEN)
    h = mix64((h ^ np.uint64(rep)) + _GOLDEN)
    h = mix64((h ^ np.uint64(domain)) + _GOLDEN)
    return mix64((h ^ np.uint64(index)) + _GOLDEN)


@njit(inline="always", cache=True)
def uniform(key, counter):
    """Uniform double in [0, 1) at position ``counter`` of stream ``key``."""
    z = mix64(key + (np.uint64(counter) + np.uint64(1)) * _GOLDEN)
    return float(z >> _S11) * _INV53


@njit(inline="always", cache=True)
def exponential(key, counter, rate):
    return -math.log1p(-uniform(key, counter)) / rate


@njit(cache=True)
def _uniforms(seed, rep, domain, index, n):
    key = make_key(seed, rep, domain, index)
    out = np.empty(n)
    for i in range(n):
        out[i] = uniform(key, i)
    return out


def check_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed <= MAX_SEED:
        raise ValueError(f"seed must be an integer in [0, 2**64), got {seed}")
    return seed


def uniforms(seed: int, rep: int, domain: int, index: int, n: int) -> np.ndarray:
    """First ``n`` draws of one keyed stream (for tests and small Python-side needs)."""
    return _uniforms(np.uint64(check_seed(seed)), np.uint64(rep), np.uint64(domain), np.uint64(index), n)


def derive_seed(seed: int, tag: int) -> int:
    """A child seed for an independent family of replicates (e.g. a second run)."""
    u = _uniforms(np.uint64(check_seed(seed)), np.uint64(0), np.uint64(DOMAIN_DERIVE), np.uint64(tag), 2)
    return int(u[0] * 2**53) * 2**11 + int(u[1] * 2**11)
