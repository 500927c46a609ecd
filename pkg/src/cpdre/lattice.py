"""Lattice geometry, site states, model parameters and initial laws.

Sites of a box are enumerated in row-major order (last coordinate fastest);
that enumeration is the deterministic tie-breaker used by every other module.
Coordinates are tuples of ints; in one dimension a bare int is accepted
wherever a site is expected.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from . import _kernels
from ._rng import check_seed

Site = Union[int, Sequence[int]]


def equilibrium_density(delta: float) -> float:
    """Stationary probability that a site is blocked, ``1 / (1 + delta)``."""
    delta = float(delta)
    if not delta >= 0:
        raise ValueError(f"delta must be nonnegative, got {delta}")
    return 1.0 / (1.0 + delta)


@dataclass(frozen=True)
class Params:
    """Model parameters.

    ``beta`` is the total birth rate of an occupied site; each of the ``2d``
    directed neighbor slots receives births at rate ``beta / (2d)``.
    """

    d: int
    alpha: float
    beta: float
    delta: float

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"d must be a positive integer, got {self.d}")
        for name in ("alpha", "beta", "delta"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value >= 0):
                raise ValueError(f"{name} must be a finite nonnegative number, got {value!r}")
        object.__setattr__(self, "d", int(self.d))
        for name in ("alpha", "beta", "delta"):
            object.__setattr__(self, name, float(getattr(self, name)))

    @property
    def rho(self) -> float:
        return equilibrium_density(self.delta)

    @property
    def q(self) -> float:
        return self.delta / (1.0 + self.delta)

    def replace(self, **changes) -> "Params":
        values = {"d": self.d, "alpha": self.alpha, "beta": self.beta, "delta": self.delta}
        values.update(changes)
        return Params(**values)

    def slot_rates(self) -> np.ndarray:
        """Per-site stream rates: 2d arrow slots, then death, block, unblock."""
        nd = 2 * self.d
        rates = np.empty(nd + 3)
        rates[:nd] = self.beta / nd
        rates[nd] = 1.0
        rates[nd + 1] = self.alpha
        rates[nd + 2] = self.alpha * self.delta
        return rates

    def to_dict(self) -> dict:
        return {"d": self.d, "alpha": self.alpha, "beta": self.beta, "delta": self.delta}

    @classmethod
    def from_dict(cls, data: Mapping) -> "Params":
        return cls(d=data["d"], alpha=data["alpha"], beta=data["beta"], delta=data["delta"])


class SiteState(enum.IntEnum):
    BLOCKED = -1
    VACANT = 0
    OCCUPIED = 1

    @property
    def char(self) -> str:
        return _STATE_CHARS[self]


_STATE_CHARS = {SiteState.BLOCKED: "B", SiteState.VACANT: ".", SiteState.OCCUPIED: "1"}
_CHAR_STATES = {c: int(s) for s, c in _STATE_CHARS.items()}


def _as_tuple(x) -> tuple:
    if isinstance(x, (int, np.integer)):
        return (int(x),)
    return tuple(int(v) for v in x)


@dataclass(frozen=True)
class Geometry:
    """A finite box of sites ``lo[k] <= x[k] <= hi[k]`` (inclusive corners).

    ``periodic=False`` is the absorbing-free mode: arrows that would leave the
    box are generated but have no target. ``birth_domain`` is an optional
    inclusive sub-box outside which births are suppressed.
    """

    lo: tuple
    hi: tuple
    periodic: bool = False
    birth_domain: Optional[tuple] = None

    def __post_init__(self):
        lo, hi = _as_tuple(self.lo), _as_tuple(self.hi)
        if len(lo) != len(hi) or not lo:
            raise ValueError("lo and hi must have the same positive length")
        if any(h < l for l, h in zip(lo, hi)):
            raise ValueError(f"empty box: lo={lo}, hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "periodic", bool(self.periodic))
        if self.birth_domain is not None:
            blo, bhi = (_as_tuple(c) for c in self.birth_domain)
            if len(blo) != len(lo) or len(bhi) != len(lo):
                raise ValueError("birth_domain dimension mismatch")
            if any(b < l for b, l in zip(blo, lo)) or any(b > h for b, h in zip(bhi, hi)):
                raise ValueError("birth_domain must be contained in the box")
            if any(h < l for l, h in zip(blo, bhi)):
                raise ValueError("empty birth_domain")
            object.__setattr__(self, "birth_domain", (blo, bhi))

    @classmethod
    def line(cls, n: int, periodic: bool = False) -> "Geometry":
        """Sites ``0 .. n-1`` in one dimension."""
        return cls((0,), (n - 1,), periodic)

    @classmethod
    def ring(cls, n: int) -> "Geometry":
        return cls.line(n, periodic=True)

    @classmethod
    def cube(cls, radius: int, d: int = 1, periodic: bool = False, birth_radius: Optional[int] = None) -> "Geometry":
        """The box ``[-radius, radius]^d``, optionally restricting births to ``[-birth_radius, birth_radius]^d``."""
        lo, hi = (-radius,) * d, (radius,) * d
        bd = None if birth_radius is None else ((-birth_radius,) * d, (birth_radius,) * d)
        return cls(lo, hi, periodic, bd)

    @property
    def d(self) -> int:
        return len(self.lo)

    @property
    def shape(self) -> tuple:
        return tuple(h - l + 1 for l, h in zip(self.lo, self.hi))

    @property
    def n_sites(self) -> int:
        return int(np.prod(self.shape))

    @cached_property
    def coords(self) -> np.ndarray:
        """Coordinates of every site, shape ``(n_sites, d)``, in row-major order."""
        grids = np.meshgrid(*[np.arange(l, h + 1) for l, h in zip(self.lo, self.hi)], indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1).astype(np.int64)

    def contains(self, site: Site) -> bool:
        x = _as_tuple(site)
        return len(x) == self.d and all(l <= v <= h for v, l, h in zip(x, self.lo, self.hi))

    def index(self, site: Site) -> int:
        x = _as_tuple(site)
        if not self.contains(x):
            raise ValueError(f"site {x} is outside the box {self.lo}..{self.hi}")
        return int(np.ravel_multi_index(tuple(v - l for v, l in zip(x, self.lo)), self.shape))

    def indices(self, sites: Iterable[Site]) -> np.ndarray:
        return np.array(sorted({self.index(s) for s in sites}), dtype=np.int64)

    def mask(self, sites: Iterable[Site]) -> np.ndarray:
        m = np.zeros(self.n_sites, dtype=np.bool_)
        m[self.indices(sites)] = True
        return m

    def site(self, index: int) -> tuple:
        return tuple(int(v) for v in self.coords[index])

    @cached_property
    def neighbors(self) -> np.ndarray:
        """Target of each directed slot, ``(n_sites, 2d)``; ``-1`` marks a dead slot.

        Slot ``2k`` points along ``+e_k``, slot ``2k+1`` along ``-e_k``.
        """
        shape = np.array(self.shape)
        rel = self.coords - np.array(self.lo)
        out = np.empty((self.n_sites, 2 * self.d), dtype=np.int64)
        for k in range(self.d):
            for j, step in enumerate((1, -1)):
                moved = rel.copy()
                moved[:, k] += step
                if self.periodic:
                    moved[:, k] %= shape[k]
                    ok = np.ones(self.n_sites, dtype=bool)
                else:
                    ok = (moved[:, k] >= 0) & (moved[:, k] < shape[k])
                clipped = np.clip(moved, 0, shape - 1)
                idx = np.ravel_multi_index(tuple(clipped.T), self.shape)
                out[:, 2 * k + j] = np.where(ok, idx, -1)
        return out

    @cached_property
    def birth_mask(self) -> np.ndarray:
        if self.birth_domain is None:
            return np.ones(self.n_sites, dtype=np.bool_)
        blo, bhi = self.birth_domain
        return np.all((self.coords >= np.array(blo)) & (self.coords <= np.array(bhi)), axis=1)

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        """Sites whose occupation flags a replicate as censored.

        Only meaningful for unrestricted absorbing-free boxes; empty otherwise.
        """
        if self.periodic or self.birth_domain is not None:
            return np.zeros(self.n_sites, dtype=np.bool_)
        return np.any(self.neighbors < 0, axis=1)

    def to_dict(self) -> dict:
        return {
            "lo": list(self.lo),
            "hi": list(self.hi),
            "periodic": self.periodic,
            "birth_domain": None if self.birth_domain is None else [list(c) for c in self.birth_domain],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "Geometry":
        bd = data.get("birth_domain")
        return cls(tuple(data["lo"]), tuple(data["hi"]), bool(data.get("periodic", False)),
                   None if bd is None else (tuple(bd[0]), tuple(bd[1])))


@dataclass(frozen=True, eq=False)
class Configuration:
    """Assignment of a :class:`SiteState` to every site of a geometry."""

    geometry: Geometry
    states: np.ndarray

    def __post_init__(self):
        states = np.array(self.states, dtype=np.int8).reshape(-1)
        if states.shape[0] != self.geometry.n_sites:
            raise ValueError(f"expected {self.geometry.n_sites} states, got {states.shape[0]}")
        if np.any((states < -1) | (states > 1)):
            raise ValueError("site states must be -1, 0 or 1")
        states.setflags(write=False)
        object.__setattr__(self, "states", states)

    @classmethod
    def filled(cls, geometry: Geometry, state: SiteState) -> "Configuration":
        return cls(geometry, np.full(geometry.n_sites, int(state), dtype=np.int8))

    @classmethod
    def from_sets(cls, geometry: Geometry, occupied: Iterable[Site] = (), blocked: Iterable[Site] = ()) -> "Configuration":
        states = np.zeros(geometry.n_sites, dtype=np.int8)
        occ, blk = geometry.indices(occupied), geometry.indices(blocked)
        if np.intersect1d(occ, blk).size:
            raise ValueError("occupied and blocked sets overlap")
        states[occ] = 1
        states[blk] = -1
        return cls(geometry, states)

    def __eq__(self, other):
        if not isinstance(other, Configuration):
            return NotImplemented
        return self.geometry == other.geometry and np.array_equal(self.states, other.states)

    def __hash__(self):
        return hash((self.geometry, self.states.tobytes()))

    def __getitem__(self, site: Site) -> SiteState:
        return SiteState(int(self.states[self.geometry.index(site)]))

    @property
    def occupied(self) -> np.ndarray:
        """Row-major indices of the set ``A``."""
        return np.flatnonzero(self.states == 1)

    @property
    def blocked(self) -> np.ndarray:
        """Row-major indices of the set ``B``."""
        return np.flatnonzero(self.states == -1)

    def occupied_sites(self) -> set:
        return {self.geometry.site(i) for i in self.occupied}

    def blocked_sites(self) -> set:
        return {self.geometry.site(i) for i in self.blocked}

    def to_text(self) -> str:
        """One character per site ('B', '.', '1'); a newline ends each row of the last axis."""
        chars = np.array(["B", ".", "1"])[self.states + 1]
        width = self.geometry.shape[-1]
        return "\n".join("".join(chars[i:i + width]) for i in range(0, len(chars), width))

    @classmethod
    def from_text(cls, text: str, geometry: Geometry) -> "Configuration":
        chars = [c for c in text if not c.isspace()]
        try:
            states = [_CHAR_STATES[c] for c in chars]
        except KeyError as exc:
            raise ValueError(f"unknown site character {exc.args[0]!r}") from None
        return cls(geometry, np.array(states, dtype=np.int8))

    def to_json(self) -> str:
        return json.dumps({"geometry": self.geometry.to_dict(), "states": self.to_text()})

    @classmethod
    def from_json(cls, text: str) -> "Configuration":
        data = json.loads(text)
        return cls.from_text(data["states"], Geometry.from_dict(data["geometry"]))


def leq(eta1: Configuration, eta2: Configuration) -> bool:
    """The coordinatewise partial order ``eta1(x) <= eta2(x)`` for all sites."""
    if eta1.geometry != eta2.geometry:
        raise ValueError("configurations live on different geometries")
    return bool(np.all(eta1.states <= eta2.states))


@dataclass(frozen=True)
class InitialLaw:
    """An initial distribution: ``nu(A)``, ``chi(A)``, ``mu_rho`` or a fixed configuration.

    ``nu`` and ``mu_rho`` need the blocked-site density ``rho``.
    """

    kind: str
    sites: tuple = ()
    rho: Optional[float] = None
    config: Optional[Configuration] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in ("nu", "chi", "mu_rho", "deterministic"):
            raise ValueError(f"unknown initial law {self.kind!r}")
        if self.kind in ("nu", "mu_rho"):
            if self.rho is None or not 0.0 < self.rho <= 1.0:
                raise ValueError(f"{self.kind} requires rho in (0, 1], got {self.rho}")
        if self.kind == "deterministic" and self.config is None:
            raise ValueError("deterministic law requires a configuration")
        object.__setattr__(self, "sites", tuple(_as_tuple(s) for s in self.sites))

    @classmethod
    def nu(cls, sites: Iterable[Site], rho: float) -> "InitialLaw":
        return cls("nu", tuple(sites), float(rho))

    @classmethod
    def chi(cls, sites: Iterable[Site]) -> "InitialLaw":
        return cls("chi", tuple(sites))

    @classmethod
    def mu_rho(cls, rho: float) -> "InitialLaw":
        return cls("mu_rho", (), float(rho))

    @classmethod
    def deterministic(cls, config: Configuration) -> "InitialLaw":
        return cls("deterministic", (), None, config)

    @property
    def is_random(self) -> bool:
        return self.kind in ("nu", "mu_rho")

    def kernel_args(self, geometry: Geometry):
        """``(template, use_nu, a_mask, rho)`` as consumed by the JIT samplers."""
        for s in self.sites:
            if not geometry.contains(s):
                raise ValueError(f"site {s} of the initial law is outside the box")
        n = geometry.n_sites
        if self.kind == "deterministic":
            if self.config.geometry != geometry:
                raise ValueError("initial configuration lives on a different geometry")
            return self.config.states.copy(), False, np.zeros(n, np.bool_), 0.0
        if self.kind == "chi":
            template = np.full(n, -1, dtype=np.int8)
            template[geometry.indices(self.sites)] = 1
            return template, False, np.zeros(n, np.bool_), 0.0
        mask = geometry.mask(self.sites) if self.kind == "nu" else np.zeros(n, np.bool_)
        return np.zeros(n, np.int8), True, mask, float(self.rho)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "sites": [list(s) for s in self.sites], "rho": self.rho}
        if self.config is not None:
            out["config"] = self.config.to_text()
        return out


def sample_initial(law: InitialLaw, geometry: Geometry, seed: int, replicate: int = 0) -> Configuration:
    """Draw one configuration from ``law``; deterministic in ``(seed, replicate)``.

    Under ``nu(A)`` each site is blocked independently with probability ``rho``
    and every unblocked site of ``A`` is occupied. Replicate ``r`` of a batch
    estimator sees exactly ``sample_initial(law, geometry, seed, r)``.
    """
    template, use_nu, mask, rho = law.kernel_args(geometry)
    states = _kernels.sample_state(np.uint64(check_seed(seed)), np.uint64(replicate), template, use_nu, mask, rho)
    return Configuration(geometry, states)
