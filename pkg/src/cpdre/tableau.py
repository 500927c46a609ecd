"""The graphical representation: every Poisson symbol on a space-time window.

A tableau is materialized once and then replayed by forward runs, by coupled
runs from several initial conditions, by thinned variants and by the dual.
"""

from __future__ import annotations

import enum
import io
import json
import struct
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, NamedTuple, Optional

import numpy as np

from . import _kernels
from ._rng import check_seed
from .lattice import Geometry, Params

FORMAT_VERSION = 1
MAX_HORIZON = 1e6
_MAGIC = b"CPDRETAB"
_RECORD = np.dtype([("time", "<f8"), ("id", "<u4"), ("kind", "u1")])


class EventKind(enum.IntEnum):
    ARROW = 0
    DEATH = 1
    BLOCK = 2
    UNBLOCK = 3


class Event(NamedTuple):
    time: float
    site: int
    kind: EventKind
    direction: int  # arrow slot, 0 for non-arrows
    target: int  # arrow target site, -1 if dead or not an arrow


@dataclass(frozen=True, eq=False)
class EventTableau:
    """Time-sorted events on ``(0, horizon)`` for one ``(seed, replicate)``.

    Arrays are parallel: ``times``, ``streams`` (``site * (2d + 3) + slot``)
    and ``ordinals`` (position of the event within its stream as generated,
    used to key thinning marks).
    """

    params: Params
    geometry: Geometry
    horizon: float
    seed: int
    replicate: int
    times: np.ndarray
    streams: np.ndarray
    ordinals: np.ndarray
    lineage: Optional[dict] = field(default=None)

    def __post_init__(self):
        if self.params.d != self.geometry.d:
            raise ValueError("params.d does not match the geometry dimension")
        for name, dtype in (("times", np.float64), ("streams", np.int64), ("ordinals", np.int64)):
            arr = np.ascontiguousarray(getattr(self, name), dtype=dtype)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def nslot(self) -> int:
        return 2 * self.params.d + 3

    @property
    def n_events(self) -> int:
        return int(self.times.shape[0])

    def __len__(self) -> int:
        return self.n_events

    @cached_property
    def sites(self) -> np.ndarray:
        return self.streams // self.nslot

    @cached_property
    def kinds(self) -> np.ndarray:
        slot = self.streams % self.nslot
        nd = 2 * self.params.d
        return np.where(slot < nd, 0, slot - nd + 1).astype(np.int8)

    @cached_property
    def directions(self) -> np.ndarray:
        slot = self.streams % self.nslot
        return np.where(slot < 2 * self.params.d, slot, 0).astype(np.int8)

    @cached_property
    def _site_index(self):
        order = np.argsort(self.sites, kind="stable")
        ptr = np.searchsorted(self.sites[order], np.arange(self.geometry.n_sites + 1))
        return order, ptr

    def site_events(self, site: int) -> np.ndarray:
        """Positions (into the global order) of events located at ``site``, in time order."""
        order, ptr = self._site_index
        return order[ptr[site]:ptr[site + 1]]

    def count(self, kind: EventKind) -> int:
        return int(np.count_nonzero(self.kinds == kind))

    def event(self, i: int) -> Event:
        kind = EventKind(int(self.kinds[i]))
        site = int(self.sites[i])
        direction = int(self.directions[i])
        target = int(self.geometry.neighbors[site, direction]) if kind == EventKind.ARROW else -1
        return Event(float(self.times[i]), site, kind, direction, target)

    def __iter__(self) -> Iterator[Event]:
        return (self.event(i) for i in range(self.n_events))

    def slice(self, t0: float, t1: float) -> Iterator[Event]:
        """Events with time in ``(t0, t1]``, in global order."""
        lo, hi = self.slice_bounds(t0, t1)
        return (self.event(i) for i in range(lo, hi))

    def slice_bounds(self, t0: float, t1: float) -> tuple:
        if not 0 <= t0 <= t1 <= self.horizon:
            raise ValueError(f"window ({t0}, {t1}] is not inside [0, {self.horizon}]")
        return (int(np.searchsorted(self.times, t0, side="right")),
                int(np.searchsorted(self.times, t1, side="right")))

    def select(self, keep: np.ndarray, params: Optional[Params] = None, lineage=None) -> "EventTableau":
        """A tableau holding the events flagged in ``keep`` (order preserved)."""
        return EventTableau(params or self.params, self.geometry, self.horizon, self.seed, self.replicate,
                            self.times[keep], self.streams[keep], self.ordinals[keep],
                            self.lineage if lineage is None else lineage)

    def header(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "params": self.params.to_dict(),
            "geometry": self.geometry.to_dict(),
            "horizon": self.horizon,
            "seed": self.seed,
            "replicate": self.replicate,
            "lineage": self.lineage,
            "n_events": self.n_events,
        }

    def to_bytes(self) -> bytes:
        """JSON header followed by packed ``(time f64, id u32, kind u8)`` records.

        ``id`` is the edge ``site * 2d + direction`` for arrows and the site
        otherwise. Ordinals follow as a trailing ``u4`` array.
        """
        nd = 2 * self.params.d
        rec = np.empty(self.n_events, dtype=_RECORD)
        rec["time"] = self.times
        slot = self.streams % self.nslot
        rec["id"] = np.where(slot < nd, self.sites * nd + slot, self.sites)
        rec["kind"] = self.kinds
        head = json.dumps(self.header(), sort_keys=True).encode()
        buf = io.BytesIO()
        buf.write(_MAGIC)
        buf.write(struct.pack("<I", len(head)))
        buf.write(head)
        buf.write(rec.tobytes())
        buf.write(self.ordinals.astype("<u4").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "EventTableau":
        if data[:len(_MAGIC)] != _MAGIC:
            raise ValueError("not a tableau record stream")
        pos = len(_MAGIC)
        (hlen,) = struct.unpack_from("<I", data, pos)
        pos += 4
        head = json.loads(data[pos:pos + hlen])
        pos += hlen
        if head["format_version"] != FORMAT_VERSION:
            raise ValueError(f"unsupported tableau format {head['format_version']}")
        params = Params.from_dict(head["params"])
        geometry = Geometry.from_dict(head["geometry"])
        n = head["n_events"]
        rec = np.frombuffer(data, dtype=_RECORD, count=n, offset=pos)
        pos += n * _RECORD.itemsize
        ordinals = np.frombuffer(data, dtype="<u4", count=n, offset=pos).astype(np.int64)
        nd = 2 * params.d
        nslot = nd + 3
        ids = rec["id"].astype(np.int64)
        kinds = rec["kind"].astype(np.int64)
        streams = np.where(kinds == 0, (ids // nd) * nslot + ids % nd, ids * nslot + nd + kinds - 1)
        return cls(params, geometry, head["horizon"], head["seed"], head["replicate"],
                   rec["time"].copy(), streams, ordinals, head["lineage"])

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "EventTableau":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    def __eq__(self, other):
        if not isinstance(other, EventTableau):
            return NotImplemented
        return (self.params == other.params and self.geometry == other.geometry
                and self.horizon == other.horizon and self.seed == other.seed
                and self.replicate == other.replicate and self.lineage == other.lineage
                and np.array_equal(self.times, other.times)
                and np.array_equal(self.streams, other.streams)
                and np.array_equal(self.ordinals, other.ordinals))

    __hash__ = None


def _check_horizon(horizon: float) -> float:
    horizon = float(horizon)
    if not 0 < horizon <= MAX_HORIZON:
        raise ValueError(f"horizon must be in (0, {MAX_HORIZON:g}], got {horizon}")
    return horizon


def generate(params: Params, geometry: Geometry, horizon: float, seed: int, replicate: int = 0) -> EventTableau:
    """Materialize all events on ``(0, horizon)``.

    Per site: ``2d`` arrow streams of rate ``beta/(2d)``, death at rate 1,
    block at ``alpha`` and unblock at ``alpha*delta``. Arrows whose slot points
    out of an absorbing-free box are kept (they are inert on replay).
    """
    if params.d != geometry.d:
        raise ValueError("params.d does not match the geometry dimension")
    horizon = _check_horizon(horizon)
    seed = check_seed(seed)
    times, streams, ordinals = _kernels.generate_events(
        np.uint64(seed), np.uint64(replicate), geometry.n_sites, 2 * params.d + 3, params.slot_rates(), horizon)
    return EventTableau(params, geometry, horizon, seed, int(replicate), times, streams, ordinals)


def thin_arrows(tableau: EventTableau, beta_prime: float, seed: int) -> EventTableau:
    """Keep each arrow independently with probability ``beta_prime / beta``.

    Each arrow carries a fixed uniform mark determined by ``(seed, replicate,
    stream, ordinal)`` and is kept iff the mark is below ``beta_prime``
    divided by the birth rate at which this seed's thinning started. Thinning
    one tableau with one seed at several rates therefore gives nested arrow
    sets, and thinning twice equals thinning once.
    """
    beta = tableau.params.beta
    beta_prime = float(beta_prime)
    if beta_prime < 0:
        raise ValueError("beta_prime must be nonnegative")
    if beta_prime > beta:
        raise ValueError(f"cannot thin upward: beta_prime={beta_prime} > beta={beta}")
    seed = check_seed(seed)
    params = tableau.params.replace(beta=beta_prime)
    if beta_prime == beta:
        return tableau.select(np.ones(tableau.n_events, bool), params)
    prior = tableau.lineage or {}
    root = prior["root_beta"] if prior.get("thin_seed") == seed else beta
    arrows = tableau.kinds == EventKind.ARROW
    keep = ~arrows
    if beta_prime > 0:
        marks = _kernels.thin_marks(np.uint64(seed), np.uint64(tableau.replicate),
                                    tableau.streams[arrows], tableau.ordinals[arrows])
        keep[arrows] = marks < beta_prime / root
    return tableau.select(keep, params, {"thin_seed": seed, "root_beta": root})


def splice(env_from: EventTableau, particles_from: EventTableau) -> EventTableau:
    """Environment events of one tableau with arrows and deaths of another."""
    if env_from.geometry != particles_from.geometry or env_from.params != particles_from.params:
        raise ValueError("tableaus must share params and geometry")
    if env_from.horizon != particles_from.horizon:
        raise ValueError("tableaus must share the horizon")
    env_keep = env_from.kinds >= EventKind.BLOCK
    part_keep = particles_from.kinds < EventKind.BLOCK
    times = np.concatenate([env_from.times[env_keep], particles_from.times[part_keep]])
    streams = np.concatenate([env_from.streams[env_keep], particles_from.streams[part_keep]])
    ordinals = np.concatenate([env_from.ordinals[env_keep], particles_from.ordinals[part_keep]])
    order = np.lexsort((streams, times))
    return EventTableau(env_from.params, env_from.geometry, env_from.horizon, env_from.seed,
                        env_from.replicate, times[order], streams[order], ordinals[order],
                        {"spliced_particles_seed": particles_from.seed})
