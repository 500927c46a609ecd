"""Probability estimates with provenance, CSV/JSON export and exact merging."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

CSV_FIELDS = ("label", "estimate", "stderr", "replicates", "successes", "lower", "upper",
              "horizon", "seed", "config_hash", "replicate_ranges")


def config_hash(config: dict) -> str:
    """Short stable digest of a JSON-serializable configuration."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=_jsonable)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, (set, frozenset, tuple)):
        return list(obj)
    raise TypeError(f"{type(obj).__name__} is not JSON serializable")


def _normalize_ranges(ranges: Iterable[Sequence[int]]) -> list:
    out = sorted((int(a), int(b)) for a, b in ranges)
    for (a0, b0), (a1, b1) in zip(out, out[1:]):
        if a1 < b0:
            raise ValueError(f"replicate ranges [{a0}, {b0}) and [{a1}, {b1}) overlap")
    merged = []
    for a, b in out:
        if a >= b:
            raise ValueError(f"empty replicate range [{a}, {b})")
        if merged and merged[-1][1] == a:
            merged[-1] = (merged[-1][0], b)
        else:
            merged.append((a, b))
    return merged


@dataclass(frozen=True)
class EstimateReport:
    """A binomial proportion over ``replicates`` independent runs.

    ``successes`` counts runs where the event was observed. ``lower`` and
    ``upper`` count censored runs as failures and as successes respectively;
    without censoring all three coincide.
    """

    label: str
    successes: int
    replicates: int
    seed: int
    config_hash: str
    replicate_ranges: tuple
    horizon: Optional[float] = None
    lower_count: Optional[int] = None
    upper_count: Optional[int] = None
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("a report needs at least one replicate")
        lo = self.successes if self.lower_count is None else self.lower_count
        hi = self.successes if self.upper_count is None else self.upper_count
        if not 0 <= lo <= self.successes <= hi <= self.replicates:
            raise ValueError("inconsistent counts")
        object.__setattr__(self, "lower_count", int(lo))
        object.__setattr__(self, "upper_count", int(hi))
        ranges = _normalize_ranges(self.replicate_ranges)
        if sum(b - a for a, b in ranges) != self.replicates:
            raise ValueError("replicate ranges do not cover the replicate count")
        object.__setattr__(self, "replicate_ranges", tuple(ranges))

    @classmethod
    def from_indicators(cls, label: str, hits: np.ndarray, seed: int, config_hash: str,
                        replicate_ranges, horizon: Optional[float] = None,
                        censored: Optional[np.ndarray] = None, extra: Optional[dict] = None) -> "EstimateReport":
        hits = np.asarray(hits, dtype=bool)
        n = int(hits.size)
        s = int(hits.sum())
        if censored is None:
            lo = hi = s
        else:
            censored = np.asarray(censored, dtype=bool)
            lo = int((hits & ~censored).sum())
            hi = int((hits | censored).sum())
        return cls(label, s, n, int(seed), config_hash, tuple(map(tuple, replicate_ranges)),
                   None if horizon is None else float(horizon), lo, hi, dict(extra or {}))

    @property
    def estimate(self) -> float:
        return self.successes / self.replicates

    @property
    def stderr(self) -> float:
        p = self.estimate
        return math.sqrt(p * (1.0 - p) / self.replicates)

    @property
    def bracket(self) -> tuple:
        return self.lower_count / self.replicates, self.upper_count / self.replicates

    def ci(self, z: float = 3.0) -> tuple:
        half = z * self.stderr
        return max(0.0, self.estimate - half), min(1.0, self.estimate + half)

    def band_contains(self, p: float, z: float) -> bool:
        """Whether ``p`` is within ``z`` binomial standard deviations computed at ``p``."""
        sd = math.sqrt(max(p * (1.0 - p), 0.0) / self.replicates)
        return abs(self.estimate - p) <= z * sd + 1e-15

    def csv_row(self) -> list:
        lo, hi = self.bracket
        return [self.label, repr(self.estimate), repr(self.stderr), self.replicates, self.successes,
                repr(lo), repr(hi), "" if self.horizon is None else repr(self.horizon), self.seed,
                self.config_hash, ";".join(f"{a}-{b}" for a, b in self.replicate_ranges)]

    def to_dict(self) -> dict:
        out = asdict(self)
        out["replicate_ranges"] = [list(r) for r in self.replicate_ranges]
        out.update(estimate=self.estimate, stderr=self.stderr, bracket=list(self.bracket))
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, default=_jsonable)

    @classmethod
    def from_dict(cls, data: dict) -> "EstimateReport":
        return cls(data["label"], data["successes"], data["replicates"], data["seed"], data["config_hash"],
                   tuple(tuple(r) for r in data["replicate_ranges"]), data.get("horizon"),
                   data.get("lower_count"), data.get("upper_count"), dict(data.get("extra") or {}))

    @classmethod
    def from_json(cls, text: str) -> "EstimateReport":
        return cls.from_dict(json.loads(text))

    def merge(self, other: "EstimateReport") -> "EstimateReport":
        """Combine two reports over disjoint replicate ranges of the same run."""
        if (self.config_hash, self.seed, self.label, self.horizon) != \
                (other.config_hash, other.seed, other.label, other.horizon):
            raise ValueError("reports come from different configurations")
        return EstimateReport(self.label, self.successes + other.successes, self.replicates + other.replicates,
                              self.seed, self.config_hash, self.replicate_ranges + other.replicate_ranges,
                              self.horizon, self.lower_count + other.lower_count,
                              self.upper_count + other.upper_count, self.extra)


def reports_to_csv(reports: Iterable[EstimateReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in reports:
        w.writerow(r.csv_row())
    return buf.getvalue()


def merge_reports(reports: Sequence[EstimateReport]) -> EstimateReport:
    if not reports:
        raise ValueError("nothing to merge")
    out = reports[0]
    for r in reports[1:]:
        out = out.merge(r)
    return out
