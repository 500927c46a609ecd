"""Closed-form phase-boundary bounds: the extinction threshold in beta and the branching bound on delta."""

from __future__ import annotations

import math
from dataclasses import dataclass

from scipy.optimize import bisect

# Critical total birth rate of the ordinary contact process (2d times the
# per-edge critical rate), from the series/Monte Carlo literature.
DEFAULT_BETA_C_CP = {
    1: (3.297848, "d=1: per-edge critical rate 1.648924 (series expansion), times 2"),
    2: (1.64874, "d=2: per-edge critical rate 0.412185 (Monte Carlo), times 4"),
    3: (1.3212, "d=3: per-edge critical rate 0.22020 (Monte Carlo), times 6"),
}


@dataclass(frozen=True)
class BoundsInput:
    """Externally supplied critical birth rate of the contact process without environment."""

    beta_c_cp: float
    source: str = "user supplied"

    def __post_init__(self):
        if not (math.isfinite(self.beta_c_cp) and self.beta_c_cp > 0):
            raise ValueError("beta_c_cp must be a positive number")
        object.__setattr__(self, "beta_c_cp", float(self.beta_c_cp))

    @classmethod
    def default(cls, d: int) -> "BoundsInput":
        if d not in DEFAULT_BETA_C_CP:
            raise ValueError(f"no default critical value for d={d}; supply one")
        value, source = DEFAULT_BETA_C_CP[d]
        return cls(value, source)


def extinction_threshold_beta(alpha: float, bounds: BoundsInput) -> float:
    """``(alpha + 1) * beta_c_cp``; at or below it the process dies out."""
    if not alpha >= 0:
        raise ValueError("alpha must be nonnegative")
    return (alpha + 1.0) * bounds.beta_c_cp


def branching_lhs(q: float, d: int) -> float:
    """``4d (2q(2-q)/(1-q)^2 + q)``, increasing on ``[0, 1)`` from 0."""
    return 4 * d * (2 * q * (2 - q) / (1 - q) ** 2 + q)


@dataclass(frozen=True)
class DeltaBound:
    """Unpacks as ``(q_star, delta_p)``; ``residual`` is the root's equation residual."""

    d: int
    q_star: float
    delta_p: float
    residual: float

    def __iter__(self):
        return iter((self.q_star, self.delta_p))


def branching_bound_delta_p(d: int) -> DeltaBound:
    """Root ``q_star`` of ``branching_lhs(q, d) = 1`` and ``delta_p = q_star / (1 - q_star)``.

    Any ``delta < delta_p`` makes the bound strict and certifies extinction.
    """
    if int(d) != d or d < 1:
        raise ValueError("d must be a positive integer")
    d = int(d)
    f = lambda q: branching_lhs(q, d) - 1.0  # noqa: E731
    q = bisect(f, 0.0, 0.5, xtol=1e-18, rtol=8.9e-16, maxiter=400)
    return DeltaBound(d, q, q / (1.0 - q), abs(f(q)))
