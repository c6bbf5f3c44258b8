"""Parametric kernels, mark distributions, and immigration intensities.

A kernel is a mass (branching ratio) times a normalized density on [0, inf).
Only the exponential family is implemented; the family tag exists so further
parametric families (eval / mass-upto / sample / weighted-MLE hooks) can be
added without touching the estimators.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Kernel",
    "MarkDistribution",
    "ImmigrationIntensity",
    "kernel_eval",
    "kernel_mass_upto",
    "sample_density",
    "sample_mark",
    "mark_log_density",
    "immigration_mass",
    "immigration_mass_upto",
    "immigration_value",
    "sample_immigration",
]

EXPONENTIAL = "exponential"
CONSTANT = "constant"
PIECEWISE = "piecewise-constant"

_TINY = np.finfo(float).tiny


@dataclass(frozen=True, slots=True)
class Kernel:
    """Triggering kernel ``mass * rate * exp(-rate * t)`` on [0, inf).

    ``mass`` is the branching ratio (integral of the kernel over [0, inf)),
    ``rate`` the inverse time scale.
    """

    mass: float
    rate: float
    family: str = EXPONENTIAL

    def __post_init__(self) -> None:
        if self.family != EXPONENTIAL:
            raise ValueError(f"unsupported kernel family: {self.family!r}")
        if not self.mass >= 0.0:
            raise ValueError(f"kernel mass must be >= 0, got {self.mass}")
        if not self.rate > 0.0:
            raise ValueError(f"kernel rate must be > 0, got {self.rate}")


@dataclass(frozen=True, slots=True)
class MarkDistribution:
    """Distribution of the positive multiplicative marks on immigrant clusters."""

    family: str = CONSTANT
    mean: float = 1.0

    def __post_init__(self) -> None:
        if self.family not in (CONSTANT, EXPONENTIAL):
            raise ValueError(f"unsupported mark family: {self.family!r}")
        if self.family == CONSTANT and self.mean != 1.0:
            raise ValueError("constant marks are identically 1")
        if not self.mean > 0.0:
            raise ValueError(f"mark mean must be > 0, got {self.mean}")

    @property
    def is_constant(self) -> bool:
        return self.family == CONSTANT


@dataclass(frozen=True)
class ImmigrationIntensity:
    """Constant or piecewise-constant immigration rate on a window.

    ``levels[k]`` applies on the k-th piece; pieces are delimited by the
    strictly ascending interior ``breakpoints`` (the last piece extends to the
    window end). A single level with no breakpoints is the constant case.
    """

    levels: np.ndarray
    breakpoints: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __init__(self, levels, breakpoints=()) -> None:
        levels = np.atleast_1d(np.asarray(levels, dtype=float))
        breakpoints = np.atleast_1d(np.asarray(breakpoints, dtype=float))
        if levels.size != breakpoints.size + 1:
            raise ValueError("need exactly len(breakpoints) + 1 levels")
        if np.any(levels < 0):
            raise ValueError("immigration levels must be >= 0")
        if breakpoints.size and (np.any(np.diff(breakpoints) <= 0) or breakpoints[0] <= 0):
            raise ValueError("breakpoints must be strictly ascending and > 0")
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "breakpoints", breakpoints)

    @classmethod
    def constant(cls, level: float) -> "ImmigrationIntensity":
        return cls([level])

    @classmethod
    def histogram(cls, levels, t_end: float) -> "ImmigrationIntensity":
        """Equal-width histogram intensity with ``len(levels)`` pieces on (0, t_end]."""
        levels = np.asarray(levels, dtype=float)
        cuts = np.linspace(0.0, t_end, levels.size + 1)[1:-1]
        return cls(levels, cuts)

    @property
    def is_constant(self) -> bool:
        return self.levels.size == 1

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ImmigrationIntensity)
            and np.array_equal(self.levels, other.levels)
            and np.array_equal(self.breakpoints, other.breakpoints)
        )


def kernel_eval(k: Kernel, t):
    """Kernel value ``mass * rate * exp(-rate * t)``; ``t`` may be an array.

    Raises ValueError for negative times.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("kernel argument must be >= 0")
    out = k.mass * k.rate * np.exp(-k.rate * t)
    return float(out) if out.ndim == 0 else out


def kernel_mass_upto(k: Kernel, t):
    """Integral of the kernel over [0, t]: ``mass * (1 - exp(-rate * t))``."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("kernel argument must be >= 0")
    out = k.mass * -np.expm1(-k.rate * t)
    return float(out) if out.ndim == 0 else out


def sample_density(k: Kernel, rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw ``n`` interevent times from the normalized kernel density."""
    if n < 0:
        raise ValueError("n must be >= 0")
    draws = rng.exponential(1.0 / k.rate, size=n)
    # exponential sampling can return exactly 0.0; the support is (0, inf)
    draws[draws == 0.0] = _TINY
    return draws


def sample_mark(m: MarkDistribution, rng: np.random.Generator, n: int | None = None):
    """One mark (or ``n`` marks) from the mark distribution; always > 0."""
    size = 1 if n is None else n
    if m.is_constant:
        out = np.ones(size)
    else:
        out = rng.exponential(m.mean, size=size)
        out[out == 0.0] = _TINY
    return float(out[0]) if n is None else out


def mark_log_density(m: MarkDistribution, y) -> np.ndarray:
    """Log-density of marks; constant marks contribute 0 (point mass at 1)."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if m.is_constant:
        return np.where(y == 1.0, 0.0, -np.inf)
    return -np.log(m.mean) - y / m.mean


def _piece_edges(mu: ImmigrationIntensity, t_end: float) -> np.ndarray:
    if mu.breakpoints.size and mu.breakpoints[-1] >= t_end:
        raise ValueError("breakpoints must lie inside the window")
    return np.concatenate(([0.0], mu.breakpoints, [t_end]))


def immigration_mass(mu: ImmigrationIntensity, t_end: float) -> float:
    """Total immigration mass over the window (0, t_end]."""
    if not t_end > 0:
        raise ValueError("window end must be > 0")
    edges = _piece_edges(mu, t_end)
    return float(np.sum(mu.levels * np.diff(edges)))


def immigration_mass_upto(mu: ImmigrationIntensity, t, t_end: float):
    """Integral of the intensity over (0, t] for t in [0, t_end]."""
    t = np.asarray(t, dtype=float)
    edges = _piece_edges(mu, t_end)
    cum = np.concatenate(([0.0], np.cumsum(mu.levels * np.diff(edges))))
    idx = np.searchsorted(edges, t, side="right") - 1
    idx = np.clip(idx, 0, mu.levels.size - 1)
    out = cum[idx] + mu.levels[idx] * (t - edges[idx])
    return float(out) if out.ndim == 0 else out


def immigration_value(mu: ImmigrationIntensity, t):
    """Intensity at time t; times before 0 use the first piece's level."""
    t = np.asarray(t, dtype=float)
    idx = np.searchsorted(mu.breakpoints, t, side="right")
    out = mu.levels[idx]
    return float(out) if out.ndim == 0 else out


def sample_immigration(
    mu: ImmigrationIntensity,
    t_end: float,
    rng: np.random.Generator,
    t_start: float = 0.0,
) -> np.ndarray:
    """Sorted Poisson immigration times on (t_start, t_end].

    ``t_start`` may be negative (burn-in); the intensity extends constantly to
    the left of 0 by the first piece's level.
    """
    if t_start >= t_end:
        raise ValueError("empty window")
    edges = _piece_edges(mu, t_end)
    levels = mu.levels
    if t_start < 0:
        edges = np.concatenate(([t_start], edges))
        levels = np.concatenate(([levels[0]], levels))
    else:
        edges = edges.copy()
        keep = edges > t_start
        edges = np.concatenate(([t_start], edges[keep]))
        levels = levels[levels.size - (edges.size - 1):]
    widths = np.diff(edges)
    counts = rng.poisson(levels * widths)
    times = [
        rng.uniform(edges[i], edges[i + 1], counts[i])
        for i in range(len(widths))
        if counts[i] > 0
    ]
    if not times:
        return np.empty(0)
    out = np.concatenate(times)
    out.sort()
    return out
