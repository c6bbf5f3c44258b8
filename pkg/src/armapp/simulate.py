"""Exact cluster-construction simulation of the ARMA point process.

Three stages: Poisson immigrants, a single burst of MA offspring per
immigrant (brood size Poisson(gamma * mark)), then AR offspring cascading
generation by generation (brood size Poisson(eta) per existing point) until
no fertile point remains inside the window. Simulation runs on (-burn_in, T]
and the burn-in region is discarded at the end.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .kernels import (
    ImmigrationIntensity,
    Kernel,
    MarkDistribution,
    sample_immigration,
    sample_mark,
)

__all__ = ["ModelSpec", "EventSequence", "simulate_arma", "simulate_until_count", "default_burn_in"]


@dataclass(frozen=True)
class ModelSpec:
    """Full generative specification of an ARMA point process."""

    mu: ImmigrationIntensity
    theta: Kernel
    phi: Kernel
    marks: MarkDistribution = field(default_factory=MarkDistribution)
    immigrants_included: bool = True

    def __post_init__(self) -> None:
        if self.phi.mass >= 1.0:
            raise ValueError(f"supercritical AR branching ratio eta={self.phi.mass} >= 1")

    @property
    def eta(self) -> float:
        return self.phi.mass

    @property
    def gamma(self) -> float:
        return self.theta.mass

    @property
    def marked(self) -> bool:
        return not self.marks.is_constant


@dataclass
class EventSequence:
    """Ordered event times on (0, t_end] with optional marks and genealogy.

    ``parent[i]`` is the index of the triggering event, -1 when the trigger is
    not part of this sequence (immigrants; burn-in or companion-sequence
    parents). ``generation`` counts branching depth: 0 immigrant, 1 its MA or
    first AR offspring, and so on. For marked models ``marks`` holds the
    immigrants' marks and NaN on offspring rows.
    """

    t_end: float
    times: np.ndarray
    marks: np.ndarray | None = None
    is_immigrant: np.ndarray | None = None
    parent: np.ndarray | None = None
    generation: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=float)
        if not self.t_end > 0:
            raise ValueError("t_end must be > 0")
        if self.times.size:
            if np.any(np.diff(self.times) < 0):
                raise ValueError("times must be ascending")
            if self.times[0] <= 0 or self.times[-1] > self.t_end:
                raise ValueError("times must lie in (0, t_end]")
        for name in ("marks", "is_immigrant", "parent", "generation"):
            arr = getattr(self, name)
            if arr is not None and len(arr) != self.times.size:
                raise ValueError(f"{name} not aligned with times")

    @property
    def n(self) -> int:
        return self.times.size

    @classmethod
    def empty(cls, t_end: float) -> "EventSequence":
        return cls(t_end=t_end, times=np.empty(0))


def default_burn_in(spec: ModelSpec) -> float:
    """Burn-in covering the renormalized cluster time scale 1/((1-eta) phi1)."""
    ar_scale = 1.0 / ((1.0 - spec.eta) * spec.phi.rate)
    return 20.0 * max(ar_scale, 1.0 / spec.theta.rate)


def simulate_arma(
    spec: ModelSpec,
    t_end: float,
    burn_in: float | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[EventSequence, EventSequence]:
    """Simulate on (0, t_end], returning (events, immigrants).

    When ``spec.immigrants_included`` the immigrant points appear inside
    ``events`` (flagged) as well as in the companion sequence; otherwise they
    live only in the companion and offspring rooted at an immigrant carry
    parent -1.
    """
    if rng is None:
        rng = np.random.default_rng()
    if not t_end > 0:
        raise ValueError("t_end must be > 0")
    if burn_in is None:
        burn_in = default_burn_in(spec)
    if burn_in < 0:
        raise ValueError("burn_in must be >= 0")

    # stage I: immigrants on (-burn_in, t_end]
    imm_times = sample_immigration(spec.mu, t_end, rng, t_start=-burn_in)
    n_imm = imm_times.size
    imm_marks = sample_mark(spec.marks, rng, n_imm) if n_imm else np.empty(0)

    times = [imm_times]
    parents = [np.full(n_imm, -1, dtype=np.int64)]
    gens = [np.zeros(n_imm, dtype=np.int64)]

    # stage II: one MA burst per immigrant, brood ~ Poisson(gamma * mark)
    broods = rng.poisson(spec.gamma * imm_marks) if n_imm else np.empty(0, dtype=np.int64)
    total = int(broods.sum()) if n_imm else 0
    ma_parent = np.repeat(np.arange(n_imm), broods)
    ma_times = imm_times[ma_parent] + rng.exponential(1.0 / spec.theta.rate, total)
    times.append(ma_times)
    parents.append(ma_parent)
    gens.append(np.ones(total, dtype=np.int64))

    # stage III: AR generations; every existing point spawns Poisson(eta)
    frontier_times = np.concatenate([imm_times, ma_times])
    frontier_idx = np.arange(frontier_times.size)
    frontier_gen = np.concatenate([gens[0], gens[1]])
    keep = frontier_times <= t_end
    frontier_times, frontier_idx, frontier_gen = (
        frontier_times[keep], frontier_idx[keep], frontier_gen[keep])
    offset = n_imm + total
    while frontier_times.size:
        b = rng.poisson(spec.eta, frontier_times.size)
        kids = int(b.sum())
        if kids == 0:
            break
        kid_parent = np.repeat(frontier_idx, b)
        kid_gen = np.repeat(frontier_gen, b) + 1
        kid_times = np.repeat(frontier_times, b) + rng.exponential(1.0 / spec.phi.rate, kids)
        times.append(kid_times)
        parents.append(kid_parent)
        gens.append(kid_gen)
        keep = kid_times <= t_end
        frontier_times = kid_times[keep]
        frontier_gen = kid_gen[keep]
        frontier_idx = offset + np.flatnonzero(keep)
        offset += kids

    all_times = np.concatenate(times)
    all_parent = np.concatenate(parents)
    all_gen = np.concatenate(gens)
    all_imm = np.zeros(all_times.size, dtype=bool)
    all_imm[:n_imm] = True
    all_marks = np.full(all_times.size, np.nan)
    all_marks[:n_imm] = imm_marks

    return _assemble(spec, t_end, all_times, all_marks, all_imm, all_parent, all_gen, n_imm, imm_times, imm_marks)


def _assemble(spec, t_end, all_times, all_marks, all_imm, all_parent, all_gen,
              n_imm, imm_times, imm_marks):
    inside = (all_times > 0) & (all_times <= t_end)
    keep_event = inside if spec.immigrants_included else (inside & ~all_imm)
    idx = np.flatnonzero(keep_event)
    order = np.lexsort((all_parent[idx], all_gen[idx], all_times[idx]))
    idx = idx[order]

    # map original point index -> position among kept events; dropped -> -1
    pos = np.full(all_times.size, -1, dtype=np.int64)
    pos[idx] = np.arange(idx.size)
    parent = np.where(all_parent[idx] >= 0, pos[all_parent[idx]], -1)

    marked = spec.marked
    events = EventSequence(
        t_end=t_end,
        times=all_times[idx],
        marks=all_marks[idx] if marked else None,
        is_immigrant=all_imm[idx],
        parent=parent,
        generation=all_gen[idx],
    )
    imm_inside = (imm_times > 0) & (imm_times <= t_end)
    immigrants = EventSequence(
        t_end=t_end,
        times=imm_times[imm_inside],
        marks=imm_marks[imm_inside] if marked else None,
        is_immigrant=np.ones(int(imm_inside.sum()), dtype=bool),
        parent=np.full(int(imm_inside.sum()), -1, dtype=np.int64),
        generation=np.zeros(int(imm_inside.sum()), dtype=np.int64),
    )
    return events, immigrants


def simulate_until_count(
    spec: ModelSpec,
    target_n: int,
    burn_in: float | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[EventSequence, EventSequence]:
    """Simulate a window sized so the event count lands within 10% of target_n.

    Deterministic given the RNG: the window starts at target_n/lam_bar and is
    regrown (x1.1 margin) on undershoot, at most 12 attempts; overshoot is
    truncated to exactly target_n events with the window ending at the last
    kept event.
    """
    from .moments import expected_intensity

    if target_n < 1:
        raise ValueError("target_n must be >= 1")
    if rng is None:
        rng = np.random.default_rng()
    lam = expected_intensity(spec)
    if lam <= 0:
        raise ValueError("spec has zero expected intensity; cannot hit a target count")
    t_end = target_n / lam
    for _ in range(12):
        events, immigrants = simulate_arma(spec, t_end, burn_in, rng)
        n = events.n
        if n >= target_n:
            return _truncate(events, immigrants, target_n)
        if n >= 0.9 * target_n:
            return events, immigrants
        t_end *= 1.1 * target_n / max(n, 1)
    raise RuntimeError(f"could not reach {target_n} events after 12 attempts (last n={n})")


def _truncate(events: EventSequence, immigrants: EventSequence, n: int):
    if events.n == n:
        return events, immigrants
    t_new = float(events.times[n - 1])
    ev = EventSequence(
        t_end=t_new,
        times=events.times[:n],
        marks=None if events.marks is None else events.marks[:n],
        is_immigrant=None if events.is_immigrant is None else events.is_immigrant[:n],
        parent=None if events.parent is None else events.parent[:n],
        generation=None if events.generation is None else events.generation[:n],
    )
    keep = immigrants.times <= t_new
    im = EventSequence(
        t_end=t_new,
        times=immigrants.times[keep],
        marks=None if immigrants.marks is None else immigrants.marks[keep],
        is_immigrant=None if immigrants.is_immigrant is None else immigrants.is_immigrant[keep],
        parent=None if immigrants.parent is None else immigrants.parent[keep],
        generation=None if immigrants.generation is None else immigrants.generation[keep],
    )
    return ev, im
