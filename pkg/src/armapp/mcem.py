"""Monte-Carlo EM: MH chain per iteration, K-sample averaged M step.

Each EM iteration runs the birth/death chain at the current parameters,
retains K immigrant configurations, computes responsibilities per sample,
and maximizes the K-averaged objective. Interevent weights for the theta
kernel pool across samples; phi weights average over the ensemble; the
immigration histogram and the mark mean use the MCMC-averaged immigrant
placements. Chains warm-start from the previous iteration's last state.

The true observed-data likelihood is not computed (its estimation is
prohibitively inefficient); the trace stores the Monte-Carlo objective.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .em import (
    EMConfig,
    EMTrace,
    Responsibilities,
    _check_interior,
    _fit_kernel_block,
    _param_vector,
    _rel_change,
    default_band_cutoff,
    em_fit_observed,
    q_single_sample,
    responsibilities,
)
from .kernels import ImmigrationIntensity, Kernel, MarkDistribution
from .mcmc import ChainDiagnostics, ImmigrantConfiguration, MHConfig, initial_state, run_chain
from .simulate import EventSequence, ModelSpec

__all__ = [
    "MCEMConfig",
    "q_objective",
    "mcem_fit",
    "mcem_fit_multistart",
    "estimate_immigration_profile",
    "cluster_flavored_init",
    "cascade_flavored_init",
]

VARIANTS = ("included", "excluded", "unmarked-included", "unmarked-excluded", "observed")


@dataclass
class MCEMConfig:
    """Desk-scale defaults; pass MHConfig(n_iter=300_000) for the full-scale chain."""

    variant: str = "included"
    em_iters: int = 100
    tol: float = 1e-3
    tol_patience: int = 3
    mh: MHConfig = field(default_factory=lambda: MHConfig(n_iter=60_000, burn_in=10_000, k=50))
    band_cutoff: float | None = None
    # trust region for the AR ratio: caps the per-iteration increase so a
    # single noisy E step cannot catapult eta into the eta -> 1 clamp (from
    # which the next iteration collapses it to the absorbing boundary 0)
    eta_step_max: float = 0.25
    eta_max: float = 0.95

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")


def _sample_views(events: EventSequence, sample: ImmigrantConfiguration, marked: bool):
    """(events_k, immigrants_k) sequences for one sampled configuration."""
    imm = sample.as_sequence(events, marked=True)  # marks always carried internally
    if sample.included:
        ev = EventSequence(t_end=events.t_end, times=events.times,
                           is_immigrant=sample.flags)
    else:
        ev = events
    return ev, imm


def q_objective(
    params: ModelSpec,
    events: EventSequence,
    samples: list[ImmigrantConfiguration],
    resps: list[Responsibilities],
) -> float:
    """K-averaged expected complete-data log-likelihood at ``params``."""
    if not samples:
        raise ValueError("need at least one sample")
    total = 0.0
    for sample, resp in zip(samples, resps):
        ev, imm = _sample_views(events, sample, params.marked)
        total += q_single_sample(params, ev, imm, resp)
    return total / len(samples)


def estimate_immigration_profile(
    samples: list[ImmigrantConfiguration],
    pieces: int,
    events: EventSequence,
) -> ImmigrationIntensity:
    """Histogram intensity with equal pieces from MCMC-averaged placements.

    Piece level = (average immigrant count in the piece across samples) /
    (piece length); pieces with no sampled immigrants get level 0.
    """
    if pieces < 1:
        raise ValueError("need at least one piece")
    t_end = events.t_end
    edges = np.linspace(0.0, t_end, pieces + 1)
    counts = np.zeros(pieces)
    for s in samples:
        counts += np.histogram(s.immigrant_times(events), bins=edges)[0]
    counts /= len(samples)
    return ImmigrationIntensity.histogram(counts / np.diff(edges), t_end)


def _aggregate_m_step(events, samples, resps, prev, cutoff, eta_step_max=1.0, eta_max=1.0 - 1e-9):
    """K-averaged M step; pools pair weights with 1/K scaling."""
    t_end = events.t_end
    k = len(samples)
    held: set[str] = set()
    marked = prev.marked

    sw_th = sw_th_dt = 0.0
    sw_ph = sw_ph_dt = 0.0
    th_m, th_y = [], []
    ph_m = []
    all_marks, all_times = [], []
    for sample, resp in zip(samples, resps):
        sw_th += float(resp.theta_vals.sum())
        sw_th_dt += float((resp.theta_vals * resp.theta_dts).sum())
        sw_ph += float(resp.phi_vals.sum())
        sw_ph_dt += float((resp.phi_vals * resp.phi_dts).sum())
        s = sample.immigrant_times(events)
        y = sample.immigrant_marks()
        th_m.append(np.minimum(t_end - s, cutoff))
        th_y.append(y)
        ph_m.append(np.minimum(t_end - resp.phi_trigger_times, cutoff))
        all_times.append(s)
        all_marks.append(y)
    sw_th /= k
    sw_th_dt /= k
    sw_ph /= k
    sw_ph_dt /= k

    if sw_th > 0:
        gamma, g_rate = _fit_kernel_block(
            sw_th, sw_th_dt,
            np.concatenate(th_m), np.concatenate(th_y) / k,
            prev.theta.mass, prev.theta.rate,
            pin_ratio=prev.theta.mass if marked else None,
        )
    else:
        gamma = prev.theta.mass if marked else 0.0
        g_rate = prev.theta.rate
        held.add("theta_rate")
    if sw_ph > 0:
        m_all = np.concatenate(ph_m)
        eta, f_rate = _fit_kernel_block(
            sw_ph, sw_ph_dt, m_all, np.full(m_all.size, 1.0 / k),
            prev.eta, prev.phi.rate,
        )
    else:
        eta, f_rate = 0.0, prev.phi.rate
        held.add("phi_rate")
    cap = min(prev.eta + eta_step_max, eta_max)
    if eta > cap:
        eta = cap
        held.add("eta_clamped")

    pooled_marks = np.concatenate(all_marks)
    if marked:
        if pooled_marks.size:
            marks = MarkDistribution(family=prev.marks.family,
                                     mean=float(pooled_marks.mean()))
        else:
            marks = prev.marks
            held.add("mark_mean")
    else:
        marks = prev.marks

    if prev.mu.is_constant:
        avg_nc = sum(s.size for s in all_times) / k
        mu = ImmigrationIntensity.constant(avg_nc / t_end)
    else:
        edges = np.concatenate(([0.0], prev.mu.breakpoints, [t_end]))
        counts = np.zeros(edges.size - 1)
        for s in all_times:
            counts += np.histogram(s, bins=edges)[0]
        mu = ImmigrationIntensity(counts / k / np.diff(edges), prev.mu.breakpoints)

    new = ModelSpec(mu=mu, theta=Kernel(mass=gamma, rate=g_rate),
                    phi=Kernel(mass=eta, rate=f_rate), marks=marks,
                    immigrants_included=prev.immigrants_included)
    return new, held


def cluster_flavored_init(events: EventSequence, marked=False, included=True,
                          mu_pieces=1, eta0=0.05) -> ModelSpec:
    """Few large clusters: the moment-balanced init with a small AR share."""
    from .em import default_init

    return default_init(events, marked=marked, immigrants_included=included,
                        mu_pieces=mu_pieces, eta0=eta0)


def cascade_flavored_init(events: EventSequence, marked=False, included=True,
                          mu_pieces=1) -> ModelSpec:
    """Self-excitation-heavy start: eta0 = 0.6, small cluster size."""
    if events.n < 2:
        raise ValueError("need at least 2 events to initialize")
    t_end = events.t_end
    rate = 1.0 / float(np.diff(events.times).mean())
    eta0, size0 = 0.6, 0.5
    level = (1.0 - eta0) * (events.n / t_end) / (1.0 + size0)
    mu = (ImmigrationIntensity.constant(level) if mu_pieces == 1
          else ImmigrationIntensity.histogram(np.full(mu_pieces, level), t_end))
    return ModelSpec(
        mu=mu,
        theta=Kernel(mass=1.0 if marked else size0, rate=rate),
        phi=Kernel(mass=eta0, rate=rate),
        marks=MarkDistribution(family="exponential", mean=size0) if marked
        else MarkDistribution(),
        immigrants_included=included,
    )


def mcem_fit_multistart(
    events: EventSequence,
    inits: list[ModelSpec],
    config: MCEMConfig | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[ModelSpec, EMTrace, int]:
    """Run one MCEM fit per start and keep the best-scoring mode.

    The EM surface has competing modes (many-small-immigrants vs few-large
    clusters vs cascade-dominant); which mode a fit lands in depends on the
    start. Candidates are scored by the branching-marginalized likelihood
    log p(t, c | beta) averaged over a fresh chain at each candidate's final
    parameters. (The exact marginal likelihood is out of reach by design;
    this score is likelihood minus labeling entropy, which on well-separated
    modes does not affect the ranking.) Returns (params, trace, winner index).
    """
    from .em import loglik_given_immigrants

    config = config or MCEMConfig()
    if rng is None:
        rng = np.random.default_rng()
    if not inits:
        raise ValueError("need at least one init")
    fits = []
    for init in inits:
        fits.append(mcem_fit(events, init, config, rng=rng))
    if len(fits) == 1:
        best = 0
    else:
        scores = []
        cutoff = config.band_cutoff
        if cutoff is None:
            cutoff = default_band_cutoff(inits[0])
        for params, _ in fits:
            samples, _ = run_chain(events, params, config.mh,
                                   rng=rng, band_cutoff=cutoff)
            lls = []
            for sample in samples:
                ev, imm = _sample_views(events, sample, params.marked)
                lls.append(loglik_given_immigrants(ev, imm, params, cutoff))
            scores.append(float(np.mean(lls)))
        best = int(np.argmax(scores))
    params, trace = fits[best]
    return params, trace, best


def mcem_fit(
    events: EventSequence,
    init: ModelSpec,
    config: MCEMConfig | None = None,
    rng: np.random.Generator | None = None,
    known_immigrants: EventSequence | None = None,
) -> tuple[ModelSpec, EMTrace]:
    """Full MCEM loop; ``variant="observed"`` degenerates to the exact EM.

    Stops when the relative parameter change stays below ``tol`` for
    ``tol_patience`` consecutive iterations, or after ``em_iters``. Aborts if
    a chain accepts no move over a whole EM iteration.
    """
    config = config or MCEMConfig()
    if rng is None:
        rng = np.random.default_rng()

    if config.variant == "observed":
        if known_immigrants is None:
            raise ValueError("observed variant needs known_immigrants")
        return em_fit_observed(
            events, known_immigrants, init,
            EMConfig(max_iter=config.em_iters, tol=config.tol,
                     band_cutoff=config.band_cutoff),
        )

    want_included = config.variant.endswith("included")
    if init.immigrants_included != want_included:
        raise ValueError(
            f"variant {config.variant!r} needs a ModelSpec with "
            f"immigrants_included={want_included}")
    if config.variant.startswith("unmarked") and init.marked:
        raise ValueError("unmarked variant needs constant marks")
    _check_interior(init)

    cutoff = config.band_cutoff
    if cutoff is None:
        cutoff = default_band_cutoff(init)

    params = init
    state = initial_state(events, init)
    trace = EMTrace(objective_kind="q_objective")
    ok_streak = 0
    for _ in range(config.em_iters):
        t0 = time.perf_counter()
        samples, diag = run_chain(events, params, config.mh, init_state=state,
                                  rng=rng, band_cutoff=cutoff)
        if diag.accept_birth == 0.0 and diag.accept_death == 0.0:
            raise RuntimeError(f"degenerate chain: no accepted moves ({diag})")
        state = samples[-1].copy()
        resps = []
        for sample in samples:
            ev, imm = _sample_views(events, sample, params.marked)
            resps.append(responsibilities(ev, imm, params, cutoff))
        new, held = _aggregate_m_step(events, samples, resps, params, cutoff,
                                      config.eta_step_max, config.eta_max)
        q_old = q_objective(params, events, samples, resps)
        q_new = q_objective(new, events, samples, resps)
        if not q_new >= q_old - 1e-8:
            held = set(held) | {"q_decreased"}
        trace.append(new, q_new, held, diag, wall=time.perf_counter() - t0)
        change = _rel_change(_param_vector(new), _param_vector(params))
        params = new
        if change < config.tol:
            ok_streak += 1
            if ok_streak >= config.tol_patience:
                break
        else:
            ok_streak = 0
    return params, trace
