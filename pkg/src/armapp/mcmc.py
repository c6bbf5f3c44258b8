"""Metropolis-Hastings birth/death sampler over latent immigrant configurations.

Targets the conditional law of the immigrants given the observed events. Two
variants: immigrants included in the sample (immigrant candidates are the
observed events themselves) and background immigration (immigrant times live
anywhere on (0, T]). Birth proposals pick an offspring event uniformly
(included) or a uniform time (excluded) and draw the mark from the current
mark distribution, which cancels in the Hastings ratio; deaths pick a current
immigrant uniformly. The death ratio is 1 / birth ratio of the reduced state.

``birth_ratio``/``mh_step`` are the plain-numpy reference implementation;
``run_chain`` drives a numba-compiled loop over flat arrays that maintains
the per-event triggering intensities incrementally. Products accumulate in
log space; interevent times beyond the band cutoff are dropped on both sides
of the ratio (same working model as the EM module).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .em import _pair_geometry, _row_sums, default_band_cutoff
from .kernels import immigration_value, sample_mark
from .simulate import EventSequence, ModelSpec

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

    def njit(*a, **k):
        def wrap(f):
            return f
        return wrap(a[0]) if a and callable(a[0]) else wrap


__all__ = [
    "ImmigrantConfiguration",
    "MHConfig",
    "ChainDiagnostics",
    "birth_ratio",
    "mh_step",
    "run_chain",
    "initial_state",
]


@dataclass
class ImmigrantConfiguration:
    """One Markov-chain state: the immigrant labeling with marks.

    Included variant: ``flags`` marks which events are immigrants and
    ``marks`` is aligned with the events (meaningful where flagged).
    Excluded variant: ``times``/``marks`` list the latent immigrants.
    """

    included: bool
    flags: np.ndarray | None = None
    times: np.ndarray | None = None
    marks: np.ndarray | None = None

    def n_c(self) -> int:
        return int(self.flags.sum()) if self.included else self.times.size

    def immigrant_times(self, events: EventSequence) -> np.ndarray:
        return events.times[self.flags] if self.included else self.times

    def immigrant_marks(self) -> np.ndarray:
        return self.marks[self.flags] if self.included else self.marks

    def copy(self) -> "ImmigrantConfiguration":
        return ImmigrantConfiguration(
            included=self.included,
            flags=None if self.flags is None else self.flags.copy(),
            times=None if self.times is None else self.times.copy(),
            marks=None if self.marks is None else self.marks.copy(),
        )

    def as_sequence(self, events: EventSequence, marked: bool) -> EventSequence:
        """View as an EventSequence for the responsibility/likelihood machinery."""
        s = self.immigrant_times(events)
        y = self.immigrant_marks()
        order = np.argsort(s, kind="stable")
        return EventSequence(
            t_end=events.t_end,
            times=s[order],
            marks=y[order] if marked else None,
        )


@dataclass
class MHConfig:
    """Chain length, burn-in, and the number of retained samples."""

    n_iter: int = 300_000
    burn_in: int = 0
    k: int = 50

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("need k >= 1 retained samples")
        if self.n_iter <= self.burn_in:
            raise ValueError("n_iter must exceed burn_in")
        if (self.n_iter - self.burn_in) < self.k:
            raise ValueError("fewer post-burn-in iterations than requested samples")


@dataclass
class ChainDiagnostics:
    n_iter: int
    burn_in: int
    stride: int
    accept_birth: float
    accept_death: float
    n_c_mean: float
    n_c_min: int
    n_c_max: int
    blocks: list = field(default_factory=list)

    def block_rows(self):
        """CSV rows: iter_block,accept_birth,accept_death,n_c_mean."""
        for row in self.blocks:
            yield dict(zip(("iter_block", "accept_birth", "accept_death", "n_c_mean"), row))


def initial_state(events: EventSequence, params: ModelSpec) -> ImmigrantConfiguration:
    """Admissible starting configuration.

    Included: every event flagged immigrant (no offspring, density positive).
    Excluded: one immigrant just before each event (half the gap to its
    predecessor), so every event has positive triggering intensity under any
    band cutoff.
    """
    n = events.n
    mean = params.marks.mean
    if params.immigrants_included:
        return ImmigrantConfiguration(
            included=True,
            flags=np.ones(n, dtype=bool),
            marks=np.full(n, mean),
        )
    t = events.times
    gaps = np.diff(np.concatenate(([0.0], t)))
    times = t - 0.5 * gaps
    return ImmigrantConfiguration(
        included=False,
        times=times,
        marks=np.full(n, mean),
    )


def _intensity_at_events(state, events, params, cutoff):
    """Triggering intensity D_i at every event under the given state."""
    t = events.times
    s = state.immigrant_times(events)
    y = state.immigrant_marks()
    order = np.argsort(s, kind="stable")
    s, y = s[order], y[order]
    th_indptr, th_cols, th_dts = _pair_geometry(t, s, cutoff)
    th0 = params.theta.mass * params.theta.rate
    theta_part = _row_sums(th_indptr, y[th_cols] * th0 * np.exp(-params.theta.rate * th_dts))
    if state.included:
        phi_triggers = t
    else:
        phi_triggers = np.sort(np.concatenate([t, s]))
    ph_indptr, _, ph_dts = _pair_geometry(t, phi_triggers, cutoff)
    ph0 = params.phi.mass * params.phi.rate
    phi_part = _row_sums(ph_indptr, ph0 * np.exp(-params.phi.rate * ph_dts))
    return theta_part + phi_part


def _mass_band(mass, rate, x, cutoff):
    return mass * -np.expm1(-rate * min(max(x, 0.0), cutoff))


def birth_ratio(
    state: ImmigrantConfiguration,
    candidate: tuple[float, float],
    events: EventSequence,
    params: ModelSpec,
    band_cutoff: float | None = None,
) -> float:
    """Metropolis-Hastings birth ratio for adding ``candidate`` to ``state``.

    Reference implementation (plain numpy, full recomputation). The death
    ratio of a state containing the candidate is its reciprocal evaluated at
    the reduced state.
    """
    if band_cutoff is None:
        band_cutoff = default_band_cutoff(params)
    s_star, y_star = candidate
    t = events.times
    n = events.n
    n_c = state.n_c()
    with np.errstate(divide="ignore"):
        d = _intensity_at_events(state, events, params, band_cutoff)
        th0 = params.theta.mass * params.theta.rate
        ph0 = params.phi.mass * params.phi.rate

        if state.included:
            hit = np.flatnonzero((t == s_star) & ~state.flags)
            if hit.size == 0:
                raise ValueError("included-variant candidate must be a current offspring event")
            b = int(hit[0])
            logr = np.log(n - n_c) - np.log(n_c + 1) + np.log(immigration_value(params.mu, s_star))
            logr -= y_star * _mass_band(params.theta.mass, params.theta.rate, events.t_end - s_star, band_cutoff)
            dt = t - s_star
            in_band = (dt > 0) & (dt <= band_cutoff) & ~state.flags
            w = y_star * th0 * np.exp(-params.theta.rate * dt[in_band])
            logr += float(np.log1p(w / d[in_band]).sum())
            logr -= np.log(d[b])
        else:
            if not 0 < s_star <= events.t_end:
                raise ValueError("excluded-variant candidate time must lie in (0, T]")
            logr = np.log(events.t_end) - np.log(n_c + 1) + np.log(immigration_value(params.mu, s_star))
            logr -= y_star * _mass_band(params.theta.mass, params.theta.rate, events.t_end - s_star, band_cutoff)
            logr -= _mass_band(params.phi.mass, params.phi.rate, events.t_end - s_star, band_cutoff)
            dt = t - s_star
            in_band = (dt > 0) & (dt <= band_cutoff)
            w = y_star * th0 * np.exp(-params.theta.rate * dt[in_band]) \
                + ph0 * np.exp(-params.phi.rate * dt[in_band])
            logr += float(np.log1p(w / d[in_band]).sum())
    if not np.isfinite(logr):
        if np.isnan(logr):
            raise ValueError("non-finite intermediate in birth ratio (kernel misconfiguration?)")
        return float(np.inf) if logr > 0 else 0.0
    return float(np.exp(logr))


def _remove_from_state(state, idx_or_event):
    new = state.copy()
    if state.included:
        new.flags[idx_or_event] = False
    else:
        new.times = np.delete(new.times, idx_or_event)
        new.marks = np.delete(new.marks, idx_or_event)
    return new


def mh_step(
    state: ImmigrantConfiguration,
    events: EventSequence,
    params: ModelSpec,
    rng: np.random.Generator,
    band_cutoff: float | None = None,
) -> ImmigrantConfiguration:
    """One birth/death step; impossible or rejected proposals return the state."""
    n_c = state.n_c()
    if rng.random() < 0.5:  # birth
        if state.included:
            offspring = np.flatnonzero(~state.flags)
            if offspring.size == 0:
                return state
            b = int(offspring[rng.integers(offspring.size)])
            s_star = float(events.times[b])
        else:
            s_star = float(events.t_end * rng.random())
            b = None
        y_star = sample_mark(params.marks, rng)
        r = birth_ratio(state, (s_star, y_star), events, params, band_cutoff)
        if rng.random() < min(1.0, r):
            new = state.copy()
            if state.included:
                new.flags[b] = True
                new.marks[b] = y_star
            else:
                pos = int(np.searchsorted(new.times, s_star))
                new.times = np.insert(new.times, pos, s_star)
                new.marks = np.insert(new.marks, pos, y_star)
            return new
        return state
    # death
    if n_c == 0:
        return state
    j = int(rng.integers(n_c))
    if state.included:
        idx = int(np.flatnonzero(state.flags)[j])
        cand = (float(events.times[idx]), float(state.marks[idx]))
        reduced = _remove_from_state(state, idx)
    else:
        cand = (float(state.times[j]), float(state.marks[j]))
        reduced = _remove_from_state(state, j)
    r_b = birth_ratio(reduced, cand, events, params, band_cutoff)
    r_d = 0.0 if r_b == np.inf else (np.inf if r_b == 0.0 else 1.0 / r_b)
    if rng.random() < min(1.0, r_d):
        return reduced
    return state


# ---------------------------------------------------------------------------
# fast chain: numba kernels over flat arrays with incremental intensities


@njit(cache=True)
def _chain_included_core(
    t, p_base, dens_ptr, dens_idx, dens_val, theta_band, log_mu, flags, marks,
    mark_exp, mark_mean, n_iter, burn_in, k_out, seed, flags_out, marks_out,
    diag_out, n_blocks,
):
    np.random.seed(seed)
    n = t.size
    a = np.zeros(n)
    imm_list = np.empty(n, dtype=np.int64)
    imm_pos = np.full(n, -1, dtype=np.int64)
    off_list = np.empty(n, dtype=np.int64)
    off_pos = np.full(n, -1, dtype=np.int64)
    n_c = 0
    n_o = 0
    for i in range(n):
        if flags[i]:
            imm_list[n_c] = i
            imm_pos[i] = n_c
            n_c += 1
            for l in range(dens_ptr[i], dens_ptr[i + 1]):
                a[dens_idx[l]] += marks[i] * dens_val[l]
        else:
            off_list[n_o] = i
            off_pos[i] = n_o
            n_o += 1

    stride = (n_iter - burn_in) // k_out
    block_len = max(n_iter // n_blocks, 1)
    out_idx = 0
    for it in range(1, n_iter + 1):
        blk = min((it - 1) // block_len, n_blocks - 1)
        if np.random.random() < 0.5:  # birth
            diag_out[blk, 0] += 1.0
            if n_o > 0:
                b = off_list[int(np.random.random() * n_o)]
                if mark_exp:
                    y_star = np.random.exponential(mark_mean)
                else:
                    y_star = 1.0
                logr = (np.log(n_o) - np.log(n_c + 1.0) + log_mu[b]
                        - y_star * theta_band[b] - np.log(a[b] + p_base[b]))
                for l in range(dens_ptr[b], dens_ptr[b + 1]):
                    i = dens_idx[l]
                    if off_pos[i] >= 0:
                        logr += np.log1p(y_star * dens_val[l] / (a[i] + p_base[i]))
                if np.log(np.random.random()) < logr:
                    diag_out[blk, 1] += 1.0
                    flags[b] = True
                    marks[b] = y_star
                    for l in range(dens_ptr[b], dens_ptr[b + 1]):
                        a[dens_idx[l]] += y_star * dens_val[l]
                    last = off_list[n_o - 1]
                    off_list[off_pos[b]] = last
                    off_pos[last] = off_pos[b]
                    off_pos[b] = -1
                    n_o -= 1
                    imm_list[n_c] = b
                    imm_pos[b] = n_c
                    n_c += 1
        else:  # death
            diag_out[blk, 2] += 1.0
            if n_c > 0:
                b = imm_list[int(np.random.random() * n_c)]
                y_b = marks[b]
                logr = -(np.log(n_o + 1.0) - np.log(n_c) + log_mu[b]
                         - y_b * theta_band[b] - np.log(a[b] + p_base[b]))
                for l in range(dens_ptr[b], dens_ptr[b + 1]):
                    i = dens_idx[l]
                    if off_pos[i] >= 0:
                        w = y_b * dens_val[l]
                        rest = a[i] + p_base[i] - w
                        if rest <= 0.0:
                            logr = -np.inf
                            break
                        logr -= np.log1p(w / rest)
                if np.log(np.random.random()) < logr:
                    diag_out[blk, 3] += 1.0
                    flags[b] = False
                    for l in range(dens_ptr[b], dens_ptr[b + 1]):
                        i = dens_idx[l]
                        a[i] -= y_b * dens_val[l]
                        if a[i] < 0.0:
                            a[i] = 0.0
                    last = imm_list[n_c - 1]
                    imm_list[imm_pos[b]] = last
                    imm_pos[last] = imm_pos[b]
                    imm_pos[b] = -1
                    n_c -= 1
                    off_list[n_o] = b
                    off_pos[b] = n_o
                    n_o += 1
        diag_out[blk, 4] += n_c
        diag_out[blk, 5] += 1.0
        if it > burn_in and (it - burn_in) % stride == 0 and out_idx < k_out:
            for i in range(n):
                flags_out[out_idx, i] = flags[i]
                marks_out[out_idx, i] = marks[i]
            out_idx += 1
    return out_idx


@njit(cache=True)
def _chain_excluded_core(
    t, p_base, th0, th1, ph0, ph1, gamma, eta, cutoff, t_end,
    mu_levels, mu_breaks, mark_exp, mark_mean, imm_times, imm_marks, n_c0,
    n_iter, burn_in, k_out, seed, cap, times_out, marks_out, counts_out,
    diag_out, n_blocks,
):
    np.random.seed(seed)
    n = t.size
    s_arr = np.empty(cap)
    y_arr = np.empty(cap)
    n_c = n_c0
    for j in range(n_c0):
        s_arr[j] = imm_times[j]
        y_arr[j] = imm_marks[j]
    a = np.zeros(n)
    for j in range(n_c):
        lo = np.searchsorted(t, s_arr[j])
        for i in range(lo, n):
            dt = t[i] - s_arr[j]
            if dt > cutoff:
                break
            a[i] += (y_arr[j] * th0 * np.exp(-th1 * dt) + ph0 * np.exp(-ph1 * dt))

    stride = (n_iter - burn_in) // k_out
    block_len = max(n_iter // n_blocks, 1)
    out_idx = 0
    for it in range(1, n_iter + 1):
        blk = min((it - 1) // block_len, n_blocks - 1)
        if np.random.random() < 0.5:  # birth
            diag_out[blk, 0] += 1.0
            if n_c < cap:
                s_star = t_end * np.random.random()
                if mark_exp:
                    y_star = np.random.exponential(mark_mean)
                else:
                    y_star = 1.0
                idx = np.searchsorted(mu_breaks, s_star)
                level = mu_levels[idx]
                if level > 0.0:
                    rem = t_end - s_star
                    if rem > cutoff:
                        rem = cutoff
                    logr = (np.log(t_end) - np.log(n_c + 1.0) + np.log(level)
                            - y_star * gamma * (1.0 - np.exp(-th1 * rem))
                            - eta * (1.0 - np.exp(-ph1 * rem)))
                    lo = np.searchsorted(t, s_star)
                    for i in range(lo, n):
                        dt = t[i] - s_star
                        if dt > cutoff:
                            break
                        w = y_star * th0 * np.exp(-th1 * dt) + ph0 * np.exp(-ph1 * dt)
                        logr += np.log1p(w / (a[i] + p_base[i]))
                    if np.log(np.random.random()) < logr:
                        diag_out[blk, 1] += 1.0
                        s_arr[n_c] = s_star
                        y_arr[n_c] = y_star
                        n_c += 1
                        for i in range(lo, n):
                            dt = t[i] - s_star
                            if dt > cutoff:
                                break
                            a[i] += (y_star * th0 * np.exp(-th1 * dt)
                                     + ph0 * np.exp(-ph1 * dt))
            else:
                return -1  # capacity overflow; caller retries with larger cap
        else:  # death
            diag_out[blk, 2] += 1.0
            if n_c > 0:
                j = int(np.random.random() * n_c)
                s_j = s_arr[j]
                y_j = y_arr[j]
                idx = np.searchsorted(mu_breaks, s_j)
                level = mu_levels[idx]
                rem = t_end - s_j
                if rem > cutoff:
                    rem = cutoff
                logr = -(np.log(t_end) - np.log(1.0 * n_c) + np.log(level)
                         - y_j * gamma * (1.0 - np.exp(-th1 * rem))
                         - eta * (1.0 - np.exp(-ph1 * rem)))
                lo = np.searchsorted(t, s_j)
                for i in range(lo, n):
                    dt = t[i] - s_j
                    if dt > cutoff:
                        break
                    w = y_j * th0 * np.exp(-th1 * dt) + ph0 * np.exp(-ph1 * dt)
                    rest = a[i] + p_base[i] - w
                    if rest <= 0.0:
                        logr = -np.inf
                        break
                    logr -= np.log1p(w / rest)
                if np.log(np.random.random()) < logr:
                    diag_out[blk, 3] += 1.0
                    for i in range(lo, n):
                        dt = t[i] - s_j
                        if dt > cutoff:
                            break
                        a[i] -= (y_j * th0 * np.exp(-th1 * dt)
                                 + ph0 * np.exp(-ph1 * dt))
                        if a[i] < 0.0:
                            a[i] = 0.0
                    s_arr[j] = s_arr[n_c - 1]
                    y_arr[j] = y_arr[n_c - 1]
                    n_c -= 1
        diag_out[blk, 4] += n_c
        diag_out[blk, 5] += 1.0
        if it > burn_in and (it - burn_in) % stride == 0 and out_idx < k_out:
            counts_out[out_idx] = n_c
            for j in range(n_c):
                times_out[out_idx, j] = s_arr[j]
                marks_out[out_idx, j] = y_arr[j]
            out_idx += 1
    return out_idx


def _phi_at_events_from_events(events, params, cutoff):
    t = events.times
    indptr, _, dts = _pair_geometry(t, t, cutoff)
    ph0 = params.phi.mass * params.phi.rate
    return _row_sums(indptr, ph0 * np.exp(-params.phi.rate * dts))


def _theta_density_csr(events, params, cutoff):
    """For each event b: in-band later events and theta density values."""
    t = events.times
    lo = np.searchsorted(t, t, side="right")
    hi = np.searchsorted(t, t + cutoff, side="right")
    counts = hi - lo
    indptr = np.concatenate(([0], np.cumsum(counts)))
    idx = np.empty(int(indptr[-1]), dtype=np.int64)
    for b in range(t.size):
        idx[indptr[b]:indptr[b + 1]] = np.arange(lo[b], hi[b])
    dts = t[idx] - np.repeat(t, counts)
    th0 = params.theta.mass * params.theta.rate
    vals = th0 * np.exp(-params.theta.rate * dts)
    return indptr, idx, vals


def _collect_diag(diag, config, stride):
    tot_b, acc_b = diag[:, 0].sum(), diag[:, 1].sum()
    tot_d, acc_d = diag[:, 2].sum(), diag[:, 3].sum()
    ncs = diag[:, 4]
    iters = diag[:, 5]
    blocks = []
    for k in range(diag.shape[0]):
        if iters[k] > 0:
            blocks.append((
                k,
                diag[k, 1] / max(diag[k, 0], 1.0),
                diag[k, 3] / max(diag[k, 2], 1.0),
                ncs[k] / iters[k],
            ))
    return ChainDiagnostics(
        n_iter=config.n_iter,
        burn_in=config.burn_in,
        stride=stride,
        accept_birth=float(acc_b / max(tot_b, 1.0)),
        accept_death=float(acc_d / max(tot_d, 1.0)),
        n_c_mean=float(ncs.sum() / iters.sum()),
        n_c_min=0,
        n_c_max=0,
        blocks=blocks,
    )


def run_chain(
    events: EventSequence,
    params: ModelSpec,
    config: MHConfig | None = None,
    init_state: ImmigrantConfiguration | None = None,
    rng: np.random.Generator | None = None,
    band_cutoff: float | None = None,
    use_numba: bool = True,
) -> tuple[list[ImmigrantConfiguration], ChainDiagnostics]:
    """Run the chain and return K states at equal strides after burn-in."""
    config = config or MHConfig()
    if rng is None:
        rng = np.random.default_rng()
    if band_cutoff is None:
        band_cutoff = default_band_cutoff(params)
    if init_state is None:
        init_state = initial_state(events, params)
    if init_state.included != params.immigrants_included:
        raise ValueError("state variant does not match params.immigrants_included")
    stride = (config.n_iter - config.burn_in) // config.k
    if not (use_numba and HAVE_NUMBA):
        return _run_chain_python(events, params, config, init_state, rng, band_cutoff, stride)

    n_blocks = 20
    diag = np.zeros((n_blocks, 6))
    seed = int(rng.integers(0, 2**31 - 1))
    t = events.times
    mark_exp = not params.marks.is_constant
    if params.immigrants_included:
        p_base = _phi_at_events_from_events(events, params, band_cutoff)
        dens_ptr, dens_idx, dens_val = _theta_density_csr(events, params, band_cutoff)
        theta_band = params.theta.mass * -np.expm1(
            -params.theta.rate * np.minimum(events.t_end - t, band_cutoff))
        with np.errstate(divide="ignore"):
            log_mu = np.log(immigration_value(params.mu, t))
        flags = init_state.flags.copy()
        marks = init_state.marks.copy()
        flags_out = np.zeros((config.k, t.size), dtype=np.bool_)
        marks_out = np.zeros((config.k, t.size))
        got = _chain_included_core(
            t, p_base, dens_ptr, dens_idx, dens_val, theta_band, log_mu,
            flags, marks, mark_exp, params.marks.mean,
            config.n_iter, config.burn_in, config.k, seed,
            flags_out, marks_out, diag, n_blocks,
        )
        assert got == config.k
        samples = [
            ImmigrantConfiguration(included=True, flags=flags_out[k], marks=marks_out[k])
            for k in range(config.k)
        ]
    else:
        p_base = _phi_at_events_from_events(events, params, band_cutoff)
        cap = max(4 * events.n, 256)
        order = np.argsort(init_state.times, kind="stable")
        imm_times = init_state.times[order].astype(float)
        imm_marks = init_state.marks[order].astype(float)
        while True:
            times_out = np.zeros((config.k, cap))
            marks_out = np.zeros((config.k, cap))
            counts_out = np.zeros(config.k, dtype=np.int64)
            diag[:] = 0.0
            got = _chain_excluded_core(
                t, p_base,
                params.theta.mass * params.theta.rate, params.theta.rate,
                params.phi.mass * params.phi.rate, params.phi.rate,
                params.theta.mass, params.phi.mass, band_cutoff, events.t_end,
                params.mu.levels, params.mu.breakpoints,
                mark_exp, params.marks.mean,
                imm_times, imm_marks, imm_times.size,
                config.n_iter, config.burn_in, config.k, seed, cap,
                times_out, marks_out, counts_out, diag, n_blocks,
            )
            if got == -1:
                cap *= 2
                continue
            assert got == config.k
            break
        samples = []
        for k in range(config.k):
            m = counts_out[k]
            order = np.argsort(times_out[k, :m], kind="stable")
            samples.append(ImmigrantConfiguration(
                included=False,
                times=times_out[k, :m][order],
                marks=marks_out[k, :m][order],
            ))
    diagnostics = _collect_diag(diag, config, stride)
    ncs = [s.n_c() for s in samples]
    diagnostics.n_c_min = int(min(ncs))
    diagnostics.n_c_max = int(max(ncs))
    return samples, diagnostics


def _run_chain_python(events, params, config, init_state, rng, band_cutoff, stride):
    state = init_state.copy()
    samples = []
    n_acc_b = n_prop_b = n_acc_d = n_prop_d = 0
    nc_sum = 0
    for it in range(1, config.n_iter + 1):
        before = state.n_c()
        state = mh_step(state, events, params, rng, band_cutoff)
        after = state.n_c()
        if after > before:
            n_acc_b += 1
        elif after < before:
            n_acc_d += 1
        nc_sum += after
        if it > config.burn_in and (it - config.burn_in) % stride == 0 and len(samples) < config.k:
            samples.append(state.copy())
    n_prop = config.n_iter / 2.0
    diagnostics = ChainDiagnostics(
        n_iter=config.n_iter,
        burn_in=config.burn_in,
        stride=stride,
        accept_birth=n_acc_b / n_prop,
        accept_death=n_acc_d / n_prop,
        n_c_mean=nc_sum / config.n_iter,
        n_c_min=int(min(s.n_c() for s in samples)),
        n_c_max=int(max(s.n_c() for s in samples)),
    )
    return samples, diagnostics
