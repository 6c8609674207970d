"""Exact trajectory simulation of the hybrid process, with and without delay.

Both simulators advance mode by mode: inside a mode the counts are frozen and
the field follows its analytic flow, so no numerical ODE stepping happens
anywhere. Each iteration draws a candidate exit time by inverting the mode's
cumulative hazard at ln(1/r1) and picks the channel with a second uniform
variate evaluated at the jump instant (only the stimulation rate moved).

The delayed variant treats effector recruitment as initiation followed by a
delayed completion: when channel 6 wins, nothing changes except that a
completion is scheduled delay days later and pushed on a FIFO queue of
absolute times. A candidate exit is committed only if it precedes the queue
head; otherwise the candidate is discarded, the clock advances exactly to the
head, one effector arrives, and sampling restarts from the new mode (fresh
variates, no reuse). With a constant delay the queue is nondecreasing, which
the kernel asserts on every push.

Tumor count 0 is quasi-absorbing (no channel can recreate tumor cells); runs
continue past eradication until t_stop, or stop early at the true absorbing
state where every channel is silent and no completion is pending. The first
time the tumor count hits zero is recorded exactly.

The inner loop is compiled (numba); trajectories near the reference
parameterization run ~1e7..1e8 events, so the per-event budget matters more
than elegance here. Counts are int64 throughout; rates are doubles. A
simulation is a pure function of (initial state, horizon, parameters, seed):
the same RngStream yields the same trajectory byte for byte.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .il2 import _invert_hazard, mode_equilibrium
from .model import HybridState, ModelParams

__all__ = [
    "DEFAULT_EVENT_CAP",
    "RngStream",
    "derive_stream",
    "Trajectory",
    "GridRun",
    "select_channel",
    "simulate_nodelay",
    "simulate_delayed",
    "simulate_grid",
    "first_eradication_time",
    "thin_to_grid",
]

DEFAULT_EVENT_CAP = 2_000_000_000

_REASONS = ("t_stop", "absorbed", "event_cap")

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _mix64(z: int) -> int:
    # splitmix64 output function
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


@dataclass(frozen=True)
class RngStream:
    """Value object naming one reproducible variate stream (PCG64 under the hood)."""

    seed: int

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.seed))


def derive_stream(base_seed: int, run_index: int) -> RngStream:
    """Stream for run number run_index: splitmix64 walk from the base seed.

    Decorrelates per-run streams without a central generator, so runs can be
    produced in any order (or in parallel) with identical results.
    """
    if run_index < 0:
        raise ValueError(f"run_index must be nonnegative, got {run_index!r}")
    return RngStream(_mix64((base_seed + _GOLDEN * (run_index + 1)) & _MASK64))


def _as_stream(rng) -> RngStream:
    if isinstance(rng, RngStream):
        return rng
    if isinstance(rng, (int, np.integer)):
        return RngStream(int(rng))
    raise TypeError(f"rng must be an RngStream or an integer seed, got {type(rng).__name__}")


@dataclass
class Trajectory:
    """Jump-resolved record of one run: state after every count change.

    The first row is the initial state; times are strictly increasing. Between
    consecutive rows exactly one count changed by one. The continuous field
    column holds its value at each jump instant.
    """

    times: np.ndarray
    tumor: np.ndarray
    effectors: np.ndarray
    il2: np.ndarray
    t0: float
    t_stop: float
    t_end: float
    reason: str
    n_events: int


@dataclass
class GridRun:
    """One run sampled on a uniform time grid (last value at or before each point).

    Counts are the piecewise-constant state; the field column is its exact
    flow value at the grid time. eradication_time is the exact first hitting
    time of tumor count zero (not grid-rounded), or None. For event-capped
    runs only times <= t_end carry simulated state; later points extrapolate
    the last mode.
    """

    times: np.ndarray
    tumor: np.ndarray
    effectors: np.ndarray
    il2: np.ndarray
    eradication_time: float | None
    reason: str
    n_events: int
    t_end: float


@njit(cache=True, nogil=True)
def _select_walk(rates, threshold):
    # Smallest index with cumulative rate >= threshold and a positive rate;
    # -1 when every rate is zero.
    cum = 0.0
    last_positive = -1
    for i in range(rates.shape[0]):
        a = rates[i]
        cum += a
        if a > 0.0:
            last_positive = i
            if cum >= threshold:
                return i
    return last_positive


def select_channel(rates, r2: float) -> int:
    """Channel index (1-based) for uniform variate r2 in [0, 1).

    Implements inverse transform sampling on the cumulative rates; boundary
    ties never land on a zero-rate channel.
    """
    arr = np.ascontiguousarray(rates, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("rates must be a nonempty 1-D array")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0):
        raise ValueError("rates must be finite and nonnegative")
    if not 0.0 <= r2 < 1.0:
        raise ValueError(f"r2 must lie in [0, 1), got {r2!r}")
    total = 0.0
    for v in arr:
        total += v
    if total <= 0.0:
        raise ValueError("total rate is zero; no channel can fire")
    idx = _select_walk(arr, r2 * total)
    return int(idx) + 1


@njit(cache=True, nogil=True)
def _simulate(tumor0, eff0, il2_0, t0, t_stop, p, use_queue, gen, event_cap,
              n_grid, grid_dt, record_jumps):
    growth = p[0]
    crowding = p[1]
    volume = p[2]
    kill = p[3]
    kill_half = p[4]
    smax = p[5]
    stim_half = p[6]
    death = p[7]
    recruit = p[8]
    prod = p[9]
    prod_half = p[10]
    decay = p[11]
    delay = p[12]

    tumor = tumor0
    eff = eff0
    il2 = il2_0
    t = t0

    # FIFO of absolute completion times
    qcap = 256
    queue = np.empty(qcap)
    q_head = 0
    q_tail = 0

    rcap = 1024 if record_jumps else 1
    rec_t = np.empty(rcap)
    rec_T = np.empty(rcap, np.int64)
    rec_E = np.empty(rcap, np.int64)
    rec_I = np.empty(rcap)
    n_rec = 0
    if record_jumps:
        rec_t[0] = t
        rec_T[0] = tumor
        rec_E[0] = eff
        rec_I[0] = il2
        n_rec = 1

    grid_T = np.zeros(n_grid, np.int64)
    grid_E = np.zeros(n_grid, np.int64)
    grid_I = np.zeros(n_grid)
    next_g = 0

    erad = t0 if tumor == 0 else np.inf
    n_events = 0
    reason = 0  # t_stop unless decided otherwise

    rates6 = np.empty(6)

    while True:
        f_tumor = float(tumor)
        f_eff = float(eff)
        a1 = growth * f_tumor
        a2 = growth * crowding * (f_tumor / volume) * (f_tumor - 1.0) if tumor > 1 else 0.0
        a3 = kill * f_tumor * f_eff / (kill_half * volume + f_tumor)
        a5 = death * f_eff
        a6 = recruit * f_tumor
        const_rate = a1 + a2 + a3 + a5 + a6
        equil = (prod * f_tumor * f_eff / (prod_half * volume * volume + f_tumor * volume)) / decay
        smax_ne = smax * f_eff

        r1 = 1.0 - gen.random()  # (0, 1]
        target = -np.log(r1)
        tau = _invert_hazard(target, const_rate, smax_ne, equil, il2, stim_half, decay)

        head = queue[q_head] if q_head < q_tail else np.inf
        t_next = t + tau

        if tau == np.inf and head == np.inf:
            reason = 1  # absorbed: nothing can ever fire again
            break

        if t_next < head:
            # candidate exit committed as a stochastic jump
            if t_next >= t_stop:
                break
            assert t_next < head
            s = np.exp(-decay * tau)
            il2_next = il2 * s + equil * (1.0 - s)
            a4 = smax_ne * il2_next / (stim_half + il2_next)
            rates6[0] = a1
            rates6[1] = a2
            rates6[2] = a3
            rates6[3] = a4
            rates6[4] = a5
            rates6[5] = a6
            total = 0.0
            for i in range(6):
                total += rates6[i]
            r2 = gen.random()
            j = _select_walk(rates6, r2 * total) + 1
            assert j >= 1

            if n_events >= event_cap:
                reason = 2
                break
            n_events += 1

            while next_g < n_grid:
                tg = t0 + next_g * grid_dt
                if tg >= t_next:
                    break
                grid_T[next_g] = tumor
                grid_E[next_g] = eff
                sg = np.exp(-decay * (tg - t))
                grid_I[next_g] = il2 * sg + equil * (1.0 - sg)
                next_g += 1

            t = t_next
            il2 = il2_next
            changed = True
            if j == 1:
                tumor += 1
            elif j == 2 or j == 3:
                tumor -= 1
            elif j == 4:
                eff += 1
            elif j == 5:
                eff -= 1
            else:
                if use_queue:
                    # purely delayed: schedule the completion, change nothing now
                    tc = t + delay
                    if q_tail == qcap:
                        live = q_tail - q_head
                        if q_head > 0:
                            for k in range(live):
                                queue[k] = queue[q_head + k]
                            q_head = 0
                            q_tail = live
                        else:
                            grown = np.empty(2 * qcap)
                            grown[:qcap] = queue
                            queue = grown
                            qcap *= 2
                    if q_tail > q_head:
                        assert tc >= queue[q_tail - 1]
                    queue[q_tail] = tc
                    q_tail += 1
                    changed = False
                else:
                    eff += 1
            assert tumor >= 0 and eff >= 0 and il2 >= 0.0
            if changed:
                if tumor == 0 and erad == np.inf:
                    erad = t
                if record_jumps:
                    if n_rec == rcap:
                        rcap2 = 2 * rcap
                        g_t = np.empty(rcap2)
                        g_T = np.empty(rcap2, np.int64)
                        g_E = np.empty(rcap2, np.int64)
                        g_I = np.empty(rcap2)
                        g_t[:rcap] = rec_t
                        g_T[:rcap] = rec_T
                        g_E[:rcap] = rec_E
                        g_I[:rcap] = rec_I
                        rec_t = g_t
                        rec_T = g_T
                        rec_E = g_E
                        rec_I = g_I
                        rcap = rcap2
                    rec_t[n_rec] = t
                    rec_T[n_rec] = tumor
                    rec_E[n_rec] = eff
                    rec_I[n_rec] = il2
                    n_rec += 1
        else:
            # queue head preempts the candidate: discard it, deliver the effector
            if head >= t_stop:
                break
            if n_events >= event_cap:
                reason = 2
                break
            n_events += 1

            while next_g < n_grid:
                tg = t0 + next_g * grid_dt
                if tg >= head:
                    break
                grid_T[next_g] = tumor
                grid_E[next_g] = eff
                sg = np.exp(-decay * (tg - t))
                grid_I[next_g] = il2 * sg + equil * (1.0 - sg)
                next_g += 1

            sh = np.exp(-decay * (head - t))
            il2 = il2 * sh + equil * (1.0 - sh)
            t = head
            q_head += 1
            eff += 1
            if record_jumps:
                if n_rec == rcap:
                    rcap2 = 2 * rcap
                    g_t = np.empty(rcap2)
                    g_T = np.empty(rcap2, np.int64)
                    g_E = np.empty(rcap2, np.int64)
                    g_I = np.empty(rcap2)
                    g_t[:rcap] = rec_t
                    g_T[:rcap] = rec_T
                    g_E[:rcap] = rec_E
                    g_I[:rcap] = rec_I
                    rec_t = g_t
                    rec_T = g_T
                    rec_E = g_E
                    rec_I = g_I
                    rcap = rcap2
                rec_t[n_rec] = t
                rec_T[n_rec] = tumor
                rec_E[n_rec] = eff
                rec_I[n_rec] = il2
                n_rec += 1

    # grid tail: last state persists, the field keeps flowing
    while next_g < n_grid:
        tg = t0 + next_g * grid_dt
        grid_T[next_g] = tumor
        grid_E[next_g] = eff
        sg = np.exp(-decay * (tg - t))
        grid_I[next_g] = il2 * sg + equil * (1.0 - sg)
        next_g += 1

    return (
        reason,
        n_events,
        erad,
        t,
        rec_t[:n_rec].copy(),
        rec_T[:n_rec].copy(),
        rec_E[:n_rec].copy(),
        rec_I[:n_rec].copy(),
        grid_T,
        grid_E,
        grid_I,
    )


def _pack_params(params: ModelParams) -> np.ndarray:
    return np.array(
        [
            params.growth_rate,
            params.crowding,
            params.volume,
            params.kill_rate,
            params.kill_half_sat,
            params.stimulation_rate,
            params.stimulation_half_sat,
            params.effector_death_rate,
            params.recruitment_rate,
            params.il2_production_rate,
            params.il2_half_sat,
            params.il2_decay_rate,
            params.recruitment_delay,
        ]
    )


def _check_horizon(t0: float, t_stop: float) -> None:
    if not (math.isfinite(t0) and math.isfinite(t_stop) and t_stop >= t0):
        raise ValueError(f"need finite t0 <= t_stop, got t0={t0!r}, t_stop={t_stop!r}")


def _run_kernel(init, t0, t_stop, params, rng, use_queue, event_cap, n_grid, grid_dt, record_jumps):
    if not isinstance(init, HybridState):
        raise TypeError("init must be a HybridState")
    _check_horizon(t0, t_stop)
    if event_cap < 0:
        raise ValueError(f"event_cap must be nonnegative, got {event_cap!r}")
    gen = _as_stream(rng).generator()
    return _simulate(
        np.int64(init.tumor_cells),
        np.int64(init.effector_cells),
        float(init.il2),
        float(t0),
        float(t_stop),
        _pack_params(params),
        bool(use_queue),
        gen,
        np.int64(event_cap),
        np.int64(n_grid),
        float(grid_dt),
        bool(record_jumps),
    )


def _trajectory_from(init, t0, t_stop, params, rng, use_queue, event_cap) -> Trajectory:
    reason, n_events, _erad, clock, rec_t, rec_T, rec_E, rec_I, _gT, _gE, _gI = _run_kernel(
        init, t0, t_stop, params, rng, use_queue, event_cap, 0, 1.0, True
    )
    reason_name = _REASONS[reason]
    t_end = t_stop if reason_name == "t_stop" else float(clock)
    return Trajectory(
        times=rec_t,
        tumor=rec_T,
        effectors=rec_E,
        il2=rec_I,
        t0=float(t0),
        t_stop=float(t_stop),
        t_end=t_end,
        reason=reason_name,
        n_events=int(n_events),
    )


def simulate_nodelay(init, t0, t_stop, params, rng, *, event_cap=DEFAULT_EVENT_CAP) -> Trajectory:
    """One exact trajectory with instantaneous recruitment (no delay queue)."""
    return _trajectory_from(init, t0, t_stop, params, rng, False, event_cap)


def simulate_delayed(init, t0, t_stop, params, rng, *, event_cap=DEFAULT_EVENT_CAP) -> Trajectory:
    """One exact trajectory with delayed recruitment completions."""
    return _trajectory_from(init, t0, t_stop, params, rng, True, event_cap)


def _grid_size(t0: float, t_stop: float, grid_dt: float) -> int:
    if not (math.isfinite(grid_dt) and grid_dt > 0.0):
        raise ValueError(f"grid_dt must be finite and positive, got {grid_dt!r}")
    return int(math.floor((t_stop - t0) / grid_dt + 1e-9)) + 1


def simulate_grid(init, t0, t_stop, params, rng, *, delayed=True, grid_dt=1.0,
                  event_cap=DEFAULT_EVENT_CAP) -> GridRun:
    """One run recorded only on a uniform grid (memory stays flat).

    Same process and identical variate stream as the trajectory simulators;
    recording does not consume randomness, so a GridRun and a Trajectory from
    the same stream describe the same path.
    """
    n_grid = _grid_size(t0, t_stop, grid_dt)
    reason, n_events, erad, clock, _t, _T, _E, _I, grid_T, grid_E, grid_I = _run_kernel(
        init, t0, t_stop, params, rng, delayed, event_cap, n_grid, grid_dt, False
    )
    reason_name = _REASONS[reason]
    t_end = t_stop if reason_name == "t_stop" else float(clock)
    return GridRun(
        times=t0 + np.arange(n_grid) * grid_dt,
        tumor=grid_T,
        effectors=grid_E,
        il2=grid_I,
        eradication_time=None if math.isinf(erad) else float(erad),
        reason=reason_name,
        n_events=int(n_events),
        t_end=t_end,
    )


def first_eradication_time(trajectory: Trajectory) -> float | None:
    """Exact first time the tumor count reaches zero, or None if it never does."""
    hits = np.flatnonzero(trajectory.tumor == 0)
    if hits.size == 0:
        return None
    return float(trajectory.times[hits[0]])


def thin_to_grid(trajectory: Trajectory, params: ModelParams, grid_dt: float = 1.0):
    """Resample a jump-resolved trajectory onto a uniform grid.

    Counts take the last recorded value at or before each grid time; the field
    is continued analytically from that record's mode. Returns
    (times, tumor, effectors, il2).
    """
    n_grid = _grid_size(trajectory.t0, trajectory.t_stop, grid_dt)
    times = trajectory.t0 + np.arange(n_grid) * grid_dt
    idx = np.searchsorted(trajectory.times, times, side="right") - 1
    idx = np.maximum(idx, 0)
    tumor = trajectory.tumor[idx]
    effectors = trajectory.effectors[idx]
    il2 = np.empty(n_grid)
    for k in range(n_grid):
        i = idx[k]
        equil = mode_equilibrium(int(tumor[k]), int(effectors[k]), params)
        dt = times[k] - trajectory.times[i]
        s = math.exp(-params.il2_decay_rate * dt)
        il2[k] = trajectory.il2[i] * s + equil * (1.0 - s)
    return times, tumor, effectors, il2
