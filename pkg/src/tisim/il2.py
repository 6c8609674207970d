"""Analytic interleukin-2 field inside a fixed mode, and exit-time sampling.

Between two count changes the cell counts are frozen ("a mode"), so the
field obeys a linear balance law and relaxes exponentially toward the mode's
production/decay equilibrium:

    il2(t) = equil + (il2_entry - equil) * exp(-decay * (t - entry_time))
    equil  = [p_prod * n_T * n_E / (half_prod * V^2 + n_T * V)] / decay

The stimulated-division channel is the only time-varying rate,
a4(t) = smax * n_E * il2(t) / (half_stim + il2(t)), and its integrated hazard
has a closed form. Writing B = equil, C = il2_entry - B, D = half_stim + B,
mu = decay:

    int_0^tau a4 = smax * n_E * [ (B/D) * tau
                   - (half_stim / (D * mu)) * ln((D + C e^(-mu tau)) / (D + C)) ]

(partial fractions in w = e^(-mu u); note D + C = half_stim + il2_entry and
D + C e^(-mu tau) = half_stim + il2(tau), both positive). The log is evaluated
as log1p(C * expm1(-mu tau) / (half_stim + il2_entry)), which is accurate for
small tau and never forms a growing exponential.

Exit times follow the survival form: tau solves Lambda(tau) = ln(1/r1) where
Lambda(tau) = A * tau + int_0^tau a4 and A is the sum of the five constant
channel rates. Lambda is nondecreasing; when every channel is silent, or only
a decaying stimulation hazard remains and the target exceeds its total mass,
the exit time is +inf.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .model import EFFECTOR_STIMULATION, HybridState, ModelParams, propensities

__all__ = [
    "HAZARD_TOL",
    "EXIT_HORIZON",
    "ModeFlow",
    "mode_equilibrium",
    "flow_at",
    "cumulative_hazard",
    "sample_exit_time",
]

# Residual tolerance of the hazard inversion: |Lambda(tau) - target| is driven
# below HAZARD_TOL * max(1, target).
HAZARD_TOL = 1e-10

# Candidate exit times beyond this many days are reported as +inf.
EXIT_HORIZON = 1e5


def mode_equilibrium(tumor_cells: int, effector_cells: int, params: ModelParams) -> float:
    """Field value the frozen mode relaxes toward (production/decay balance)."""
    v = params.volume
    production = (
        params.il2_production_rate
        * float(tumor_cells)
        * float(effector_cells)
        / (params.il2_half_sat * v * v + float(tumor_cells) * v)
    )
    return production / params.il2_decay_rate


@dataclass(frozen=True)
class ModeFlow:
    """Deterministic field trajectory of one mode, anchored at its entry point."""

    entry_time: float
    entry_il2: float
    equilibrium: float
    decay_rate: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.entry_time)):
            raise ValueError(f"entry_time must be finite, got {self.entry_time!r}")
        if not (math.isfinite(self.entry_il2) and self.entry_il2 >= 0.0):
            raise ValueError(f"entry_il2 must be finite and nonnegative, got {self.entry_il2!r}")
        if not (math.isfinite(self.equilibrium) and self.equilibrium >= 0.0):
            raise ValueError(f"equilibrium must be finite and nonnegative, got {self.equilibrium!r}")
        if not (math.isfinite(self.decay_rate) and self.decay_rate > 0.0):
            raise ValueError(f"decay_rate must be finite and positive, got {self.decay_rate!r}")

    @classmethod
    def for_state(cls, state: HybridState, params: ModelParams, entry_time: float = 0.0) -> "ModeFlow":
        return cls(
            entry_time=entry_time,
            entry_il2=state.il2,
            equilibrium=mode_equilibrium(state.tumor_cells, state.effector_cells, params),
            decay_rate=params.il2_decay_rate,
        )


@njit(cache=True, nogil=True)
def _flow_value(entry_il2, equilibrium, decay_rate, dt):
    # convex-combination form: exact at dt=0 even when entry_il2 is tiny
    # relative to the equilibrium (the textbook B + (I-B)e form absorbs it)
    s = np.exp(-decay_rate * dt)
    return entry_il2 * s + equilibrium * (1.0 - s)


@njit(cache=True, nogil=True)
def _stim_hazard(tau, smax_ne, equilibrium, entry_il2, half_stim, decay_rate):
    # Closed-form int_0^tau a4; exact for tau = 0 and stable for tiny mu*tau.
    if smax_ne <= 0.0:
        return 0.0
    denom0 = half_stim + entry_il2
    assert denom0 > 0.0
    delta = entry_il2 - equilibrium
    d_sat = half_stim + equilibrium
    log_term = np.log1p(delta * np.expm1(-decay_rate * tau) / denom0)
    return smax_ne * (
        (equilibrium / d_sat) * tau - (half_stim / (d_sat * decay_rate)) * log_term
    )


@njit(cache=True, nogil=True)
def _total_hazard(tau, const_rate, smax_ne, equilibrium, entry_il2, half_stim, decay_rate):
    return const_rate * tau + _stim_hazard(tau, smax_ne, equilibrium, entry_il2, half_stim, decay_rate)


@njit(cache=True, nogil=True)
def _invert_hazard(target, const_rate, smax_ne, equilibrium, entry_il2, half_stim, decay_rate):
    """Smallest tau >= 0 with Lambda(tau) = target, or +inf when unreachable.

    Exact algebraic paths cover the silent, constant-rate, and pure-decay
    cases; the general case runs Newton seeded with target/rate(0), guarded by
    a bracket that grows by doubling up to EXIT_HORIZON.
    """
    if target <= 0.0:
        return 0.0
    if smax_ne <= 0.0 or (equilibrium <= 0.0 and entry_il2 <= 0.0):
        # Stimulation silent forever: purely exponential exit.
        if const_rate <= 0.0:
            return np.inf
        tau = target / const_rate
        return tau if tau <= EXIT_HORIZON else np.inf
    if entry_il2 == equilibrium:
        # Field already at balance: total rate is constant.
        rate = const_rate + smax_ne * equilibrium / (half_stim + equilibrium)
        tau = target / rate
        return tau if tau <= EXIT_HORIZON else np.inf
    if const_rate <= 0.0 and equilibrium <= 0.0:
        # Only a decaying stimulation hazard; total mass is finite.
        # Lambda(tau) = (smax_ne/mu) * ln((h+I0)/(h + I0 e^(-mu tau))) = target
        scale = np.exp(target * decay_rate / smax_ne)
        remainder = (half_stim + entry_il2) / scale - half_stim
        if remainder <= 0.0:
            return np.inf
        tau = -np.log(remainder / entry_il2) / decay_rate
        return tau if tau <= EXIT_HORIZON else np.inf

    rate0 = const_rate + smax_ne * entry_il2 / (half_stim + entry_il2)
    lo = 0.0
    hi = np.inf
    x = target / rate0 if rate0 > 0.0 else 1.0
    tol = HAZARD_TOL * max(1.0, target)
    for _ in range(200):
        f = _total_hazard(tau=x, const_rate=const_rate, smax_ne=smax_ne,
                          equilibrium=equilibrium, entry_il2=entry_il2,
                          half_stim=half_stim, decay_rate=decay_rate) - target
        if abs(f) <= tol:
            return x if x <= EXIT_HORIZON else np.inf
        if f > 0.0:
            hi = x
        else:
            lo = x
            if hi == np.inf and x >= EXIT_HORIZON:
                return np.inf
        il2_x = _flow_value(entry_il2, equilibrium, decay_rate, x)
        rate_x = const_rate + smax_ne * il2_x / (half_stim + il2_x)
        step_ok = rate_x > 0.0
        if step_ok:
            x_new = x - f / rate_x
        else:
            x_new = -1.0
        if not step_ok or x_new <= lo or x_new >= hi:
            if hi == np.inf:
                x_new = 2.0 * x  # grow the bracket
            else:
                x_new = 0.5 * (lo + hi)
        x = x_new
    return x if x <= EXIT_HORIZON else np.inf


def _constant_rate_sum(state: HybridState, params: ModelParams) -> float:
    a = propensities(state, params)
    return float(np.sum(a) - a[EFFECTOR_STIMULATION - 1])


def flow_at(flow: ModeFlow, t: float) -> float:
    """Field value at absolute time t >= entry_time.

    Never leaves [min(entry, equilibrium), max(entry, equilibrium)]; the last
    half-ulp of summation roundoff is clamped away so the bound is exact.
    """
    if t < flow.entry_time:
        raise ValueError(f"t={t!r} precedes mode entry at {flow.entry_time!r}")
    value = float(_flow_value(flow.entry_il2, flow.equilibrium, flow.decay_rate, t - flow.entry_time))
    lo = min(flow.entry_il2, flow.equilibrium)
    hi = max(flow.entry_il2, flow.equilibrium)
    return min(max(value, lo), hi)


def cumulative_hazard(state: HybridState, flow: ModeFlow, params: ModelParams, tau: float) -> float:
    """Integrated exit intensity Lambda(tau) over [entry, entry + tau]."""
    if not (math.isfinite(tau) and tau >= 0.0):
        raise ValueError(f"tau must be finite and nonnegative, got {tau!r}")
    const_rate = _constant_rate_sum(state, params)
    smax_ne = params.stimulation_rate * float(state.effector_cells)
    return float(
        _total_hazard(
            tau=tau,
            const_rate=const_rate,
            smax_ne=smax_ne,
            equilibrium=flow.equilibrium,
            entry_il2=flow.entry_il2,
            half_stim=params.stimulation_half_sat,
            decay_rate=flow.decay_rate,
        )
    )


def sample_exit_time(state: HybridState, flow: ModeFlow, params: ModelParams, r1: float) -> float:
    """Exit time for uniform variate r1 in (0, 1]: solves Lambda(tau) = ln(1/r1).

    Returns +inf when the mode's total hazard never reaches the target
    (absorbing states; or exit times past EXIT_HORIZON, treated as never).
    """
    if not (0.0 < r1 <= 1.0):
        raise ValueError(f"r1 must lie in (0, 1], got {r1!r}")
    target = -math.log(r1)
    const_rate = _constant_rate_sum(state, params)
    smax_ne = params.stimulation_rate * float(state.effector_cells)
    return float(
        _invert_hazard(
            target=target,
            const_rate=const_rate,
            smax_ne=smax_ne,
            equilibrium=flow.equilibrium,
            entry_il2=flow.entry_il2,
            half_stim=params.stimulation_half_sat,
            decay_rate=flow.decay_rate,
        )
    )
