"""Mean-field reference dynamics: the delayed ODE system behind the hybrid model.

Large populations wash out the jump noise and the model collapses to three
coupled equations for tumor burden, effector count and field level, with the
recruitment term reading the tumor burden one delay in the past. This module
integrates that system with classic RK4 under the method of steps: the delay
is constrained to an integer number of steps so the lagged value at full-step
stage times is an exact grid lookup. Midpoint stages fall between grid points;
there the lagged value comes from a cubic fit through the four nearest stored
points (window clamped at the edges). Lag times before the start of
integration defer to the caller-supplied history function, which defaults to
an empty-system past (no tumor before time zero, matching a delay queue that
starts empty).

The integrator is deliberately plain: fixed step, no stiffness control, hard
failure on blow-up. Derivative kinks at multiples of the delay (inherited from
the history jump at t=0) cost local order, which fixed-step RK4 tolerates at
the scales used here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import ModelParams

__all__ = ["DdeSolution", "integrate_dde", "zero_history"]

# undershoot beyond this is an integrator fault, not roundoff
_NEGATIVE_TOL = -1e-9


def zero_history(t: float) -> float:
    """Tumor history for a system empty before time zero."""
    return 0.0


@dataclass
class DdeSolution:
    """Mean-field time series on the integration grid."""

    times: np.ndarray
    tumor: np.ndarray
    effectors: np.ndarray
    il2: np.ndarray


def _exact_steps(span: float, step: float, what: str) -> int:
    ratio = span / step
    n = int(round(ratio))
    if abs(ratio - n) > 1e-9 * max(1.0, abs(ratio)):
        raise ValueError(f"{what} ({span!r}) must be an integer multiple of step ({step!r})")
    return n


def _half_step_lag(values: np.ndarray, filled: int, m: int) -> float:
    # lagged tumor value at grid coordinate m + 1/2, from stored points only
    hi = min(m + 2, filled)
    lo = max(0, hi - 3)
    x = m + 0.5
    total = 0.0
    for j in range(lo, hi + 1):
        w = 1.0
        for k in range(lo, hi + 1):
            if k != j:
                w *= (x - k) / (j - k)
        total += w * values[j]
    return total


def integrate_dde(params: ModelParams, init, t_stop: float, *, history=None,
                  step: float = 0.01) -> DdeSolution:
    """Integrate the mean-field system from t=0 to t_stop on a fixed RK4 grid.

    init is (tumor, effectors, il2) at t=0. history(t) supplies the tumor
    burden for lag times below zero (and the left limit at zero exactly); it
    defaults to an empty past. The delay and the horizon must both be integer
    multiples of the step.

    Raises ValueError on bad grid arithmetic and RuntimeError if the state
    leaves the nonnegative orthant by more than roundoff or stops being finite.
    """
    if not (math.isfinite(step) and step > 0.0):
        raise ValueError(f"step must be finite and positive, got {step!r}")
    if not (math.isfinite(t_stop) and t_stop >= 0.0):
        raise ValueError(f"t_stop must be finite and nonnegative, got {t_stop!r}")
    tumor0, eff0, il2_0 = (float(v) for v in init)
    for label, v in (("tumor", tumor0), ("effectors", eff0), ("il2", il2_0)):
        if not (math.isfinite(v) and v >= 0.0):
            raise ValueError(f"initial {label} must be finite and nonnegative, got {v!r}")
    hist = zero_history if history is None else history

    n = _exact_steps(t_stop, step, "t_stop")
    theta = params.recruitment_delay
    lag = _exact_steps(theta, step, "delay") if theta > 0.0 else 0

    growth = params.growth_rate
    crowding = params.crowding
    volume = params.volume
    kill = params.kill_rate
    kill_half = params.kill_half_sat
    stim = params.stimulation_rate
    stim_half = params.stimulation_half_sat
    death = params.effector_death_rate
    recruit = params.recruitment_rate
    prod = params.il2_production_rate
    prod_half = params.il2_half_sat
    decay = params.il2_decay_rate

    def rhs(T, E, I, T_lag):
        dT = growth * T * (1.0 - crowding * T / volume) - kill * T * E / (kill_half * volume + T)
        dE = stim * E * I / (stim_half + I) - death * E + recruit * T_lag
        dI = prod * T * E / (prod_half * volume * volume + T * volume) - decay * I
        return dT, dE, dI

    times = np.arange(n + 1) * step
    tumor = np.empty(n + 1)
    effectors = np.empty(n + 1)
    il2 = np.empty(n + 1)
    tumor[0] = tumor0
    effectors[0] = eff0
    il2[0] = il2_0

    h = step
    half = 0.5 * h
    for i in range(n):
        t = i * h
        T = tumor[i]
        E = effectors[i]
        I = il2[i]

        if lag == 0:
            # no delay: the lagged argument collapses onto each stage's own state
            dT1, dE1, dI1 = rhs(T, E, I, T)
            T2 = T + half * dT1
            E2 = E + half * dE1
            I2 = I + half * dI1
            dT2, dE2, dI2 = rhs(T2, E2, I2, T2)
            T3 = T + half * dT2
            E3 = E + half * dE2
            I3 = I + half * dI2
            dT3, dE3, dI3 = rhs(T3, E3, I3, T3)
            T4 = T + h * dT3
            E4 = E + h * dE3
            I4 = I + h * dI3
            dT4, dE4, dI4 = rhs(T4, E4, I4, T4)
        else:
            m = i - lag
            lag_a = tumor[m] if m >= 0 else hist(t - theta)
            # the step ending exactly on the seam integrates over lag times in
            # (-h, 0), so its final stage needs the history's left limit, not
            # the stored right-limit value at index zero
            lag_b = tumor[m + 1] if m >= 0 else hist(t + h - theta)
            lag_mid = _half_step_lag(tumor, i, m) if m >= 0 else hist(t + half - theta)
            dT1, dE1, dI1 = rhs(T, E, I, lag_a)
            T2 = T + half * dT1
            E2 = E + half * dE1
            I2 = I + half * dI1
            dT2, dE2, dI2 = rhs(T2, E2, I2, lag_mid)
            T3 = T + half * dT2
            E3 = E + half * dE2
            I3 = I + half * dI2
            dT3, dE3, dI3 = rhs(T3, E3, I3, lag_mid)
            T4 = T + h * dT3
            E4 = E + h * dE3
            I4 = I + h * dI3
            dT4, dE4, dI4 = rhs(T4, E4, I4, lag_b)

        Tn = T + (h / 6.0) * (dT1 + 2.0 * dT2 + 2.0 * dT3 + dT4)
        En = E + (h / 6.0) * (dE1 + 2.0 * dE2 + 2.0 * dE3 + dE4)
        In = I + (h / 6.0) * (dI1 + 2.0 * dI2 + 2.0 * dI3 + dI4)

        if not (math.isfinite(Tn) and math.isfinite(En) and math.isfinite(In)):
            raise RuntimeError(
                f"state became non-finite at t={t + h:.6g} "
                f"(T={Tn!r}, E={En!r}, I={In!r}); reduce the step or check parameters"
            )
        if Tn < 0.0 or En < 0.0 or In < 0.0:
            worst = min(Tn, En, In)
            if worst <= _NEGATIVE_TOL:
                raise RuntimeError(
                    f"state went negative at t={t + h:.6g} "
                    f"(T={Tn!r}, E={En!r}, I={In!r}); reduce the step"
                )
            Tn = max(Tn, 0.0)
            En = max(En, 0.0)
            In = max(In, 0.0)

        tumor[i + 1] = Tn
        effectors[i + 1] = En
        il2[i + 1] = In

    return DdeSolution(times=times, tumor=tumor, effectors=effectors, il2=il2)
