"""Parameters, discrete state, and reaction channels of the tumor-immune model.

Cell populations are discrete counts; the interleukin-2 concentration rides
along as a continuous field, so a state lives in N^2 x [0, inf). Six reaction
channels act on the counts. Rates mix mass action with saturating
(Michaelis-Menten style) terms; concentrations are per-ml quantities, so the
organ volume appears wherever counts meet concentrations.

Channels, in index order 1..6:

    1  tumor cell division
    2  tumor death by crowding (logistic brake)
    3  tumor kill by effector contact
    4  effector division stimulated by interleukin-2
    5  effector death
    6  effector recruitment driven by tumor burden

Channel 4 is the only rate that depends on the continuous field; everything
else is constant between count changes. Channel 6 is the one subjected to a
completion delay in the delayed simulator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "N_CHANNELS",
    "STOICHIOMETRY",
    "TUMOR_BIRTH",
    "TUMOR_CROWDING_DEATH",
    "TUMOR_KILL",
    "EFFECTOR_STIMULATION",
    "EFFECTOR_DEATH",
    "EFFECTOR_RECRUITMENT",
    "ModelParams",
    "HybridState",
    "propensities",
    "apply_channel",
]

N_CHANNELS = 6

# 1-based channel indices.
(
    TUMOR_BIRTH,
    TUMOR_CROWDING_DEATH,
    TUMOR_KILL,
    EFFECTOR_STIMULATION,
    EFFECTOR_DEATH,
    EFFECTOR_RECRUITMENT,
) = range(1, 7)

# Count change per channel, rows in channel order, columns (tumor, effectors).
STOICHIOMETRY = np.array(
    [
        [1, 0],
        [-1, 0],
        [-1, 0],
        [0, 1],
        [0, -1],
        [0, 1],
    ],
    dtype=np.int64,
)
STOICHIOMETRY.setflags(write=False)


@dataclass(frozen=True)
class ModelParams:
    """Rate constants of the model.

    Defaults are the reference parameterization used throughout the bundled
    experiments. Saturation constants named *_half_sat are concentrations
    (cells/ml or pg/ml); they get multiplied by the volume where a count is
    compared against them.
    """

    growth_rate: float = 0.18  # tumor divisions per cell per day
    crowding: float = 1e-9  # ml per cell; logistic plateau = volume/crowding cells
    volume: float = 3.2  # ml
    kill_rate: float = 1.0  # max tumor kills per effector per day
    kill_half_sat: float = 1e5  # cells/ml
    stimulation_rate: float = 0.1245  # effector divisions per cell per day, saturated
    stimulation_half_sat: float = 2e7  # pg/ml
    effector_death_rate: float = 0.03  # per day
    recruitment_rate: float = 0.02  # effectors per tumor cell per day
    il2_production_rate: float = 5.0  # pg per cell pair per day, before saturation
    il2_half_sat: float = 1e3  # cells/ml
    il2_decay_rate: float = 10.0  # per day
    recruitment_delay: float = 0.0  # days between recruitment start and arrival

    def __post_init__(self) -> None:
        for name in (
            "growth_rate",
            "crowding",
            "kill_rate",
            "stimulation_rate",
            "effector_death_rate",
            "recruitment_rate",
            "il2_production_rate",
            "recruitment_delay",
        ):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0.0):
                raise ValueError(f"{name} must be finite and nonnegative, got {value!r}")
        for name in ("volume", "kill_half_sat", "stimulation_half_sat", "il2_half_sat", "il2_decay_rate"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0.0):
                raise ValueError(f"{name} must be finite and positive, got {value!r}")


@dataclass(frozen=True)
class HybridState:
    """A point of the hybrid process: two counts plus the continuous field."""

    tumor_cells: int
    effector_cells: int
    il2: float = 0.0

    def __post_init__(self) -> None:
        for name in ("tumor_cells", "effector_cells"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
                raise ValueError(f"{name} must be an integer count, got {value!r}")
            if value < 0:
                raise ValueError(f"{name} must be nonnegative, got {value!r}")
        if not (math.isfinite(self.il2) and self.il2 >= 0.0):
            raise ValueError(f"il2 must be finite and nonnegative, got {self.il2!r}")


def propensities(state: HybridState, params: ModelParams) -> np.ndarray:
    """Channel rates at the given state, in channel order (length 6).

    The crowding term is evaluated in floating point as
    rate * crowding * (tumor/volume) * (tumor - 1), which stays finite for any
    int64 count. All entries are nonnegative; channels with an absent reactant
    evaluate to exactly zero.
    """
    tumor = float(state.tumor_cells)
    effectors = float(state.effector_cells)
    il2 = state.il2
    a = np.zeros(N_CHANNELS)
    a[0] = params.growth_rate * tumor
    a[1] = params.growth_rate * params.crowding * (tumor / params.volume) * max(tumor - 1.0, 0.0)
    a[2] = params.kill_rate * tumor * effectors / (params.kill_half_sat * params.volume + tumor)
    a[3] = params.stimulation_rate * effectors * il2 / (params.stimulation_half_sat + il2)
    a[4] = params.effector_death_rate * effectors
    a[5] = params.recruitment_rate * tumor
    return a


def apply_channel(state: HybridState, channel: int) -> HybridState:
    """Apply one channel's count change; the continuous field is untouched.

    Raises if the channel index is out of range or the update would drive a
    count negative (a caller bug: those channels have zero propensity there).
    """
    if not 1 <= channel <= N_CHANNELS:
        raise ValueError(f"channel must be in 1..{N_CHANNELS}, got {channel!r}")
    d_tumor, d_effectors = STOICHIOMETRY[channel - 1]
    tumor = state.tumor_cells + int(d_tumor)
    effectors = state.effector_cells + int(d_effectors)
    if tumor < 0 or effectors < 0:
        raise ValueError(
            f"channel {channel} would drive a count negative from "
            f"({state.tumor_cells}, {state.effector_cells})"
        )
    return HybridState(tumor, effectors, state.il2)
