"""Stochastic simulator and analysis toolkit for a delayed tumor-immune model.

Discrete tumor and effector cell counts jump through birth, death, kill,
stimulation and recruitment channels while an interleukin field relaxes
analytically between jumps; recruitment acts after a fixed delay through a
queue of pending arrivals. On top of the exact per-trajectory engine sit a
mean-field delayed-ODE reference, Monte Carlo ensemble statistics, and a
density-based sensitivity analysis in the delay parameter, all reachable from
the tisim command line.
"""

from .model import (
    N_CHANNELS,
    STOICHIOMETRY,
    TUMOR_BIRTH,
    TUMOR_CROWDING_DEATH,
    TUMOR_KILL,
    EFFECTOR_STIMULATION,
    EFFECTOR_DEATH,
    EFFECTOR_RECRUITMENT,
    ModelParams,
    HybridState,
    propensities,
    apply_channel,
)
from .il2 import (
    ModeFlow,
    mode_equilibrium,
    flow_at,
    cumulative_hazard,
    sample_exit_time,
)
from .engine import (
    DEFAULT_EVENT_CAP,
    RngStream,
    derive_stream,
    Trajectory,
    GridRun,
    select_channel,
    simulate_nodelay,
    simulate_delayed,
    simulate_grid,
    first_eradication_time,
    thin_to_grid,
)
from .dde import DdeSolution, integrate_dde, zero_history
from .ensemble import (
    EnsembleConfig,
    EnsembleSummary,
    EradicationDensity,
    run_ensemble,
    eradication_density,
    density_mode,
    peak_statistics,
)
from .sensitivity import (
    DensityGrid,
    LagrangePolynomial,
    SensitivitySurface,
    build_density_grid,
    interpolate_in_theta,
    sensitivity_surface,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
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
    "ModeFlow",
    "mode_equilibrium",
    "flow_at",
    "cumulative_hazard",
    "sample_exit_time",
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
    "DdeSolution",
    "integrate_dde",
    "zero_history",
    "EnsembleConfig",
    "EnsembleSummary",
    "EradicationDensity",
    "run_ensemble",
    "eradication_density",
    "density_mode",
    "peak_statistics",
    "DensityGrid",
    "LagrangePolynomial",
    "SensitivitySurface",
    "build_density_grid",
    "interpolate_in_theta",
    "sensitivity_surface",
]
