"""Monte Carlo layer: many independent runs, one deterministic summary.

Each run gets its own variate stream derived from (base_seed, run_index), so
the ensemble is a pure function of its configuration regardless of how many
workers execute it or in which order runs finish; aggregation walks results in
run-index order. Workers help only because the trajectory kernel drops the GIL.

Averages follow the convention that an eradicated tumor keeps contributing
zeros until the horizon, so mean curves decay back toward zero instead of
being conditioned on survival. Runs stopped by the event cap carry no state
out to the horizon and are left out of the means (but still counted, and still
contribute an eradication time if they hit zero before capping).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .engine import DEFAULT_EVENT_CAP, GridRun, derive_stream, simulate_grid
from .model import HybridState, ModelParams

__all__ = [
    "EnsembleConfig",
    "EnsembleSummary",
    "EradicationDensity",
    "run_ensemble",
    "eradication_density",
    "density_mode",
    "peak_statistics",
]


@dataclass(frozen=True)
class EnsembleConfig:
    """Everything that determines an ensemble's output, and nothing else.

    threads and keep_samples do not change any numbers: threads only spreads
    the work, keep_samples only retains the per-run tumor matrix that the
    sensitivity stage needs.
    """

    params: ModelParams
    init: HybridState
    t_stop: float
    runs: int
    base_seed: int
    grid_dt: float = 1.0
    delayed: bool = True
    event_cap: int = DEFAULT_EVENT_CAP
    keep_samples: bool = False
    threads: int = 1

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError(f"runs must be at least 1, got {self.runs!r}")
        if not (math.isfinite(self.grid_dt) and self.grid_dt > 0.0):
            raise ValueError(f"grid_dt must be finite and positive, got {self.grid_dt!r}")
        if not (math.isfinite(self.t_stop) and self.t_stop >= 0.0):
            raise ValueError(f"t_stop must be finite and nonnegative, got {self.t_stop!r}")
        if self.threads < 1:
            raise ValueError(f"threads must be at least 1, got {self.threads!r}")


@dataclass
class EnsembleSummary:
    """Aggregated ensemble output on the shared time grid.

    eradication_times holds the exact zero-hitting time of every run that
    eradicated, in run order; eradication_fraction divides by all runs, capped
    ones included. samples is the (included runs) x (gridpoints) tumor count
    matrix when requested, else None.
    """

    config: EnsembleConfig
    times: np.ndarray
    mean_tumor: np.ndarray
    mean_effectors: np.ndarray
    mean_il2: np.ndarray
    eradication_times: np.ndarray
    eradication_fraction: float
    capped_runs: int
    samples: np.ndarray | None = field(default=None, repr=False)


@dataclass
class EradicationDensity:
    """Histogram of eradication times, unit total mass over eradicated runs.

    Bin k covers [k*bin_width, (k+1)*bin_width). Empty when no run eradicated.
    """

    bin_starts: np.ndarray
    mass: np.ndarray
    bin_width: float
    n_eradicated: int


def _one_run(cfg: EnsembleConfig, index: int) -> GridRun:
    return simulate_grid(
        cfg.init,
        0.0,
        cfg.t_stop,
        cfg.params,
        derive_stream(cfg.base_seed, index),
        delayed=cfg.delayed,
        grid_dt=cfg.grid_dt,
        event_cap=cfg.event_cap,
    )


def run_ensemble(cfg: EnsembleConfig) -> EnsembleSummary:
    """Simulate cfg.runs independent runs and aggregate them on the grid."""
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            runs = list(pool.map(lambda i: _one_run(cfg, i), range(cfg.runs)))
    else:
        runs = [_one_run(cfg, i) for i in range(cfg.runs)]

    n_grid = runs[0].times.shape[0]
    sum_tumor = np.zeros(n_grid)
    sum_eff = np.zeros(n_grid)
    sum_il2 = np.zeros(n_grid)
    hits: list[float] = []
    capped = 0
    kept_rows: list[np.ndarray] = []

    for run in runs:
        if run.eradication_time is not None:
            hits.append(run.eradication_time)
        if run.reason == "event_cap":
            capped += 1
            continue
        sum_tumor += run.tumor
        sum_eff += run.effectors
        sum_il2 += run.il2
        if cfg.keep_samples:
            kept_rows.append(run.tumor)

    included = cfg.runs - capped
    if included == 0:
        raise RuntimeError(
            f"all {cfg.runs} runs hit the event cap ({cfg.event_cap}); nothing to average"
        )

    return EnsembleSummary(
        config=cfg,
        times=runs[0].times.copy(),
        mean_tumor=sum_tumor / included,
        mean_effectors=sum_eff / included,
        mean_il2=sum_il2 / included,
        eradication_times=np.array(hits, dtype=np.float64),
        eradication_fraction=len(hits) / cfg.runs,
        capped_runs=capped,
        samples=np.vstack(kept_rows) if cfg.keep_samples else None,
    )


def eradication_density(summary: EnsembleSummary, bin_width: float = 1.0) -> EradicationDensity:
    """Empirical distribution of eradication times in fixed-width bins.

    Mass sums to one over the eradicated runs; no runs eradicated gives an
    explicit empty density rather than an error.
    """
    if not (math.isfinite(bin_width) and bin_width > 0.0):
        raise ValueError(f"bin_width must be finite and positive, got {bin_width!r}")
    times = summary.eradication_times
    n = times.shape[0]
    if n == 0:
        return EradicationDensity(
            bin_starts=np.empty(0),
            mass=np.empty(0),
            bin_width=bin_width,
            n_eradicated=0,
        )
    idx = np.floor(times / bin_width).astype(np.int64)
    n_bins = int(idx.max()) + 1
    counts = np.bincount(idx, minlength=n_bins)
    return EradicationDensity(
        bin_starts=np.arange(n_bins) * bin_width,
        mass=counts / n,
        bin_width=bin_width,
        n_eradicated=n,
    )


def density_mode(density: EradicationDensity) -> float:
    """Center of the heaviest bin (first one on ties)."""
    if density.n_eradicated == 0:
        raise ValueError("density is empty; no eradication events")
    k = int(np.argmax(density.mass))
    return float(density.bin_starts[k] + 0.5 * density.bin_width)


def peak_statistics(summary: EnsembleSummary) -> tuple[float, float]:
    """(peak value, peak time) of the mean tumor curve; first index on ties."""
    k = int(np.argmax(summary.mean_tumor))
    return float(summary.mean_tumor[k]), float(summary.times[k])
