"""How much the tumor-size distribution moves when the delay moves.

The pipeline: run one ensemble per delay value, histogram the tumor count at
every grid time into shared bins over [0, largest count seen anywhere], treat
each bin's probability as a function of the delay sampled at the delay grid,
push a degree D-1 Lagrange polynomial through those D samples, and read off
its derivative at each node. The sensitivity at (time, delay) is the sum over
bins of |derivative| weighted by the bin's own probability; integrating that
over the delay grid (trapezoid) gives a single curve in time whose elevated
stretches mark where the delay actually matters.

Polynomials are handled in barycentric form. Node derivatives use the
differenced formula sum_j D_ij (f_j - f_i), which returns exactly zero when
the nodal values are all equal; the matrix-product form would leave roundoff
dust, and "no dependence on the delay" should read as exactly none.

A word of caution that the tests demonstrate: high-degree interpolation
through equispaced nodes oscillates hard near the ends when the underlying
dependence has a sharp transition (the classic Runge failure mode). With 31
delay nodes this is a real hazard; results near the boundary of the delay
grid deserve suspicion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .ensemble import EnsembleSummary

__all__ = [
    "DensityGrid",
    "LagrangePolynomial",
    "SensitivitySurface",
    "build_density_grid",
    "interpolate_in_theta",
    "sensitivity_surface",
]


def _barycentric_weights(nodes: np.ndarray) -> np.ndarray:
    n = nodes.shape[0]
    w = np.ones(n)
    for i in range(n):
        p = 1.0
        for j in range(n):
            if j != i:
                p *= nodes[i] - nodes[j]
        w[i] = 1.0 / p
    return w


@dataclass(frozen=True)
class LagrangePolynomial:
    """Interpolating polynomial through (nodes, values), barycentric form.

    Degree is len(nodes) - 1. Evaluation at a node returns the stored value
    exactly (no formula involved); elsewhere the second barycentric formula
    applies. derivative_at works anywhere but is exact-zero-preserving only at
    the nodes, which is where the sensitivity pipeline reads it.
    """

    nodes: np.ndarray
    values: np.ndarray
    weights: np.ndarray = field(init=False)

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=np.float64)
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if nodes.ndim != 1 or nodes.shape != values.shape or nodes.shape[0] < 1:
            raise ValueError("nodes and values must be matching nonempty 1-D arrays")
        if np.unique(nodes).shape[0] != nodes.shape[0]:
            raise ValueError("interpolation nodes must be distinct")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "weights", _barycentric_weights(nodes))

    def __call__(self, x: float) -> float:
        nodes = self.nodes
        hit = np.flatnonzero(nodes == x)
        if hit.size:
            return float(self.values[hit[0]])
        ratio = self.weights / (x - nodes)
        return float(np.dot(ratio, self.values) / ratio.sum())

    def derivative_at(self, x: float) -> float:
        nodes = self.nodes
        values = self.values
        w = self.weights
        hit = np.flatnonzero(nodes == x)
        if hit.size:
            i = int(hit[0])
            total = 0.0
            for j in range(nodes.shape[0]):
                if j != i:
                    total += (w[j] / w[i]) / (nodes[i] - nodes[j]) * (values[j] - values[i])
            return total
        # off-node: differentiate the second barycentric formula directly
        ratio = w / (x - nodes)
        denom = ratio.sum()
        p = np.dot(ratio, values) / denom
        ratio2 = ratio / (x - nodes)
        return float((np.dot(ratio2, values) - p * ratio2.sum()) / -denom)


@dataclass
class DensityGrid:
    """Per-delay, per-time histograms of the tumor count on shared bins.

    pmf has shape (delays, times, bins); each pmf[d, t] sums to one. Bin edges
    span [0, max_tumor] with the top edge inclusive, so the largest observed
    count lands in the last bin.
    """

    thetas: np.ndarray
    times: np.ndarray
    bin_edges: np.ndarray
    pmf: np.ndarray
    max_tumor: float


@dataclass
class SensitivitySurface:
    """Sensitivity values on the (time, delay) grid plus the delay-integrated curve."""

    thetas: np.ndarray
    times: np.ndarray
    values: np.ndarray
    integrated: np.ndarray


def build_density_grid(thetas, summaries, bins: int = 200) -> DensityGrid:
    """Histogram per-run tumor counts for each delay across the shared grid.

    summaries must come from ensembles run with keep_samples=True, one per
    delay value, all on the same time grid. The bin range is set by the
    largest count observed across every delay, per-run and per-time.
    """
    thetas = np.ascontiguousarray(thetas, dtype=np.float64)
    summaries = list(summaries)
    if thetas.ndim != 1 or thetas.shape[0] != len(summaries):
        raise ValueError("need exactly one ensemble summary per delay value")
    if thetas.shape[0] < 1:
        raise ValueError("need at least one delay value")
    if np.unique(thetas).shape[0] != thetas.shape[0]:
        raise ValueError("delay values must be distinct")
    if bins < 1:
        raise ValueError(f"bins must be at least 1, got {bins!r}")

    times = summaries[0].times
    matrices = []
    for theta, summary in zip(thetas, summaries):
        if summary.samples is None:
            raise ValueError(
                f"summary for delay {theta!r} has no samples; run with keep_samples=True"
            )
        if summary.samples.shape[0] == 0:
            raise ValueError(f"summary for delay {theta!r} is empty")
        if summary.times.shape != times.shape or not np.array_equal(summary.times, times):
            raise ValueError("all ensembles must share one time grid")
        matrices.append(summary.samples)

    max_tumor = max(float(m.max()) for m in matrices)
    span = max_tumor if max_tumor > 0.0 else 1.0
    edges = np.linspace(0.0, span, bins + 1)

    n_times = times.shape[0]
    pmf = np.empty((thetas.shape[0], n_times, bins))
    inner = edges[1:-1]
    for d, m in enumerate(matrices):
        idx = np.searchsorted(inner, m, side="right")
        n_runs = m.shape[0]
        for t in range(n_times):
            pmf[d, t] = np.bincount(idx[:, t], minlength=bins) / n_runs
    return DensityGrid(
        thetas=thetas,
        times=times.copy(),
        bin_edges=edges,
        pmf=pmf,
        max_tumor=max_tumor,
    )


def interpolate_in_theta(grid: DensityGrid, time_index: int, bin_index: int) -> LagrangePolynomial:
    """Polynomial in the delay through one bin's probabilities at one time."""
    if grid.thetas.shape[0] < 2:
        raise ValueError("interpolation needs at least two delay values")
    values = grid.pmf[:, time_index, bin_index]
    return LagrangePolynomial(nodes=grid.thetas, values=values)


def _trapezoid(y: np.ndarray, x: np.ndarray) -> np.ndarray:
    dx = np.diff(x)
    return 0.5 * ((y[..., 1:] + y[..., :-1]) * dx).sum(axis=-1)


def sensitivity_surface(grid: DensityGrid) -> SensitivitySurface:
    """Assemble the sensitivity surface and its delay-integrated curve.

    For each (time, delay node): sum over bins of |d pmf / d delay| * pmf,
    with the derivative taken from the Lagrange polynomial at that node. The
    curve integrates the surface over the delay grid by trapezoid. Identical
    densities across delays produce an exactly zero surface.
    """
    thetas = grid.thetas
    n_theta = thetas.shape[0]
    if n_theta < 2:
        raise ValueError("sensitivity needs at least two delay values")
    w = _barycentric_weights(thetas)
    dmat = np.zeros((n_theta, n_theta))
    for i in range(n_theta):
        for j in range(n_theta):
            if j != i:
                dmat[i, j] = (w[j] / w[i]) / (thetas[i] - thetas[j])

    n_times = grid.times.shape[0]
    values = np.empty((n_times, n_theta))
    for t in range(n_times):
        f = grid.pmf[:, t, :]
        for i in range(n_theta):
            diffs = f - f[i]
            deriv = dmat[i] @ diffs
            values[t, i] = np.dot(np.abs(deriv), f[i])
    integrated = _trapezoid(values, thetas)
    return SensitivitySurface(
        thetas=thetas.copy(),
        times=grid.times.copy(),
        values=values,
        integrated=integrated,
    )
