"""Command-line surface: presets, config files, CSV outputs, run manifests.

One executable, five experiment kinds (single-run, ensemble, dde, sensitivity,
bifurcation-scan), and a strict little config dialect: line-oriented
key = value pairs under [experiment] and [params] sections, '#' comments,
unknown keys rejected with their line number so typos die loudly instead of
silently running the default. Keys before any section header count as
[experiment] keys.

Precedence, lowest to highest: built-in defaults, --preset, --config, then
individual flags. Every run writes a manifest alongside its CSVs; the manifest
is itself a valid config file, so rerunning with --config manifest.txt
reproduces the outputs byte for byte (a [meta] section holds version, timing
and result notes, and is ignored by the parser).

Numbers in CSVs are written with repr, i.e. the shortest decimal string that
round-trips, which is what makes byte-level reproducibility a meaningful
promise instead of a formatting accident.

Exit codes: 0 success, 1 configuration problem, 2 runtime failure. Partial
outputs are deleted when a run fails so a manifest's presence marks a
completed experiment.
"""

from __future__ import annotations

import argparse
import math
import sys
import time
from dataclasses import dataclass, fields, replace
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .dde import integrate_dde
from .engine import derive_stream, simulate_grid
from .ensemble import EnsembleConfig, eradication_density, run_ensemble
from .model import HybridState, ModelParams
from .sensitivity import build_density_grid, sensitivity_surface

__all__ = ["ConfigError", "ExperimentSpec", "parse_config", "run_experiment", "main"]

KINDS = ("single-run", "ensemble", "dde", "sensitivity", "bifurcation-scan")

_PARAM_KEYS = tuple(f.name for f in fields(ModelParams))

_EXPERIMENT_KEYS = (
    "kind",
    "t_stop",
    "runs",
    "base_seed",
    "grid_dt",
    "delayed",
    "bins",
    "thetas",
    "theta",
    "init_tumor",
    "init_effectors",
    "init_il2",
    "eradication_bin",
    "dde_step",
)

_SEVEN_THETAS = "0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0"

PRESETS = {
    "fig2": {
        ("experiment", "kind"): "ensemble",
        ("experiment", "thetas"): _SEVEN_THETAS,
        ("experiment", "t_stop"): "250.0",
        ("experiment", "runs"): "1000",
        ("params", "recruitment_rate"): "0.02",
    },
    "fig4-bifurcation": {
        ("experiment", "kind"): "bifurcation-scan",
        ("experiment", "thetas"): "0.0, 1.5, 2.0, 3.0",
        ("experiment", "t_stop"): "1000.0",
        ("experiment", "runs"): "1000",
        ("params", "recruitment_rate"): "0.035",
    },
    "fig5-sensitivity": {
        ("experiment", "kind"): "sensitivity",
        ("experiment", "thetas"): ", ".join(repr(round(0.1 * k, 1)) for k in range(31)),
        ("experiment", "t_stop"): "250.0",
        ("experiment", "runs"): "1000",
        ("experiment", "bins"): "200",
        ("params", "recruitment_rate"): "0.02",
    },
    "fig6-dde": {
        ("experiment", "kind"): "dde",
        ("experiment", "thetas"): _SEVEN_THETAS,
        ("experiment", "t_stop"): "400.0",
        ("params", "recruitment_rate"): "0.035",
    },
}


class ConfigError(Exception):
    """Anything wrong with flags or config content; exits with status 1."""

    def __init__(self, message: str, path=None, line: int | None = None):
        if path is not None and line is not None:
            message = f"{path}:{line}: {message}"
        elif path is not None:
            message = f"{path}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class ExperimentSpec:
    """Fully resolved experiment: what to run, with what, where to write."""

    kind: str
    params: ModelParams
    init: HybridState
    t_stop: float
    runs: int
    base_seed: int
    grid_dt: float
    delayed: bool
    bins: int
    thetas: tuple[float, ...] | None
    eradication_bin: float
    dde_step: float
    threads: int
    out_dir: str


def _parse_config_text(text: str, path) -> dict:
    """Raw (section, key) -> (value, line) mapping; [meta] content is skipped."""
    layer: dict = {}
    section = "experiment"
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if name not in ("experiment", "params", "meta"):
                raise ConfigError(f"unknown section [{name}]", path, lineno)
            section = name
            continue
        if "=" not in line:
            raise ConfigError(f"expected key = value, got {line!r}", path, lineno)
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError("empty key", path, lineno)
        if section == "meta":
            continue
        known = _EXPERIMENT_KEYS if section == "experiment" else _PARAM_KEYS
        if key not in known:
            raise ConfigError(f"unknown key {key!r} in section [{section}]", path, lineno)
        if (section, key) in layer:
            raise ConfigError(f"duplicate key {key!r}", path, lineno)
        layer[(section, key)] = (value, lineno)
    return layer


def _as_layer(preset: dict) -> dict:
    return {sk: (value, None) for sk, value in preset.items()}


def _conv_float(value, *, positive=False, nonnegative=False):
    v = float(value)
    if not math.isfinite(v):
        raise ValueError("must be finite")
    if positive and v <= 0.0:
        raise ValueError("must be positive")
    if nonnegative and v < 0.0:
        raise ValueError("must be nonnegative")
    return v


def _conv_int(value, *, minimum=None):
    v = int(value, 0) if isinstance(value, str) else int(value)
    if minimum is not None and v < minimum:
        raise ValueError(f"must be at least {minimum}")
    return v


def _conv_bool(value):
    if value == "true":
        return True
    if value == "false":
        return False
    raise ValueError("must be 'true' or 'false'")


def _conv_thetas(value):
    parts = [p.strip() for p in value.split(",")]
    if not parts or any(not p for p in parts):
        raise ValueError("must be a comma-separated list of numbers")
    out = tuple(_conv_float(p, nonnegative=True) for p in parts)
    for a, b in zip(out, out[1:]):
        if b <= a:
            raise ValueError("delay values must be strictly increasing")
    return out


def _build_spec(layers, *, threads=1, out_dir="out", path=None) -> ExperimentSpec:
    merged: dict = {}
    for layer in layers:
        merged.update(layer)

    def take(section, key, conv, default):
        if (section, key) not in merged:
            return default
        value, line = merged.pop((section, key))
        try:
            return conv(value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", path, line) from None

    kind = take("experiment", "kind", str, "single-run")
    if kind not in KINDS:
        raise ConfigError(f"unknown kind {kind!r}; expected one of {', '.join(KINDS)}", path)
    t_stop = take("experiment", "t_stop", lambda v: _conv_float(v, positive=True), 200.0)
    runs = take("experiment", "runs", lambda v: _conv_int(v, minimum=1), 200)
    base_seed = take("experiment", "base_seed", _conv_int, 12345)
    grid_dt = take("experiment", "grid_dt", lambda v: _conv_float(v, positive=True), 1.0)
    delayed = take("experiment", "delayed", _conv_bool, True)
    bins = take("experiment", "bins", lambda v: _conv_int(v, minimum=1), 200)
    thetas = take("experiment", "thetas", _conv_thetas, None)
    theta = take("experiment", "theta", lambda v: _conv_float(v, nonnegative=True), None)
    init_tumor = take("experiment", "init_tumor", lambda v: _conv_int(v, minimum=0), 1)
    init_eff = take("experiment", "init_effectors", lambda v: _conv_int(v, minimum=0), 0)
    init_il2 = take("experiment", "init_il2", lambda v: _conv_float(v, nonnegative=True), 0.0)
    erad_bin = take("experiment", "eradication_bin", lambda v: _conv_float(v, positive=True), 1.0)
    dde_step = take("experiment", "dde_step", lambda v: _conv_float(v, positive=True), 0.01)

    param_values = {}
    for name in _PARAM_KEYS:
        if ("params", name) in merged:
            value, line = merged.pop(("params", name))
            try:
                param_values[name] = _conv_float(value)
            except ValueError as exc:
                raise ConfigError(f"bad value for {name!r}: {exc}", path, line) from None
    assert not merged, "unparsed config keys survived validation"

    try:
        params = ModelParams(**param_values)
        if theta is not None:
            params = replace(params, recruitment_delay=theta)
        init = HybridState(init_tumor, init_eff, init_il2)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc), path) from None

    return ExperimentSpec(
        kind=kind,
        params=params,
        init=init,
        t_stop=t_stop,
        runs=runs,
        base_seed=base_seed,
        grid_dt=grid_dt,
        delayed=delayed,
        bins=bins,
        thetas=thetas,
        eradication_bin=erad_bin,
        dde_step=dde_step,
        threads=threads,
        out_dir=out_dir,
    )


def parse_config(path) -> ExperimentSpec:
    """Read one config file into a spec, with defaults for everything absent."""
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return _build_spec([_parse_config_text(text, p)], path=p)


def _fmt_cell(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int,)) or hasattr(v, "dtype") and v.dtype.kind in "iu":
        return str(int(v))
    return repr(float(v))


def _write_csv(path: Path, header: str, rows, written: list) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(_fmt_cell(c) for c in row) + "\n")
    written.append(path)


def _theta_tag(theta: float) -> str:
    return repr(float(theta))


def _sweep_thetas(spec: ExperimentSpec) -> tuple[float, ...]:
    if spec.thetas is not None:
        return spec.thetas
    if spec.kind == "sensitivity":
        return (0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0)
    if spec.kind == "bifurcation-scan":
        return (0.0, 1.5, 2.0, 3.0)
    return (spec.params.recruitment_delay,)


def _ensemble_config(spec: ExperimentSpec, theta: float, keep_samples: bool) -> EnsembleConfig:
    return EnsembleConfig(
        params=replace(spec.params, recruitment_delay=theta),
        init=spec.init,
        t_stop=spec.t_stop,
        runs=spec.runs,
        base_seed=spec.base_seed,
        grid_dt=spec.grid_dt,
        delayed=spec.delayed,
        keep_samples=keep_samples,
        threads=spec.threads,
    )


def _run_single(spec: ExperimentSpec, out: Path, written: list) -> dict:
    run = simulate_grid(
        spec.init,
        0.0,
        spec.t_stop,
        spec.params,
        derive_stream(spec.base_seed, 0),
        delayed=spec.delayed,
        grid_dt=spec.grid_dt,
    )
    _write_csv(
        out / "trajectory.csv",
        "t,T,E,I",
        zip(run.times, run.tumor, run.effectors, run.il2),
        written,
    )
    extras = {"reason": run.reason, "n_events": str(run.n_events)}
    if run.eradication_time is not None:
        extras["eradication_time"] = repr(run.eradication_time)
    return extras


def _run_ensemble_kind(spec: ExperimentSpec, out: Path, written: list) -> dict:
    extras = {}
    for theta in _sweep_thetas(spec):
        summary = run_ensemble(_ensemble_config(spec, theta, False))
        tag = _theta_tag(theta)
        _write_csv(
            out / f"mean_theta{tag}.csv",
            "t,T,E,I",
            zip(summary.times, summary.mean_tumor, summary.mean_effectors, summary.mean_il2),
            written,
        )
        dens = eradication_density(summary, spec.eradication_bin)
        _write_csv(
            out / f"density_theta{tag}.csv",
            "bin_start,mass",
            zip(dens.bin_starts, dens.mass),
            written,
        )
        extras[f"eradication_fraction_theta{tag}"] = repr(summary.eradication_fraction)
        if summary.capped_runs:
            extras[f"capped_runs_theta{tag}"] = str(summary.capped_runs)
    return extras


def _run_dde(spec: ExperimentSpec, out: Path, written: list) -> dict:
    init = (spec.init.tumor_cells, spec.init.effector_cells, spec.init.il2)
    for theta in _sweep_thetas(spec):
        params = replace(spec.params, recruitment_delay=theta)
        sol = integrate_dde(params, init, spec.t_stop, step=spec.dde_step)
        _write_csv(
            out / f"dde_theta{_theta_tag(theta)}.csv",
            "t,T,E,I",
            zip(sol.times, sol.tumor, sol.effectors, sol.il2),
            written,
        )
    return {}


def _run_sensitivity(spec: ExperimentSpec, out: Path, written: list) -> dict:
    thetas = _sweep_thetas(spec)
    if len(thetas) < 2:
        raise ConfigError("sensitivity needs at least two delay values in 'thetas'")
    summaries = [run_ensemble(_ensemble_config(spec, th, True)) for th in thetas]
    grid = build_density_grid(thetas, summaries, spec.bins)
    surface = sensitivity_surface(grid)
    header = "t," + ",".join(_theta_tag(th) for th in thetas)
    _write_csv(
        out / "sensitivity_surface.csv",
        header,
        (
            (surface.times[i], *surface.values[i])
            for i in range(surface.times.shape[0])
        ),
        written,
    )
    _write_csv(
        out / "sensitivity_curve.csv",
        "t,S",
        zip(surface.times, surface.integrated),
        written,
    )
    return {"max_tumor": repr(grid.max_tumor)}


def _run_bifurcation(spec: ExperimentSpec, out: Path, written: list) -> dict:
    rows = []
    for theta in _sweep_thetas(spec):
        summary = run_ensemble(_ensemble_config(spec, theta, False))
        n_erad = summary.eradication_times.shape[0]
        rows.append((theta, spec.runs, n_erad, summary.eradication_fraction))
    _write_csv(out / "bifurcation.csv", "theta,runs,eradicated,fraction", rows, written)
    return {}


_KIND_RUNNERS = {
    "single-run": _run_single,
    "ensemble": _run_ensemble_kind,
    "dde": _run_dde,
    "sensitivity": _run_sensitivity,
    "bifurcation-scan": _run_bifurcation,
}


def _write_manifest(path: Path, spec: ExperimentSpec, wall_seconds: float, extras: dict) -> None:
    lines = [
        "[meta]",
        f"version = {__version__}",
        f"created = {datetime.now(timezone.utc).isoformat(timespec='seconds')}",
        f"wall_seconds = {repr(round(wall_seconds, 3))}",
    ]
    lines.extend(f"{k} = {v}" for k, v in extras.items())
    lines.append("[experiment]")
    lines.append(f"kind = {spec.kind}")
    lines.append(f"t_stop = {repr(spec.t_stop)}")
    lines.append(f"runs = {spec.runs}")
    lines.append(f"base_seed = {spec.base_seed}")
    lines.append(f"grid_dt = {repr(spec.grid_dt)}")
    lines.append(f"delayed = {'true' if spec.delayed else 'false'}")
    lines.append(f"bins = {spec.bins}")
    if spec.thetas is not None:
        lines.append(f"thetas = {', '.join(repr(t) for t in spec.thetas)}")
    lines.append(f"init_tumor = {spec.init.tumor_cells}")
    lines.append(f"init_effectors = {spec.init.effector_cells}")
    lines.append(f"init_il2 = {repr(spec.init.il2)}")
    lines.append(f"eradication_bin = {repr(spec.eradication_bin)}")
    lines.append(f"dde_step = {repr(spec.dde_step)}")
    lines.append("[params]")
    for name in _PARAM_KEYS:
        lines.append(f"{name} = {repr(getattr(spec.params, name))}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def run_experiment(spec: ExperimentSpec) -> list:
    """Execute one experiment; returns the files written (manifest last).

    Output files from a failed run are removed before the exception leaves.
    """
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list = []
    started = time.perf_counter()
    try:
        extras = _KIND_RUNNERS[spec.kind](spec, out, written)
    except BaseException:
        for p in written:
            Path(p).unlink(missing_ok=True)
        raise
    wall = time.perf_counter() - started
    manifest = out / "manifest.txt"
    _write_manifest(manifest, spec, wall, extras)
    written.append(manifest)
    return written


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _build_arg_parser() -> _Parser:
    parser = _Parser(
        prog="tisim",
        description="Stochastic and mean-field experiments on the delayed tumor-immune model.",
    )
    parser.add_argument("--preset", choices=sorted(PRESETS), help="named experiment preset")
    parser.add_argument("--config", help="config file path (overrides preset values)")
    parser.add_argument("--seed", type=int, help="base seed (overrides config)")
    parser.add_argument("--runs", type=int, help="ensemble size (overrides config)")
    parser.add_argument("--threads", type=int, default=1, help="worker threads for ensembles")
    parser.add_argument("--out", default="out", help="output directory (default: out)")
    return parser


def main(argv=None) -> int:
    try:
        args = _build_arg_parser().parse_args(argv)
        layers = []
        if args.preset:
            layers.append(_as_layer(PRESETS[args.preset]))
        config_path = None
        if args.config:
            config_path = Path(args.config)
            try:
                text = config_path.read_text(encoding="utf-8")
            except OSError as exc:
                raise ConfigError(f"cannot read config: {exc}") from None
            layers.append(_parse_config_text(text, config_path))
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        if args.runs is not None and args.runs < 1:
            raise ConfigError("--runs must be at least 1")
        spec = _build_spec(layers, threads=args.threads, out_dir=args.out, path=config_path)
        if args.seed is not None:
            spec = replace(spec, base_seed=args.seed)
        if args.runs is not None:
            spec = replace(spec, runs=args.runs)
    except ConfigError as exc:
        print(f"tisim: error: {exc}", file=sys.stderr)
        return 1

    try:
        files = run_experiment(spec)
    except ConfigError as exc:
        print(f"tisim: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"tisim: failed: {exc}", file=sys.stderr)
        return 2
    for f in files:
        print(f)
    return 0


if __name__ == "__main__":
    sys.exit(main())
