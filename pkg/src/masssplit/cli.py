"""Command line: configuration, pipeline orchestration and artifact files.

A run is described by one flat TOML document::

    potential = "reference"
    m = 0.8
    sigma0 = 0.2          # or ell_star = ...
    t_end = 60.0

Exit status: 0 success, 1 other anticipated failure, 2 configuration error,
3 stability violation, 4 contraction failure, 5 ordering violation,
6 no equilibrium before ``t_end``.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import (
    ConfigError,
    ContractionError,
    ConvergenceError,
    MassSplitError,
    OrderingError,
    StabilityError,
)
from .green import ConvolutionKernels, build_green, numeric_theta2, verify_green
from .longtime import SeriesTable, build_report, summary_lines
from .potential import (
    branch_expansion,
    make_potential,
    prepare,
    spinodal_chart,
    validate,
)
from .transport import run
from .wellposed import AsymptoticParams, seed_ensemble, solve_phi

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_CONFIG = 2
EXIT_STABILITY = 3
EXIT_CONTRACTION = 4
EXIT_ORDERING = 5
EXIT_CONVERGENCE = 6

_EXIT_BY_TYPE = (
    (ConfigError, EXIT_CONFIG),
    (StabilityError, EXIT_STABILITY),
    (ContractionError, EXIT_CONTRACTION),
    (OrderingError, EXIT_ORDERING),
    (ConvergenceError, EXIT_CONVERGENCE),
)

_MODULE_TAG = {
    StabilityError: "potential",
    ContractionError: "wellposed",
    OrderingError: "transport",
    ConvergenceError: "longtime",
    ConfigError: "cli",
}


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration; see :func:`parse_config` for the keys."""

    m: float
    potential: str = "reference"
    potential_params: Dict[str, float] = field(default_factory=dict)
    sigma0: Optional[float] = None
    ell_star: Optional[float] = None
    t0: float = -10.0
    delta: Optional[float] = None
    M: float = 10.0
    dt: float = 1e-3
    nodes: int = 129
    t_end: float = 60.0
    cadence: float = 0.1
    tol: float = 1e-10
    inner_tol: float = 1e-12
    tol_D: float = 1e-8
    window: float = 5.0
    eta: Optional[float] = None
    constraint_tol: float = 1e-4
    out: str = "out"

    def launch_params(self) -> AsymptoticParams:
        return AsymptoticParams(
            t0=self.t0,
            delta=self.delta,
            M=self.M,
            dt=self.dt,
            nodes=self.nodes,
            tol=self.tol,
            inner_tol=self.inner_tol,
        )


_FLOAT_KEYS = {"m", "sigma0", "ell_star", "t0", "delta", "M", "dt", "t_end", "cadence", "tol", "inner_tol", "tol_D", "window", "eta", "constraint_tol"}
_POSITIVE = ("M", "dt", "cadence", "tol", "inner_tol", "tol_D", "window", "constraint_tol")


def _number(key: str, value: Any) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError(f"invalid value for '{key}': {value!r}")
    return float(value)


def parse_config(text: str) -> RunConfig:
    """Parse and validate a TOML run configuration, filling defaults.

    Raises:
        ConfigError: On syntax errors, unknown keys, invalid values or a
            missing ``m``.
    """
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid value: {exc}") from None
    known = {f.name for f in fields(RunConfig)}
    for key in doc:
        if key not in known:
            raise ConfigError(f"unknown key '{key}'")
    if "m" not in doc:
        raise ConfigError("missing required field 'm'")
    kw: Dict[str, Any] = {}
    for key, value in doc.items():
        if key in _FLOAT_KEYS:
            kw[key] = _number(key, value)
        elif key == "nodes":
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"invalid value for 'nodes': {value!r}")
            kw[key] = value
        elif key == "potential_params":
            if not isinstance(value, dict):
                raise ConfigError("invalid value for 'potential_params': expected a table")
            kw[key] = {k: _number(f"potential_params.{k}", v) for k, v in value.items()}
        elif key in ("potential", "out"):
            if not isinstance(value, str):
                raise ConfigError(f"invalid value for '{key}': {value!r}")
            kw[key] = value
    cfg = RunConfig(**kw)
    _check(cfg)
    return cfg


def _check(cfg: RunConfig) -> None:
    if not 0.0 < cfg.m <= 1.0:
        raise ConfigError("m must be in (0,1]")
    if (cfg.sigma0 is None) == (cfg.ell_star is None):
        raise ConfigError("give exactly one of 'sigma0' and 'ell_star'")
    if cfg.nodes < 33 or cfg.nodes % 2 == 0:
        raise ConfigError("node count must be odd ≥ 33")
    for key in _POSITIVE:
        if not getattr(cfg, key) > 0:
            raise ConfigError(f"invalid value: '{key}' must be positive")
    for key in ("delta", "eta"):
        v = getattr(cfg, key)
        if v is not None and not v > 0:
            raise ConfigError(f"invalid value: '{key}' must be positive")
    if not cfg.t0 < 0.0 < cfg.t_end:
        raise ConfigError("invalid value: need t0 < 0 < t_end")


def load_config(path: str) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None


# --- serialization ---------------------------------------------------------


def fmt(x: float) -> str:
    """17 significant digits, the contract for every artifact."""
    return format(float(x), ".17g")


def _json(obj: Any, indent: int = 0) -> str:
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f'{pad}"{k}": {_json(v, indent + 1)}' for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        return "[" + ", ".join(_json(v, indent + 1) for v in seq) + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        # JSON has no NaN or infinity
        return fmt(obj) if math.isfinite(obj) else "null"
    if isinstance(obj, str):
        return '"' + obj.replace("\\", "\\\\").replace('"', '\\"') + '"'
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_json(path: str, obj: Dict[str, Any]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_json(obj) + "\n")


def write_series(path: str, table: SeriesTable) -> None:
    names = list(table.columns)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for i in range(len(table)):
            w.writerow([fmt(table.columns[n][i]) for n in names])


# --- pipeline stages -------------------------------------------------------


def _model_and_chart(cfg: RunConfig):
    model = make_potential(cfg.potential, **cfg.potential_params)
    issues = validate(model)
    if issues:
        raise ConfigError("potential rejected: " + "; ".join(issues))
    return model, spinodal_chart(model)


def potential_artifact(cfg: RunConfig) -> Dict[str, Any]:
    model, chart = _model_and_chart(cfg)
    out: Dict[str, Any] = {"family": model.family, "params": dict(model.params), "chart": chart.as_dict()}
    try:
        out["expansion"] = branch_expansion(model, chart).as_dict()
    except MassSplitError as exc:
        out["expansion_error"] = str(exc)
    return out


def green_check(cfg: RunConfig) -> Dict[str, Any]:
    """Green's function checks for the kernels of the configured launch."""
    model, chart = _model_and_chart(cfg)
    data = prepare(model, chart, cfg.m, sigma0=cfg.sigma0, ell_star=cfg.ell_star)
    kernels = ConvolutionKernels(data.a, data.b, data.m)
    green = build_green(kernels)
    out = {
        "a": data.a,
        "b": data.b,
        "m": data.m,
        "theta2": green.theta2,
        "res_c1": green.res_c1,
        "res_c2": green.res_c2,
        "anomaly": green.anomaly,
        "verify_error": verify_green(green),
    }
    if data.m < 1:
        out["theta2_numeric"] = numeric_theta2(kernels)
    return out


def launch(cfg: RunConfig):
    """Prepare, solve the launch fixed point and seed the ensemble."""
    model, chart = _model_and_chart(cfg)
    data = prepare(model, chart, cfg.m, sigma0=cfg.sigma0, ell_star=cfg.ell_star)
    params = cfg.launch_params()
    state = solve_phi(model, data, params)
    profile, ens = seed_ensemble(model, data, params, state)
    return model, chart, data, state, profile, ens


def launch_artifact(data, state, profile, ens, samples: int = 401) -> Dict[str, Any]:
    t = state.phi.t
    idx = np.unique(np.linspace(0, t.size - 1, samples).round().astype(int))
    return {
        "data": data.as_dict(),
        "iterations": state.iterations,
        "contraction_ratio": state.ratio,
        "differences": list(state.diffs),
        "residual": state.residual,
        "phi_norm": state.norm,
        "theta2": state.theta2,
        "delta": state.delta,
        "class_checks": profile.class_checks,
        "clamped": profile.clamped,
        "t0": ens.t,
        "sigma_t0": data.sigma0 + float(state.phi.values[-1]),
        "phi": {"t": t[idx], "values": state.phi.values[idx]},
        "seed": {"K": ens.K, "X": ens.X, "x_minus": ens.x_minus, "x_plus": ens.x_plus, "jacobian": ens.jacobian},
    }


def _report_dict(report, data) -> Dict[str, Any]:
    out = report.as_dict()
    out["ell_star"] = data.ell_star
    out["m"] = data.m
    return out


def pipeline(cfg: RunConfig, out_dir: Optional[str] = None, echo=print) -> int:
    """Run prepare, launch, transport and report, writing all artifacts.

    Returns:
        The exit status; exceptions of anticipated kinds are mapped, not raised.
    """
    out_dir = out_dir or cfg.out
    try:
        os.makedirs(out_dir, exist_ok=True)
        write_json(os.path.join(out_dir, "potential.json"), potential_artifact(cfg))
        model, chart, data, state, profile, ens = launch(cfg)
        write_json(os.path.join(out_dir, "launch.json"), launch_artifact(data, state, profile, ens))
        series = run(ens, model, chart, cfg.t_end, dt=cfg.dt, cadence=cfg.cadence)
        table = SeriesTable.from_series(series)
        write_series(os.path.join(out_dir, "series.csv"), table)
        report = build_report(table, model, chart, data.m, data.ell_star, cfg.tol_D, cfg.window, cfg.eta, cfg.constraint_tol)
        write_json(os.path.join(out_dir, "equilibrium.json"), _report_dict(report, data))
        for line in summary_lines(report):
            echo(line)
        return EXIT_OK
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes below
        return _fail(exc, echo)


def _fail(exc: Exception, echo=print) -> int:
    for cls, code in _EXIT_BY_TYPE:
        if isinstance(exc, cls):
            echo(f"error [{_MODULE_TAG[cls]}]: {exc}")
            return code
    if isinstance(exc, (MassSplitError, ValueError, OSError)):
        echo(f"error: {exc}")
        return EXIT_OTHER
    raise exc


# --- subcommands -----------------------------------------------------------


def _cmd_check(cfg: RunConfig, out_dir: str) -> int:
    model, chart = _model_and_chart(cfg)
    print("potential: ok")
    for k, v in chart.as_dict().items():
        print(f"  {k} = {fmt(v)}")
    g = green_check(cfg)
    print(f"green: theta2 = {fmt(g['theta2'])}, verify error = {g['verify_error']:.3g}")
    return EXIT_OK


def _cmd_green(cfg: RunConfig, out_dir: str) -> int:
    g = green_check(cfg)
    for k, v in g.items():
        print(f"{k} = {fmt(v) if isinstance(v, float) else v}")
    return EXIT_OK


def _cmd_fixpoint(cfg: RunConfig, out_dir: str) -> int:
    os.makedirs(out_dir, exist_ok=True)
    write_json(os.path.join(out_dir, "potential.json"), potential_artifact(cfg))
    model, chart, data, state, profile, ens = launch(cfg)
    write_json(os.path.join(out_dir, "launch.json"), launch_artifact(data, state, profile, ens))
    print(f"converged in {state.iterations} iterations, ratio {state.ratio:.3g}, residual {state.residual:.3g}")
    return EXIT_OK


def _cmd_report(cfg: RunConfig, out_dir: str) -> int:
    model, chart = _model_and_chart(cfg)
    data = prepare(model, chart, cfg.m, sigma0=cfg.sigma0, ell_star=cfg.ell_star)
    table = SeriesTable.from_csv(os.path.join(out_dir, "series.csv"))
    report = build_report(table, model, chart, data.m, data.ell_star, cfg.tol_D, cfg.window, cfg.eta, cfg.constraint_tol)
    write_json(os.path.join(out_dir, "equilibrium.json"), _report_dict(report, data))
    for line in summary_lines(report):
        print(line)
    return EXIT_OK


def _sweep_one(path: str, out_root: str) -> int:
    stem = os.path.splitext(os.path.basename(path))[0]
    try:
        cfg = load_config(path)
    except ConfigError as exc:
        print(f"{path}: error [cli]: {exc}")
        return EXIT_CONFIG
    return pipeline(cfg, os.path.join(out_root, stem), echo=lambda s: print(f"{stem}: {s}"))


def _cmd_sweep(paths: Sequence[str], out_root: str, jobs: int) -> int:
    if jobs <= 1:
        codes = [_sweep_one(p, out_root) for p in paths]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            codes = list(pool.map(_sweep_one, paths, [out_root] * len(paths)))
    for p, c in zip(paths, codes):
        print(f"{p}: exit {c}")
    return max(codes) if codes else EXIT_OK


_COMMANDS = {
    "check": _cmd_check,
    "green-check": _cmd_green,
    "fixpoint": _cmd_fixpoint,
    "report": _cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="masssplit", description="Mass-splitting transport runs and diagnostics.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("check", "validate the potential, its spinodal chart and the Green's function"),
        ("green-check", "closed-form against numeric Green's function for the configured launch"),
        ("fixpoint", "solve the launch fixed point; writes launch.json and potential.json"),
        ("simulate", "full pipeline; writes series.csv, equilibrium.json, launch.json, potential.json"),
        ("report", "rebuild equilibrium.json from an existing series.csv"),
    ):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", required=True, help="TOML run configuration")
        sp.add_argument("--out", default=None, help="output directory (default: 'out' key of the config)")
        if name == "simulate":
            sp.add_argument("--check", action="store_true", help="only validate, chart and green-check")
    sw = sub.add_parser("sweep", help="run several configurations in separate processes")
    sw.add_argument("--config", nargs="+", required=True, help="TOML run configurations")
    sw.add_argument("--out", required=True, help="root directory; each config writes to a subdirectory")
    sw.add_argument("--jobs", type=int, default=1, help="parallel processes")
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "sweep":
        return _cmd_sweep(args.config, args.out, args.jobs)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"error [cli]: {exc}")
        return EXIT_CONFIG
    out_dir = args.out or cfg.out
    if args.command == "simulate":
        if args.check:
            return _guarded(_cmd_check, cfg, out_dir)
        return pipeline(cfg, out_dir)
    return _guarded(_COMMANDS[args.command], cfg, out_dir)


def _guarded(fn, cfg: RunConfig, out_dir: str) -> int:
    try:
        return fn(cfg, out_dir)
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes
        return _fail(exc)


if __name__ == "__main__":
    sys.exit(main())
