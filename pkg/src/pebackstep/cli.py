"""Command-line runner: JSON configs in, CSV series and a JSON report out.

A config is one JSON object with sections ``params``, ``scenario``, ``sim``,
``grid``, ``output`` and (for ``sweep``) ``sweep``.  Only ``params`` and
``scenario.tag`` are required; everything else has defaults::

    {
      "params":   {"rho": 0.3333, "alpha": 0.25, "beta": 0.5, "gamma": 0.25},
      "scenario": {"tag": "state-feedback", "c2": 0.8667,
                   "initial_w": "sin(pi x)", "initial_w_hat": "zero"},
      "sim":      {"dt": 0.001, "t_final": 10.0, "record_every": 10,
                   "integrator": "crank-nicolson"},
      "grid":     {"n_intervals": 128},
      "output":   {"directory": "runs/state_feedback", "states": true}
    }

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import analysis, kernels
from .model import (
    AdmissibilityError,
    DiscreteOperators,
    Grid,
    SystemParams,
    eigenvalue_analytic,
    is_open_loop_stable,
    rayleigh_check,
)
from .sim import Scenario, SimConfig, initial_profile, simulate

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_config", "run", "main"]

DEFAULT_N = 128

_SECTIONS = {"params", "scenario", "sim", "grid", "output", "sweep"}
_KEYS = {
    "params": {"rho", "alpha", "beta", "gamma"},
    "scenario": {"tag", "c2", "o2", "initial_w", "initial_w_hat"},
    "sim": {"dt", "t_final", "record_every", "integrator"},
    "grid": {"n_intervals"},
    "output": {"directory", "states"},
    "sweep": {"kind", "rhos", "start", "stop", "num"},
}
SWEEP_KINDS = ("controller", "observer-one")


class ConfigError(ValueError):
    """Invalid configuration; ``field`` is the dotted path of the culprit."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


@dataclass(frozen=True)
class SweepSpec:
    kind: str
    rhos: tuple
    start: float
    stop: float
    num: int

    def values(self):
        return np.linspace(self.start, self.stop, self.num)

    def as_dict(self):
        return {
            "kind": self.kind,
            "rhos": list(self.rhos),
            "start": self.start,
            "stop": self.stop,
            "num": self.num,
        }


@dataclass(frozen=True)
class RunConfig:
    params: SystemParams
    scenario: Scenario | None
    sim: SimConfig
    grid: Grid
    output_dir: Path
    write_states: bool = True
    sweep: SweepSpec | None = None

    def as_dict(self):
        return {
            "params": self.params.as_dict(),
            "scenario": None if self.scenario is None else self.scenario.as_dict(),
            "sim": self.sim.as_dict(),
            "grid": {"n_intervals": self.grid.n_intervals},
            "output": {"directory": str(self.output_dir), "states": self.write_states},
            "sweep": None if self.sweep is None else self.sweep.as_dict(),
        }


def _section(doc, name, required=False):
    sec = doc.get(name)
    if sec is None:
        if required:
            raise ConfigError(name, "section is required")
        return {}
    if not isinstance(sec, dict):
        raise ConfigError(name, "must be a JSON object")
    unknown = sorted(set(sec) - _KEYS[name])
    if unknown:
        raise ConfigError(f"{name}.{unknown[0]}", "unknown key")
    return sec


def _number(sec, section, key, default=None):
    val = sec.get(key, default)
    if val is None:
        return None
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{section}.{key}", f"must be a number, got {val!r}")
    if not math.isfinite(val):
        raise ConfigError(f"{section}.{key}", "must be finite")
    return float(val)


def parse_config(doc, default_output=None):
    """Validate a decoded JSON document into a :class:`RunConfig`."""
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    unknown = sorted(set(doc) - _SECTIONS)
    if unknown:
        raise ConfigError(unknown[0], "unknown section")

    p = _section(doc, "params", required=True)
    for key in ("rho", "alpha", "beta", "gamma"):
        if key not in p:
            raise ConfigError(f"params.{key}", "is required")
    vals = {k: _number(p, "params", k) for k in ("rho", "alpha", "beta", "gamma")}
    try:
        params = SystemParams(**vals)
    except AdmissibilityError as exc:
        raise ConfigError("params.gamma", str(exc)) from exc
    except ValueError as exc:
        raise ConfigError(f"params.{str(exc).split()[0]}", str(exc)) from exc

    sweep = None
    if "sweep" in doc:
        sw = _section(doc, "sweep")
        kind = sw.get("kind", "controller")
        if kind not in SWEEP_KINDS:
            raise ConfigError("sweep.kind", f"must be one of {SWEEP_KINDS}, got {kind!r}")
        rhos = sw.get("rhos", [params.rho])
        if not isinstance(rhos, list) or not rhos:
            raise ConfigError("sweep.rhos", "must be a non-empty list of numbers")
        rhos = tuple(_number({"rhos": r}, "sweep", "rhos") for r in rhos)
        start = _number(sw, "sweep", "start", 0.01)
        stop = _number(sw, "sweep", "stop", 5.0)
        num = sw.get("num", 100)
        if isinstance(num, bool) or not isinstance(num, int) or num < 1:
            raise ConfigError("sweep.num", f"must be a positive integer, got {num!r}")
        if not 0 < start <= stop:
            raise ConfigError("sweep.start", "need 0 < start <= stop")
        if params.gamma <= 0:
            raise ConfigError("params.gamma", "condition sweeps need gamma > 0")
        sweep = SweepSpec(kind, rhos, start, stop, num)

    scenario = None
    if "scenario" in doc or sweep is None:
        s = _section(doc, "scenario", required=True)
        if "tag" not in s:
            raise ConfigError("scenario.tag", "is required")
        kwargs = {"tag": s["tag"]}
        for key in ("c2", "o2"):
            if key in s:
                kwargs[key] = _number(s, "scenario", key)
        for key in ("initial_w", "initial_w_hat"):
            if key in s:
                kwargs[key] = s[key]
        try:
            scenario = Scenario(**kwargs)
        except ValueError as exc:
            raise ConfigError("scenario", str(exc)) from exc

    g = _section(doc, "grid")
    n_int = g.get("n_intervals", DEFAULT_N)
    try:
        grid = Grid(n_int)
    except (TypeError, ValueError) as exc:
        raise ConfigError("grid.n_intervals", str(exc)) from exc
    try:
        DiscreteOperators(params, grid)
    except AdmissibilityError as exc:
        raise ConfigError("params.gamma", str(exc)) from exc

    sm = _section(doc, "sim")
    sim_kwargs = {}
    for key in ("dt", "t_final"):
        if key in sm:
            sim_kwargs[key] = _number(sm, "sim", key)
    if "record_every" in sm:
        sim_kwargs["record_every"] = sm["record_every"]
    if "integrator" in sm:
        sim_kwargs["integrator"] = sm["integrator"]
    try:
        sim = SimConfig(**sim_kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"sim.{str(exc).split()[0]}", str(exc)) from exc

    if scenario is not None:
        for key in ("initial_w", "initial_w_hat"):
            try:
                initial_profile(getattr(scenario, key), grid)
            except ValueError as exc:
                raise ConfigError(f"scenario.{key}", str(exc)) from exc

    out = _section(doc, "output")
    directory = out.get("directory", default_output or "runs/output")
    if not isinstance(directory, str) or not directory:
        raise ConfigError("output.directory", "must be a non-empty string")
    states = out.get("states", True)
    if not isinstance(states, bool):
        raise ConfigError("output.states", "must be true or false")
    return RunConfig(params, scenario, sim, grid, Path(directory), states, sweep)


def load_config(path):
    """Read and validate a JSON config file.

    Defaults: ``N = 128``, ``dt = 1e-3``, Crank-Nicolson, ``t_final = 10``,
    output to ``runs/<config stem>``.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"JSON parse error at line {exc.lineno}: {exc.msg}") from exc
    return parse_config(doc, default_output=f"runs/{path.stem}")


# ---------------------------------------------------------------------------
# serialization


def fmt(x):
    return f"{float(x):.17g}"


def _write_table(path, header, rows):
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(c) for c in row) + "\n")


def condition_reports(config):
    """Conditions relevant to the configured scenario, as plain dicts."""
    params, scen = config.params, config.scenario
    out = {}
    if scen is None:
        return out
    if scen.c2 is not None and scen.tag != "open-loop":
        if params.gamma > 0:
            for mode in ("bounds", "quadrature"):
                rep = analysis.check_controller_condition(scen.c2, params, mode=mode)
                d = rep.as_dict()
                d["c3"] = rep.margin
                out[f"controller[{mode}]"] = d
        else:
            out["controller"] = {"skipped": "needs gamma > 0"}
    if scen.observer_kind == "two":
        out["observer_two_measurements"] = analysis.check_observer2_condition(
            scen.o2, params
        ).as_dict()
    elif scen.observer_kind == "one":
        if params.gamma > 0:
            for key, rep in analysis.check_observer1_condition(scen.o2, params).items():
                out[f"observer_one_measurement[{key}]"] = rep.as_dict()
        else:
            out["observer_one_measurement"] = {"skipped": "needs gamma > 0"}
    return out


def _decay(times, norms):
    try:
        return analysis.fit_decay_rate(times, norms).as_dict()
    except ValueError as exc:
        return {"error": str(exc)}


def run(config):
    """Simulate ``config.scenario`` and write ``norms.csv``, ``states.csv``, ``report.json``.

    Returns the :class:`~pebackstep.sim.TimeSeries`.
    """
    if config.scenario is None:
        raise ConfigError("scenario", "simulate needs a scenario section")
    ops = DiscreteOperators(config.params, config.grid)
    series = simulate(config.scenario, config.params, config.sim, ops=ops, check_conditions=False)
    outdir = config.output_dir
    outdir.mkdir(parents=True, exist_ok=True)

    has_obs = series.w_hat is not None
    cols = [series.times, series.norm_w, series.norm_v]
    header = ["t", "norm_w", "norm_v"]
    if has_obs:
        cols += [series.norm_ew, series.norm_ev]
        header += ["norm_ew", "norm_ev"]
    cols.append(series.u)
    header.append("u")
    _write_table(outdir / "norms.csv", header, zip(*cols))

    if config.write_states:
        header = ["t", "x", "w", "v"] + (["w_hat", "v_hat"] if has_obs else [])
        x = config.grid.x

        def rows():
            for k, t in enumerate(series.times):
                fields = [np.full_like(x, t), x, series.w[k], series.v[k]]
                if has_obs:
                    fields += [series.w_hat[k], series.v_hat[k]]
                yield from zip(*fields)

        _write_table(outdir / "states.csv", header, rows())

    decay = {"norm_w": _decay(series.times, series.norm_w), "norm_v": _decay(series.times, series.norm_v)}
    if has_obs:
        decay["norm_ew"] = _decay(series.times, series.norm_ew)
        decay["norm_ev"] = _decay(series.times, series.norm_ev)
    checks = {}
    scen = config.scenario
    if scen.tag == "state-feedback" and config.params.gamma > 0:
        checks["lyapunov"] = analysis.lyapunov_check(series, scen.c2, config.params).as_dict()
        checks["elliptic_bound"] = analysis.elliptic_bound_check(
            series, scen.c2, config.params
        ).as_dict()
    report = {
        "config": config.as_dict(),
        "open_loop_stability": is_open_loop_stable(config.params).as_dict(),
        "conditions": condition_reports(config),
        "decay": decay,
        "trajectory_checks": checks,
        "final": {
            "t": float(series.times[-1]),
            "norm_w": float(series.norm_w[-1]),
            "norm_v": float(series.norm_v[-1]),
        },
    }
    with open(outdir / "report.json", "w", newline="\n") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return series


# ---------------------------------------------------------------------------
# subcommands


def _cmd_simulate(args):
    config = load_config(args.config)
    if args.out:
        config = RunConfig(**{**config.__dict__, "output_dir": Path(args.out)})
    series = run(config)
    print(
        f"{config.scenario.tag}: t={series.times[-1]:g} |w|={series.norm_w[-1]:.6g} "
        f"|v|={series.norm_v[-1]:.6g} -> {config.output_dir}"
    )
    return 0


def _cmd_check(args):
    config = load_config(args.config)
    if config.scenario is None:
        raise ConfigError("scenario", "check needs a scenario section")
    report = {
        "open_loop_stability": is_open_loop_stable(config.params).as_dict(),
        "conditions": condition_reports(config),
    }
    json.dump(report, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    return 0


_TABLES = {
    "ka": kernels.table_ka,
    "la": kernels.table_la,
    "kb": kernels.table_kb,
    "lb": kernels.table_lb,
}


def _cmd_kernel(args):
    if not args.gain > 0:
        raise ConfigError("gain", "must be positive")
    try:
        grid = Grid(args.n_intervals)
    except ValueError as exc:
        raise ConfigError("grid", str(exc)) from exc
    table = _TABLES[args.which](args.gain, grid)
    if args.out:
        with open(args.out, "w", newline="\n") as fh:
            kernels.write_kernel_csv(table, fh)
    else:
        kernels.write_kernel_csv(table, sys.stdout)
    return 0


def _cmd_sweep(args):
    config = load_config(args.config)
    if config.sweep is None:
        raise ConfigError("sweep", "section is required for the sweep command")
    sw = config.sweep
    table = analysis.sweep_conditions(sw.kind, config.params, sw.rhos, sw.values())
    if args.out:
        with open(args.out, "w", newline="\n") as fh:
            table.write_csv(fh)
    else:
        table.write_csv(sys.stdout)
    return 0


def _cmd_eig(args):
    config = load_config(args.config)
    ops = DiscreteOperators(config.params, config.grid)
    print("n,lambda_analytic,rayleigh_discrete")
    for n in range(args.modes):
        lam = eigenvalue_analytic(n, config.params)
        try:
            ray = fmt(rayleigh_check(n, config.grid, ops))
        except ValueError:
            ray = "nan"
        print(f"{n},{fmt(lam)},{ray}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="pebackstep",
        description="Backstepping control and observers for a parabolic-elliptic PDE.",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("simulate", help="run a scenario and write CSV/JSON outputs")
    p.add_argument("config")
    p.add_argument("--out", help="output directory (overrides output.directory)")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("check", help="evaluate the sufficient gain conditions only")
    p.add_argument("config")
    p.set_defaults(func=_cmd_check)

    p = sub.add_parser("kernel", help="dump a kernel table as x,y,value CSV")
    p.add_argument("gain", type=float, help="design gain c2 (controller) or o2 (observer)")
    p.add_argument("n_intervals", type=int, help="number of grid intervals N")
    p.add_argument("--which", choices=sorted(_TABLES), default="ka")
    p.add_argument("--out", help="write to this file instead of stdout")
    p.set_defaults(func=_cmd_kernel)

    p = sub.add_parser("sweep", help="tabulate a gain condition over a range")
    p.add_argument("config")
    p.add_argument("--out", help="write to this file instead of stdout")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("eig", help="analytic and discrete Rayleigh eigenvalues")
    p.add_argument("config")
    p.add_argument("-m", "--modes", type=int, default=5, help="number of modes (default 5)")
    p.set_defaults(func=_cmd_eig)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on usage errors
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ArithmeticError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
