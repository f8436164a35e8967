"""Command-line front end.

Every subcommand takes ``--config FILE`` (``key = value`` lines; keys are
the long option names with dashes or underscores) and ``--seed``.  Explicit
flags override the file, which overrides the defaults.  The fully resolved
configuration is embedded in every output file.

Exit codes: 0 success, 1 validation error, 2 numerical failure.  Errors are
reported on standard error as one JSON record.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .exceptions import (AccuracyError, DegeneracyError, DivergenceError, DomainError, FitError, FormatError,
                         QwteError, RangeError, StiffnessError, ValidityError)

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2
_NUMERICAL = (AccuracyError, DegeneracyError, DivergenceError, RangeError, StiffnessError)
_VALIDATION = (DomainError, ValidityError, FitError, FormatError)
CONFIG_VERSION = 1


class ConfigError(QwteError, ValueError):
    """Bad command line or configuration file."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


# parameter tables: name -> (type, default, help) ------------------------------------------

def _floats(text):
    try:
        return [float(v) for v in str(text).replace(" ", "").split(",") if v]
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _pair(text):
    vals = _floats(text)
    if len(vals) != 2:
        raise ConfigError(f"expected two comma-separated numbers, got {text!r}")
    return tuple(vals)


def _int(text):
    return int(float(text))


GRID = {
    "n_nodes": (_int, 200, "grid points"),
    "x_max": (float, 40.0, "largest node"),
    "per_octave": (_int, 10, "nodes per factor two"),
}
NEWTON = {
    "max_iter": (_int, 30, "Newton iterations per solve"),
    "tol": (float, 1e-12, "row-scaled residual target"),
}
INITIAL = {
    "profile": (str, None, "initial state from a profile file (reconstructed at t=0)"),
    "total_mass": (float, None, "total mass for --profile (default twice the profile mass)"),
    "bump_center": (float, 1.0, "Gaussian bump centre"),
    "bump_width": (float, 0.1, "Gaussian bump width"),
    "mass": (float, 1.0, "bump mass"),
    "x_min": (float, 1e-3, "smallest node of the bump grid"),
    "x_max": (float, 64.0, "largest node of the bump grid"),
    "per_octave": (_int, 8, "bump grid nodes per factor two"),
    "t_end": (float, 1.0, "final time"),
    "samples": (_int, 21, "equispaced output times"),
    "test_nodes": (_floats, None, "hinge positions reported (comma list)"),
    "origin_threshold": (float, 1e-6, "sizes below it join the atom"),
}

COMMANDS = {
    "solve": ("solve the profile equation", {
        "rho": (float, 2.0, "scaling exponent in (1, 2]"),
        "mass": (float, 1.0, "target profile mass"),
        "basis": (str, "sqrt", "basis kind"),
        **GRID, **NEWTON,
        "out": (str, None, "profile file to write (required)"),
    }),
    "continue": ("continuation in rho from the rho=2 profile", {
        "rho_end": (float, 1.9, "final exponent"),
        "steps": (_int, 5, "continuation steps"),
        "mass": (float, 1.0, "target profile mass"),
        **GRID, **NEWTON,
        "out_dir": (str, None, "directory for one profile per step (required)"),
    }),
    "evolve": ("deterministic time evolution", {
        **INITIAL,
        "rtol": (float, 1e-8, "Runge-Kutta relative tolerance"),
        "atol": (float, 1e-13, "Runge-Kutta absolute tolerance"),
        "out": (str, None, "trajectory CSV (required)"),
    }),
    "mc": ("particle (Monte Carlo) evolution", {
        **INITIAL,
        "particles": (_int, 100000, "particles per replica"),
        "replicas": (_int, 1, "independent replicas"),
        "max_events": (_int, 10**9, "event budget per replica"),
        "log_events": (_int, 0, "leading events kept in the event log"),
        "events_out": (str, None, "event log (JSON lines) of the first replica"),
        "out": (str, None, "trajectory CSV (required)"),
    }),
    "reconstruct": ("states of the self-similar solution", {
        "profile": (str, None, "profile file (required)"),
        "total_mass": (float, None, "total mass (default twice the profile mass)"),
        "times": (_floats, [0.0, 0.5, 1.0], "times (comma list)"),
        "test_nodes": (_floats, None, "hinge positions (default: every 10th node)"),
        "weak_residual": (_int, 0, "also report the weak-identity defect (1 = yes)"),
        "out": (str, None, "CSV (required)"),
    }),
    "fit": ("head and tail fits of a profile", {
        "profile": (str, None, "profile file (required)"),
        "head_window": (_pair, None, "head window lo,hi (default 2*x_1,1e-2)"),
        "tail_window": (_pair, None, "tail window lo,hi (default 8,16 or the last decade)"),
        "power_tail_csv": (str, None, "fat-tail dataset CSV, z / phi / model (rho < 2)"),
        "exp_tail_csv": (str, None, "exponential-tail dataset CSV, z / phi / models (rho = 2)"),
        "out": (str, None, "report JSON"),
    }),
    "sweep": ("decay rate against mass", {
        "masses": (_floats, [0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6, 1.8, 2.0], "target masses (comma list)"),
        "tail_window": (_pair, (8.0, 16.0), "tail window lo,hi"),
        "workers": (_int, 1, "process-pool size"),
        **GRID,
        "out": (str, None, "CSV of M, 1/a and the regression line (required)"),
        "report": (str, None, "report JSON"),
    }),
    "verify-kernels": ("closed-form kernels against numerical oracles", {
        "quadruples": (_int, 200, "random resonant quadruples"),
        "tol": (float, 1e-6, "absolute agreement required"),
        "out": (str, None, "table CSV"),
    }),
}
REQUIRED = {"solve": ["out"], "continue": ["out_dir"], "evolve": ["out"], "mc": ["out"],
            "reconstruct": ["profile", "out"], "fit": ["profile"], "sweep": ["out"]}


def build_parser():
    parser = _Parser(prog="qwte", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"qwte {__version__}")
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name, (help_text, table) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="key = value configuration file")
        p.add_argument("--seed", type=_int, default=None, help="random seed")
        for key, (typ, default, h) in table.items():
            p.add_argument("--" + key.replace("_", "-"), dest=key, type=typ, default=None,
                           help=f"{h} (default: {default})")
    return parser


def _read_config(path, table):
    text = Path(path).read_text()
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
    try:
        cp.read_string("[qwte]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config file {path}: {exc}") from None
    out = {}
    for key, raw in cp["qwte"].items():
        k = key.strip().replace("-", "_")
        if k == "seed":
            out[k] = _int(raw)
            continue
        if k not in table:
            raise ConfigError(f"unknown configuration key {key!r}")
        try:
            out[k] = table[k][0](raw.strip())
        except (TypeError, ValueError):
            raise ConfigError(f"bad value for {key!r}: {raw!r}") from None
    return out


def resolve_config(args):
    """Defaults, then the config file, then explicit flags."""
    table = COMMANDS[args.command][1]
    cfg = {k: v[1] for k, v in table.items()}
    cfg["seed"] = None
    if args.config:
        cfg.update(_read_config(args.config, table))
    for k in list(table) + ["seed"]:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    missing = [k for k in REQUIRED.get(args.command, []) if cfg.get(k) is None]
    if missing:
        raise ConfigError("missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))
    cfg = {k: (list(v) if isinstance(v, tuple) else v) for k, v in cfg.items()}
    return {"command": args.command, "format_version": CONFIG_VERSION, **cfg}


# helpers -------------------------------------------------------------------------------------

def _grid(cfg):
    from .mesh import Grid

    return Grid.dyadic(cfg["x_max"], cfg["n_nodes"], cfg["per_octave"])


def _report_dict(rep):
    d = rep.as_dict()
    d.pop("seconds", None)
    for s in d.get("stages", []):
        s.pop("seconds", None)
    return d


def _emit(obj):
    from .io import dumps_config

    sys.stdout.write(dumps_config(obj) + "\n")


def _initial_state(cfg):
    from .evolver import bump_state
    from .io import load_profile
    from .selfsim import SelfSimilarSolution, reconstruct

    if cfg["profile"]:
        prof, info = load_profile(cfg["profile"])
        M = cfg["total_mass"] if cfg["total_mass"] is not None else 2.0 * prof.mass()
        return reconstruct(SelfSimilarSolution(info["rho"], M, prof), 0.0)
    return bump_state(cfg["bump_center"], cfg["bump_width"], cfg["mass"], x_min=cfg["x_min"], x_max=cfg["x_max"],
                      per_octave=cfg["per_octave"])


def _evolver_config(cfg, backend):
    from .evolver import EvolverConfig

    extra = {}
    if backend == "monte-carlo":
        extra = dict(replicas=cfg["replicas"], particles=cfg["particles"], max_events=cfg["max_events"],
                     log_events=cfg["log_events"])
    else:
        extra = dict(rtol=cfg["rtol"], atol=cfg["atol"])
    ts = tuple(np.linspace(0.0, cfg["t_end"], max(cfg["samples"], 2)))
    tn = tuple(cfg["test_nodes"]) if cfg["test_nodes"] else None
    return EvolverConfig(cfg["t_end"], ts, origin_threshold=cfg["origin_threshold"], backend=backend,
                         test_nodes=tn, seed=cfg["seed"], **extra)


def _write_trajectory(path, rec, cfg):
    from .io import write_csv

    cols = rec.columns()
    write_csv(path, list(cols), np.column_stack(list(cols.values())), cfg)


# subcommands -----------------------------------------------------------------------------------

def cmd_solve(cfg):
    from .io import save_profile
    from .sspe import solve_profile

    prof, rep = solve_profile(cfg["mass"], cfg["rho"], _grid(cfg), cfg["basis"], max_iter=cfg["max_iter"],
                              tol=cfg["tol"])
    meta = {"config": cfg, "report": _report_dict(rep)}
    save_profile(cfg["out"], prof, cfg["rho"], meta)
    _emit({"out": cfg["out"], "converged": rep.converged, "iterations": rep.total_iterations,
           "residual_inf": rep.residual_inf, "mass": prof.mass(), "energy": prof.energy()})


def cmd_continue(cfg):
    from .io import save_profile
    from .sspe import continuation_in_rho

    fam = continuation_in_rho(cfg["rho_end"], cfg["steps"], mass=cfg["mass"], grid=_grid(cfg),
                              max_iter=cfg["max_iter"], tol=cfg["tol"])
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for rho, prof, rep in zip(fam.rhos, fam.profiles, fam.reports):
        f = out / f"profile_rho{rho:.6f}.profile"
        save_profile(f, prof, rho, {"config": cfg, "report": _report_dict(rep)})
        files.append(str(f))
    _emit({"files": files, "complete": fam.complete, "failed_rho": fam.failed_rho})
    if not fam.complete:
        raise DivergenceError(f"continuation stopped at rho={fam.failed_rho:.6g}: {fam.error}")


def cmd_evolve(cfg):
    from .evolver import check_trajectory, evolve

    rec = evolve(_initial_state(cfg), _evolver_config(cfg, "deterministic"))
    _write_trajectory(cfg["out"], rec, cfg)
    _emit({"out": cfg["out"], "checks": check_trajectory(rec)})


def cmd_mc(cfg):
    from .evolver import mc_run
    from .io import dumps_config

    rec = mc_run(_initial_state(cfg), _evolver_config(cfg, "monte-carlo"))
    _write_trajectory(cfg["out"], rec, cfg)
    if cfg["events_out"] and rec.event_log is not None:
        # line-delimited records; outcome 1 = sum, 0 = difference
        lines = [dumps_config({"config": cfg})]
        lines += [dumps_config({"time": float(e["time"]), "i": int(e["i"]), "j": int(e["j"]),
                                "outcome": int(e["outcome"])}) for e in rec.event_log]
        Path(cfg["events_out"]).write_text("\n".join(lines) + "\n")
    _emit({"out": cfg["out"], "events": rec.events.tolist(), "particles": rec.info["particles"],
           "replicas": rec.info["replicas"]})


def cmd_reconstruct(cfg):
    from .io import load_profile, write_csv
    from .selfsim import SelfSimilarSolution, reconstruct, weak_residual_of_reconstruction

    prof, info = load_profile(cfg["profile"])
    M = cfg["total_mass"] if cfg["total_mass"] is not None else 2.0 * prof.mass()
    sol = SelfSimilarSolution(info["rho"], M, prof)
    z = np.asarray(cfg["test_nodes"] if cfg["test_nodes"] else prof.nodes[::10], dtype=float)
    rows = []
    for t in cfg["times"]:
        st = reconstruct(sol, t)
        rows.append([t, st.atom, st.density.mass(), st.density.energy(), *st.tested_moments(z)])
    header = ["t", "atom", "density_mass", "energy"] + [f"psi[{v:.17g}]" for v in z]
    write_csv(cfg["out"], header, rows, cfg)
    summary = {"out": cfg["out"], "valid": sol.valid, "atom0": float(sol.atom(0.0))}
    if cfg["weak_residual"]:
        res = weak_residual_of_reconstruction(sol, cfg["times"], z)
        summary["weak_residual"] = res["relative"]
    _emit(summary)


def cmd_fit(cfg):
    from .asymptotics import TAIL_WINDOW, exponential_tail_rows, power_tail_rows, fit_head, fit_tail_exponential, fit_tail_powerlaw
    from .io import load_profile, write_csv

    prof, info = load_profile(cfg["profile"])
    rho = info["rho"]
    head = fit_head(prof, cfg["head_window"], rho)
    if rho == 2.0:
        tail = fit_tail_exponential(prof, cfg["tail_window"] or TAIL_WINDOW)
        if cfg["exp_tail_csv"]:
            write_csv(cfg["exp_tail_csv"], *exponential_tail_rows(prof, tail), cfg)
    else:
        tail = fit_tail_powerlaw(prof, rho, cfg["tail_window"])
        if cfg["power_tail_csv"]:
            write_csv(cfg["power_tail_csv"], *power_tail_rows(prof, rho, tail), cfg)
    tail_d = {k: v for k, v in tail.__dict__.items() if k != "residual"}
    tail_d["residual_curve"] = np.column_stack(tail.residual).tolist()
    report = {"config": cfg, "head": head.__dict__, "tail": tail_d}
    if cfg["out"]:
        from .io import dumps_config

        Path(cfg["out"]).write_text(dumps_config(report) + "\n")
    _emit({"head": head.__dict__, "tail": {k: v for k, v in tail_d.items() if k != "residual_curve"}})


def cmd_sweep(cfg):
    from .asymptotics import sweep_rows, mass_sweep
    from .io import dumps_config, write_csv

    rep = mass_sweep(cfg["masses"], window=tuple(cfg["tail_window"]), n_nodes=cfg["n_nodes"], x_max=cfg["x_max"],
                     per_octave=cfg["per_octave"], workers=cfg["workers"])
    if rep.entries:
        write_csv(cfg["out"], *sweep_rows(rep), cfg)
    summary = {"slope": rep.slope, "intercept": rep.intercept, "r2": rep.r2,
               "entries": [{**e.__dict__, "inverse_rate": e.inverse_rate, "rate_times_mass": e.rate_times_mass}
                           for e in rep.entries],
               "failures": rep.failures}
    if rep.entries:
        summary["rate_mass_spread"] = rep.rate_mass_spread()
    if cfg["report"]:
        Path(cfg["report"]).write_text(dumps_config({"config": cfg, **summary}) + "\n")
    _emit(summary)
    if not rep.complete:
        raise DivergenceError(f"{len(rep.failures)} sweep member(s) failed")


def cmd_verify_kernels(cfg):
    from .io import write_csv
    from .kernels import oracle_suite

    seed = cfg["seed"] if cfg["seed"] is not None else 0
    rows = oracle_suite(cfg["quadruples"], seed)
    worst = max(r.error for r in rows)
    lines = [f"{'check':<24} {'closed':>24} {'oracle':>24} {'abs err':>10}"]
    lines += [f"{r.name:<24} {r.closed:>24.17g} {r.oracle:>24.17g} {r.error:>10.2e}" for r in rows]
    sys.stdout.write("\n".join(lines) + "\n")
    if cfg["out"]:
        write_csv(cfg["out"], ["index", "closed", "oracle", "error"],
                  [[k, r.closed, r.oracle, r.error] for k, r in enumerate(rows)], cfg)
    sys.stdout.write(f"worst error {worst:.3e}; tolerance {cfg['tol']:.1e}\n")
    if worst > cfg["tol"]:
        raise AccuracyError("kernel oracle disagreement above tolerance", estimate=worst, error=worst)


HANDLERS = {"solve": cmd_solve, "continue": cmd_continue, "evolve": cmd_evolve, "mc": cmd_mc,
            "reconstruct": cmd_reconstruct, "fit": cmd_fit, "sweep": cmd_sweep,
            "verify-kernels": cmd_verify_kernels}


def _error_record(exc, code):
    rec = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    est = getattr(exc, "estimate", None)
    if est is not None:
        rec["estimate"] = float(est)
    return json.dumps(rec, sort_keys=True)


def main(argv=None) -> int:
    """Run the CLI; returns the exit code."""
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise ConfigError("a subcommand is required")
        logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING))
        threads = os.environ.get("QWTE_THREADS")
        if threads:
            import numba

            numba.set_num_threads(min(int(threads), numba.config.NUMBA_NUM_THREADS))
        cfg = resolve_config(args)
        HANDLERS[args.command](cfg)
    except (ConfigError, *_VALIDATION, OSError) as exc:
        sys.stderr.write(_error_record(exc, EXIT_VALIDATION) + "\n")
        return EXIT_VALIDATION
    except (*_NUMERICAL, FloatingPointError, np.linalg.LinAlgError) as exc:
        sys.stderr.write(_error_record(exc, EXIT_NUMERICAL) + "\n")
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
