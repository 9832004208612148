"""Command-line front end: analytic solve, Monte-Carlo runs, sweeps and maps.

Every command writes CSV (stdout or ``--out``) preceded by ``#`` comment
lines that record the version, command line, seed and every parameter.

Exit status: 0 on success, 1 for usage/configuration errors, 2 when the
fixed-point solver does not converge.
"""
from __future__ import annotations

import argparse
import csv
import io
import math
import subprocess
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .analytic import DomainError, NonConvergence, SolverFailure, analyze
from .config import (CONFIG_KEYS, InvalidParameter, NetworkConfig, SchemePolicy, from_flat, load_config,
                     validate)
from .simulator import outage_gain, outage_map, run_campaign

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGENCE = 0, 1, 2
DEFAULT_T_DB = (-5.0, 0.0, 5.0, 10.0, 15.0)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 by default; 2 is reserved for non-convergence
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def version_string() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _floats(text: str) -> list[float]:
    text = text.strip()
    if not text:
        return []
    try:
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _positive_int(text: str) -> int:
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if n < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return n


def _nonneg_int(text: str) -> int:
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if n < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return n


def _parse_set(items) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        try:
            out[key.strip()] = float(value) if value.strip().lower() not in ("none", "") else None
        except ValueError:
            raise UsageError(f"--set {key}: not a number: {value!r}") from None
    return out


def build_config(args) -> NetworkConfig:
    base = NetworkConfig.paper() if args.scale == "paper" else NetworkConfig.desk()
    cfg = load_config(args.config, base=base) if args.config else base
    overrides = _parse_set(getattr(args, "set", None))
    if overrides:
        cfg = from_flat(overrides, base=cfg)
    return validate(cfg)


def default_trials(args) -> int:
    if args.trials is not None:
        return args.trials
    return 10000 if args.scale == "paper" else 500


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return "" if math.isnan(x) else repr(float(x))
    return str(x)


def _without_out(argv):
    # the destination path does not affect content, so keep it out of the header
    out, skip = [], False
    for a in argv:
        if skip:
            skip = False
        elif a == "--out":
            skip = True
        elif not a.startswith("--out="):
            out.append(a)
    return out


def write_csv(path, header: list[str], rows: list[list], cfg: NetworkConfig, argv: list[str], seed=None):
    buf = io.StringIO()
    buf.write(f"# ehcell {version_string()}\n")
    buf.write(f"# command: ehcell {' '.join(_without_out(argv))}\n")
    if seed is not None:
        buf.write(f"# seed: {seed}\n")
    for key, value in cfg.to_flat().items():
        buf.write(f"# {key} = {value!r}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(x) for x in row])
    text = buf.getvalue()
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_analytic(args, argv) -> int:
    cfg = build_config(args)
    rep = analyze(cfg, threshold_db=args.thresholds_db, include_zero=not args.exclude_zero)
    sol = rep.solution
    levels = np.arange(len(sol.v))
    rows = [
        ["iterations", "", sol.iterations],
        ["residual", "", sol.residual],
        ["battery_mean", "", float(levels @ sol.v)],
        ["battery_p_empty", "", float(sol.v[0])],
        ["battery_p_full", "", float(sol.v[-1])],
        ["outage", "", rep.outage],
    ]
    rows += [["coverage", t, c] for t, c in zip(rep.threshold_db, rep.coverage)]
    if args.battery:
        rows += [["battery_pmf", int(l), float(p)] for l, p in zip(levels, sol.v)]
    write_csv(args.out, ["quantity", "x", "value"], rows, cfg, argv)
    return EXIT_OK


def _mc_rows(est, scheme: str, prefix: list) -> list[list]:
    rows = [prefix + [scheme, "outage", "", est.outage_prob, est.outage_stderr, est.mts],
            prefix + [scheme, "rejection", "", est.rejection_prob, est.rejection_stderr, est.associated]]
    cov, se = est.coverage, est.coverage_stderr
    rows += [prefix + [scheme, "coverage", t, c, s, est.sir_samples] for t, c, s in zip(est.thresholds_db, cov, se)]
    return rows


def cmd_simulate(args, argv) -> int:
    cfg = build_config(args)
    scheme = SchemePolicy.parse(args.scheme)
    trials = default_trials(args)
    est = run_campaign(cfg, scheme, trials, args.seed, slots=args.slots, warmup=args.warmup,
                       thresholds_db=args.thresholds_db)
    rows = _mc_rows(est, scheme.value, [])
    write_csv(args.out, ["scheme", "metric", "threshold_db", "mc_mean", "mc_stderr", "samples"], rows, cfg, argv,
              seed=args.seed)
    return EXIT_OK


@dataclass
class SweepSpec:
    """One swept axis: each grid value maps to a set of config overrides."""

    name: str
    values: list
    overrides: list  # one dict per value
    schemes: list
    thresholds_db: tuple = ()
    series: list = field(default_factory=lambda: [("", {})])  # extra fixed settings, e.g. broadcast cost
    t_axis: bool = False  # the grid is the SIR threshold itself


ALL_SCHEMES = ["A", "woA", "rtA", "ongrid"]


def figure_spec(name: str, cfg: NetworkConfig) -> SweepSpec:
    levels = cfg.levels
    if name == "fig4":
        ne = [1, 20, 40, 80]
        mean_units = 0.1 * levels
        return SweepSpec("burst_size", ne, [{"burst_size": n, "harvest_rate": mean_units / n} for n in ne],
                         ["A", "woA", "rtA"])
    if name == "fig5":
        r = [40.0, 50.0, 60.0, 70.0, 85.0]
        return SweepSpec("bs_radius_m", r, [{"bs_radius_m": x} for x in r], ALL_SCHEMES)
    if name == "fig6":
        p = [-70.0, -65.0, -60.0, -55.0, -50.0]
        return SweepSpec("p_rx_dbm", p, [{"p_rx_dbm": x} for x in p], ALL_SCHEMES)
    if name == "fig7":
        f = [0.1, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0]
        # broadcast costs are quoted for L = 1000 and rescaled to the configured resolution
        series = [(str(c), {"broadcast_cost_units": max(1, round(c * levels / 1000))}) for c in (5, 10, 20, 50)]
        return SweepSpec("slot_scale", f, [{"slot_scale": x} for x in f], ["A"], series=series)
    if name == "fig8":
        t = list(DEFAULT_T_DB)
        return SweepSpec("threshold_db", t, [{} for _ in t], ["A"], thresholds_db=tuple(t), t_axis=True)
    raise UsageError(f"unknown figure preset {name!r}")


def cmd_sweep(args, argv) -> int:
    cfg = build_config(args)
    if args.figure:
        spec = figure_spec(args.figure, cfg)
    else:
        if not args.param or args.values is None:
            raise UsageError("sweep needs --figure or both --param and --values")
        if args.param not in CONFIG_KEYS:
            raise UsageError(f"unknown parameter {args.param!r}; choose from {', '.join(CONFIG_KEYS)}")
        if not args.values:
            raise UsageError("--values is empty")
        spec = SweepSpec(args.param, args.values, [{args.param: v} for v in args.values], ["A"])
    if args.schemes:
        spec.schemes = [SchemePolicy.parse(s).value for s in args.schemes.split(",")]
    do_an = args.mode in ("analytic", "both")
    do_mc = args.mode in ("simulate", "both")
    trials = default_trials(args)

    header = ["param", "value", "series", "scheme", "metric", "threshold_db", "analytic", "mc_mean", "mc_stderr",
              "samples", "iterations"]
    rows = []
    for label, fixed in spec.series:
        for value, ov in zip(spec.values, spec.overrides):
            point = validate(from_flat({**fixed, **ov}, base=cfg))
            t_db = spec.thresholds_db if not spec.t_axis else (value,)
            an = analyze(point, threshold_db=t_db) if do_an else None
            for scheme in spec.schemes:
                an_ok = an is not None and scheme == "A"
                out = an.outage if an_ok else None
                it = an.solution.iterations if an_ok else None
                est = None
                if do_mc:
                    est = run_campaign(point, scheme, trials, args.seed, slots=args.slots, warmup=args.warmup,
                                       thresholds_db=t_db)
                if not spec.t_axis:
                    rows.append([spec.name, value, label, scheme, "outage", "", out,
                                 est.outage_prob if est else None, est.outage_stderr if est else None,
                                 est.mts if est else None, it])
                    if est:
                        rows.append([spec.name, value, label, scheme, "rejection", "", None, est.rejection_prob,
                                     est.rejection_stderr, est.associated, None])
                for i, t in enumerate(t_db):
                    rows.append([spec.name, value, label, scheme, "coverage", t,
                                 an.coverage[i] if an_ok else None,
                                 est.coverage[i] if est else None, est.coverage_stderr[i] if est else None,
                                 est.sir_samples if est else None, it])
    write_csv(args.out, header, rows, cfg, argv, seed=args.seed)
    return EXIT_OK


def cmd_map(args, argv) -> int:
    cfg = build_config(args)
    xs, ys, p_a = outage_map(cfg, "A", args.seed, args.resolution, slots=args.slots, warmup=args.warmup)
    _, _, p_wo = outage_map(cfg, "woA", args.seed, args.resolution, slots=args.slots, warmup=args.warmup)
    gain = outage_gain(p_wo, p_a)
    rows = []
    for iy, y in enumerate(ys):
        for ix, x in enumerate(xs):
            rows.append([x, y, gain[iy, ix], p_a[iy, ix], p_wo[iy, ix]])
    write_csv(args.out, ["x_m", "y_m", "gain", "outage_A", "outage_woA"], rows, cfg, argv, seed=args.seed)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat TOML file of parameter overrides")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one parameter (repeatable)")
    scale = common.add_mutually_exclusive_group()
    scale.add_argument("--desk-scale", dest="scale", action="store_const", const="desk",
                       help="L = 200 battery levels, 500 trials (default)")
    scale.add_argument("--paper-scale", dest="scale", action="store_const", const="paper",
                       help="L = 1000 battery levels, 10000 trials")
    common.set_defaults(scale="desk")
    common.add_argument("--out", help="output CSV path (default stdout)")

    mc = _Parser(add_help=False)
    mc.add_argument("--trials", type=_positive_int)
    mc.add_argument("--seed", type=int, default=0)
    mc.add_argument("--slots", type=_positive_int, help="slots per trial including warm-up")
    mc.add_argument("--warmup", type=_nonneg_int)

    p = _Parser(prog="ehcell", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"ehcell {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    a = sub.add_parser("analytic", parents=[common], help="solve the battery fixed point; outage and coverage")
    a.add_argument("--thresholds-db", type=_floats, default=list(DEFAULT_T_DB))
    a.add_argument("--battery", action="store_true", help="also emit the stationary battery pmf")
    a.add_argument("--exclude-zero", action="store_true",
                   help="condition consumption on at least one unit being used")

    s = sub.add_parser("simulate", parents=[common, mc], help="Monte-Carlo campaign for one scheme")
    s.add_argument("--scheme", default="A", help="A, woA, rtA or ongrid")
    s.add_argument("--thresholds-db", type=_floats, default=list(DEFAULT_T_DB))

    w = sub.add_parser("sweep", parents=[common, mc], help="figure-style parameter sweeps")
    w.add_argument("--figure", choices=["fig4", "fig5", "fig6", "fig7", "fig8"])
    w.add_argument("--param", help="config key to sweep")
    w.add_argument("--values", type=_floats)
    w.add_argument("--schemes", help="comma-separated schemes")
    w.add_argument("--mode", choices=["analytic", "simulate", "both"], default="both")

    m = sub.add_parser("map", parents=[common, mc], help="spatial outage gain of A over woA")
    m.add_argument("--resolution", type=_positive_int, default=20)
    return p


COMMANDS = {"analytic": cmd_analytic, "simulate": cmd_simulate, "sweep": cmd_sweep, "map": cmd_map}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args, argv)
    except InvalidParameter as exc:
        for name, why in exc.problems:
            print(f"ehcell: invalid parameter {name}: {why}", file=sys.stderr)
        return EXIT_CONFIG
    except (UsageError, DomainError, FileNotFoundError) as exc:
        print(f"ehcell: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonConvergence as exc:
        print(f"ehcell: fixed point did not converge: {exc.iterations} iterations, "
              f"residual {exc.residual:.3e}; try a larger iteration cap or damping", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except SolverFailure as exc:
        print(f"ehcell: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
