"""Command-line front end: ``ocpara {train,analyze,bounds,solve,reproduce}``.

Every flag can also be set in a TOML file passed with ``--config``; keys are
flag names with dashes replaced by underscores, either at top level or in a
table named after the subcommand. Exit codes: 0 pass, 1 reproduction or
quality-gate failure, 2 usage error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, plots, targets
from .artifacts import artifact_from_training, coarse_spec, write_artifact
from .convfactor import (
    AssumptionViolated,
    InstabilityError,
    h_function,
    k_of_J,
    kappa_curve,
    phi_star,
    scan_grid,
    sup_abs_h,
)
from .ocp import NoFeasibleInit, TrainConfig, train
from .parareal import PararealError
from .reproduce import fig1, iteration_table, run_case, table1
from .stability import classical_stability, parse_scheme
from .tableau import StepFailure

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("ocpara")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
THETA_GATE = 0.12


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------- output plumbing


class Outputs:
    """Writes CSV/JSON/figures under one directory, stamping each with the manifest hash."""

    def __init__(self, args: argparse.Namespace):
        self.dir = Path(args.out)
        self.dir.mkdir(parents=True, exist_ok=True)
        config = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config", "out", "verbose")}
        self.manifest = {
            "subcommand": args.command,
            "config": config,
            "seed": config.get("seed"),
            "version": __version__,
        }
        blob = json.dumps(self.manifest, sort_keys=True, default=str).encode()
        self.hash = hashlib.sha256(blob).hexdigest()[:16]
        self.paths: list[str] = []

    def _track(self, path: Path) -> Path:
        self.paths.append(str(path))
        return path

    def csv(self, name: str, header, rows) -> Path:
        buf = io.StringIO()
        buf.write(f"# manifest {self.hash}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
        path = self.dir / name
        path.write_text(buf.getvalue())
        return self._track(path)

    def json(self, name: str, data: dict) -> Path:
        path = self.dir / name
        write_artifact(path, {**data, "manifest": self.hash})
        return self._track(path)

    def figure(self, name: str) -> Path:
        return self._track(self.dir / f"{name}.{self.fig_format}")

    fig_format = "svg"

    def finish(self) -> None:
        man = dict(self.manifest, hash=self.hash, outputs=self.paths)
        (self.dir / "manifest.json").write_text(json.dumps(man, indent=2, sort_keys=True, default=str))


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        if math.isnan(v):
            return "nan"
        return f"{float(v):.10g}"
    return v


def _fp_name(fp: str) -> str:
    key, theta = parse_scheme(fp)
    return fp if theta is None else f"theta:{theta:g}"


def _safe(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in name)


def _report(out: Outputs, name: str, checks) -> int:
    rows = [(c.name, c.target, c.value, c.delta, "pass" if c.passed else "FAIL") for c in checks]
    out.csv(f"{name}.csv", ("check", "target", "value", "delta", "pass"), rows)
    failed = [c for c in checks if not c.passed]
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name:<28} target={c.target:.4g} value={c.value:.4g}")
    if failed:
        print(f"{len(failed)} of {len(checks)} checks failed: " + ", ".join(c.name for c in failed))
    return EXIT_FAIL if failed else EXIT_OK


# ---------------------------------------------------------------- subcommands


def cmd_train(args) -> int:
    fp = _fp_name(args.fp)
    is_theta = fp.startswith("theta")
    gate = args.gate if args.gate is not None else (THETA_GATE if is_theta else TrainConfig.gate)
    cfg = TrainConfig(
        J0=args.j0, m=args.m, n=args.n, q=args.q, seed=args.seed, gate=gate,
        inner_iters=args.inner_iters, max_outer=args.max_outer, restarts=args.restarts,
        step0=args.step0, beta=args.beta, rho0=args.rho0,
    )
    out = Outputs(args)
    r = classical_stability(fp)
    res = train(r, cfg)
    art = artifact_from_training(fp, res, cfg)
    path = out.json(args.output or f"ocp-{_safe(fp)}-seed{args.seed}.json", art)
    R = res.R
    s, k = kappa_curve(r, R, cfg.J0, scan_grid(1e-3, 1e4, 2001))
    plots.plot_curves(out.figure(f"train-{_safe(fp)}"), [(f"OCP, J={cfg.J0}", s, k)], title=f"trained CP for {fp}")
    out.finish()
    print(f"phi* at J0={cfg.J0}: {art['phi_star_at_J0']:.5f}  (gate {gate:g}, {res.seconds:.1f}s) -> {path}")
    if res.below_gate:
        print("quality gate not met; best parameters written anyway")
        return EXIT_FAIL
    return EXIT_OK


def cmd_analyze(args) -> int:
    out = Outputs(args)
    rows = []
    for fp in args.fp:
        fp = _fp_name(fp)
        r = classical_stability(fp)
        curves = []
        for cp in args.cp:
            R = coarse_spec(cp, fp).R
            for J in args.j:
                res = phi_star(r, R, J)
                rows.append((cp, fp, J, res.phi_star, res.s_star))
                s, k = kappa_curve(r, R, J, scan_grid(args.s_min, args.s_max, args.n_curve))
                tag = _safe(f"{cp}_{fp}_J{J}")
                out.csv(f"curve_{tag}.csv", ("s", "abs_kappa"), zip(s, k))
                curves.append((f"{cp}, J={J}", s, k))
        plots.plot_curves(out.figure(f"curves_{_safe(fp)}"), curves, title=f"FP {fp}")
    out.csv("analyze.csv", ("cp", "fp", "J", "phi_star", "s_star"), rows)
    out.finish()
    for row in rows:
        print("{:<22} {:<10} J={:<4d} phi*={:.4f} s*={:.4g}".format(*row))
    return EXIT_OK


def cmd_bounds(args) -> int:
    out = Outputs(args)
    rows, hcurves, kcurves = [], [], []
    Js = list(range(args.j_min, args.j_max + 1))
    s = scan_grid(1e-3, 4.0, 1001)
    for fp in args.fp:
        fp = _fp_name(fp)
        r = classical_stability(fp)
        R = coarse_spec(args.cp, fp).R
        try:
            _, h = sup_abs_h(r, R, 16)
            rows.append((fp, "112*sup|h|", 112.0 * h))
            hcurves.append((fp, s, 112.0 * np.abs(h_function(r, R, s, 16))))
        except AssumptionViolated as exc:
            rows.append((fp, "112*sup|h|", math.nan))
            print(f"{fp}: sensitivity bound skipped ({exc})")
        ks = [k_of_J(r, R, J) for J in Js]
        rows.append((fp, f"sup_J k(J), J in [{Js[0]},{Js[-1]}]", max(ks)))
        kcurves.append((fp, Js, ks))
    out.csv("bounds.csv", ("fp", "quantity", "value"), rows)
    if hcurves:
        plots.plot_curves(out.figure("h_bound"), hcurves, ylabel="112 |h(s)|", title="sensitivity bound")
    plots.plot_series(out.figure("k_of_J"), kcurves, "J", "k(J)", title="convergence factor against J")
    out.finish()
    for row in rows:
        print("{:<10} {:<28} {:.4g}".format(*row))
    return EXIT_OK


def cmd_solve(args) -> int:
    out = Outputs(args)
    fp = _fp_name(args.fp)
    run, summary = run_case(
        args.problem, args.cp, fp, args.j, args.dt, eta=args.eta, K_max=args.k_max,
        substeps=args.substeps, T=args.t, M=args.m_cells, workers=args.workers,
    )
    led = run.ledger
    coarse = [led.init_coarse_seconds] + list(led.coarse_seconds)
    fine = [0.0] + led.max_fine()
    rows = [(k, e, coarse[k], fine[k]) for k, e in enumerate(run.errors)]
    out.csv("solve.csv", ("k", "error", "coarse_seconds", "max_fine_seconds"), rows)
    out.json("summary.json", {"problem": args.problem, "cp": args.cp, "fp": fp, **summary})
    plots.plot_errors(out.figure("errors"), [(f"{args.cp} / {fp}", run.plot_errors())],
                      title=f"{args.problem}, J={args.j}")
    out.finish()
    print(f"iterations to eta={args.eta:g}: {run.converged_at}; observed rate {summary['observed_rate']:.4f}")
    return EXIT_OK


def cmd_reproduce(args) -> int:
    out = Outputs(args)
    which = args.what
    if which == "table1":
        checks = table1()
        rows = [(c.extra["cp"], c.extra["fp"], c.extra["J"], c.target, c.value, c.delta,
                 c.extra["s_target"], c.extra["s_star"], "pass" if c.passed else "FAIL") for c in checks]
        out.csv("table1_cells.csv", ("cp", "fp", "J", "phi_target", "phi_star", "phi_delta",
                                     "s_target", "s_star", "pass"), rows)
    elif which == "fig1":
        checks = fig1()
    else:
        table = targets.TABLE2 if which == "table2" else targets.TABLE3
        checks = iteration_table(table, args.columns)
        hist = [(c.name, c.extra["errors"]) for c in checks if "errors" in c.extra]
        plots.plot_errors(out.figure(f"{which}_errors"), hist, title=f"{which}: error histories")
        rows = [(c.extra["fp"], c.extra["cp"], c.target, c.value, c.extra["speedup_with_G"],
                 c.extra["speedup_without_G"], c.extra["efficiency_with_G"], c.extra["efficiency_without_G"])
                for c in checks if "cp" in c.extra]
        out.csv(f"{which}_speedup.csv", ("fp", "cp", "target_iterations", "iterations", "speedup_with_G",
                                         "speedup_without_G", "efficiency_with_G", "efficiency_without_G"), rows)
    code = _report(out, which, checks)
    out.finish()
    return code


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ocpara", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML file with flag defaults")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[common], help="optimize a coarse propagator for a fine one")
    t.add_argument("--fp", required=True)
    t.add_argument("--j0", type=int, default=16)
    t.add_argument("--m", type=int, default=2)
    t.add_argument("--n", type=int, default=2)
    t.add_argument("--q", type=int, default=1)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--gate", type=float, default=None, help="default 0.05, or 0.12 for theta schemes")
    t.add_argument("--inner-iters", type=int, default=TrainConfig.inner_iters)
    t.add_argument("--max-outer", type=int, default=TrainConfig.max_outer)
    t.add_argument("--restarts", type=int, default=TrainConfig.restarts)
    t.add_argument("--step0", type=float, default=TrainConfig.step0)
    t.add_argument("--beta", type=float, default=TrainConfig.beta)
    t.add_argument("--rho0", type=float, default=TrainConfig.rho0)
    t.add_argument("--output", help="artifact file name inside --out")
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("analyze", parents=[common], help="phi* and |kappa| curves for CP x FP x J")
    a.add_argument("--cp", nargs="+", default=["be", "sdirk22", "ocp:bundled"])
    a.add_argument("--fp", nargs="+", default=list(targets.FP_TABLE))
    a.add_argument("--j", type=int, nargs="+", default=list(targets.J_TABLE))
    a.add_argument("--s-min", type=float, default=1e-3)
    a.add_argument("--s-max", type=float, default=1e3)
    a.add_argument("--n-curve", type=int, default=2001)
    a.set_defaults(func=cmd_analyze)

    b = sub.add_parser("bounds", parents=[common], help="sensitivity bound and sup_J k(J)")
    b.add_argument("--fp", nargs="+", default=list(targets.FP_TABLE))
    b.add_argument("--cp", default="ocp:bundled")
    b.add_argument("--j-min", type=int, default=16)
    b.add_argument("--j-max", type=int, default=128)
    b.set_defaults(func=cmd_bounds)

    s = sub.add_parser("solve", parents=[common], help="run parareal on a benchmark problem")
    s.add_argument("--problem", required=True)
    s.add_argument("--cp", default="ocp:bundled")
    s.add_argument("--fp", default="lobatto3")
    s.add_argument("--j", type=int, required=True)
    s.add_argument("--dt", type=_fraction, required=True, help="fine step, e.g. 1/500")
    s.add_argument("--eta", type=float, default=1e-12)
    s.add_argument("--k-max", type=int, default=50)
    s.add_argument("--substeps", type=int, default=1, help="coarse sub-steps per interval")
    s.add_argument("--t", type=float, default=None, help="horizon (problem default if omitted)")
    s.add_argument("--m-cells", type=int, default=1000, help="spatial cells")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_solve)

    r = sub.add_parser("reproduce", parents=[common], help="compare against the reference tables")
    r.add_argument("what", choices=["table1", "fig1", "table2", "table3"])
    r.add_argument("--columns", nargs="+", default=None, help="fine propagators to include (tables 2-3)")
    r.set_defaults(func=cmd_reproduce)
    return p


def _fraction(text: str) -> float:
    try:
        if "/" in text:
            a, b = text.split("/", 1)
            return float(a) / float(b)
        return float(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None


def _config_path(argv) -> str | None:
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def _apply_config(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    argv = list(sys.argv[1:] if argv is None else argv)
    path = _config_path(argv)
    command = next((a for a in argv if a in _subparsers(parser)), None)
    if path is None or command is None:
        return parser.parse_args(argv)
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    section = {k: v for k, v in data.items() if not isinstance(v, dict)}
    section.update(data.get(command, {}))
    subparser = _subparsers(parser)[command]
    known = {a.dest for a in subparser._actions}
    unknown = set(section) - known
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    # the config supplies defaults; flags given on the command line still win
    for action in subparser._actions:
        if action.dest in section:
            action.required = False
    subparser.set_defaults(**section)
    return parser.parse_args(argv)


def _subparsers(parser: argparse.ArgumentParser) -> dict:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices
    return {}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except (UsageError, OSError, tomllib.TOMLDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (InstabilityError, StepFailure, PararealError, NoFeasibleInit, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
