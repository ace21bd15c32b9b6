"""Command-line front end.

    acdg run       single simulation with energy trace and VTK snapshots
    acdg converge  self-convergence table
    acdg energy    energy-decay check over an (n, k) grid
    acdg spectrum  smallest eigenvalue of the linearised operator
    acdg interface shrinking-circle tracking

Errors are reported on stderr as one JSON object and a nonzero exit code.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import experiments as ex
from . import ipdg
from .timestepper import NewtonError, RunError, Stepper

EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_SOLVER = 4
EXIT_OTHER = 1

BOOLEAN_KEYS = {"circle", "test2_symmetrized"}


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_OTHER, kind: str = "error"):
        super().__init__(message)
        self.code, self.kind = code, kind


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message, EXIT_USAGE, "usage")


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("problem")
    g.add_argument("--config", help="flat key=value file; every key mirrors a flag, flags win")
    g.add_argument("--test", choices=ex.TESTS, default="test1", help="initial data")
    g.add_argument("--eps", type=_floats, default=[0.125], help="interface width(s), comma-separated")
    g.add_argument("--n", type=_ints, default=[10], help="subdivisions per side (list, or coarsest mesh with --levels)")
    g.add_argument("--k", type=_floats, default=None, help="time step(s); default couples k to h^2")
    g.add_argument("--k-coupling", type=float, default=0.25, help="c in k = c h^2 when --k is not given")
    g.add_argument("--T", type=float, default=None, help="final time")
    g.add_argument("--degree", type=int, choices=(1, 2), default=1, help="polynomial degree r")
    g.add_argument("--lambda", dest="lam", type=int, choices=(-1, 0, 1), default=-1,
                   help="symmetry parameter of the interior penalty form")
    g.add_argument("--penalty", type=float, default=None, help="penalty sigma (default 10 r^2)")
    g.add_argument("--init", choices=("interpolant", "elliptic-projection"), default="interpolant",
                   help="how u0 enters the discrete space")
    g.add_argument("--newton-tol", type=float, default=1e-10, help="relative Newton tolerance")
    g.add_argument("--snapshots", type=_floats, default=[], help="comma-separated output times")
    g.add_argument("--out", default="out", help="output directory")
    g.add_argument("--workers", type=int, default=1, help="concurrent independent runs")
    g.add_argument("--seed", type=int, default=0, help="seed for randomised start vectors")
    g.add_argument("--r0", type=float, default=0.5, help="initial circle radius")
    g.add_argument("--test2-symmetrized", action="store_true",
                   help="read the second inner condition of test 2 as x1^2/0.04 + x2^2/0.36")
    g.add_argument("-v", "--verbose", action="store_true", help="log progress")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="acdg", description="IPDG Allen-Cahn solver and experiment harness")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("run", parents=[common], help="single simulation")
    c = sub.add_parser("converge", parents=[common], help="self-convergence table")
    c.add_argument("--levels", type=int, default=None, help="number of meshes n, 2n, 4n, ...")
    sub.add_parser("energy", parents=[common], help="energy decay over the (n, k) grid")
    sub.add_parser("spectrum", parents=[common], help="smallest eigenvalue of the linearised operator")
    i = sub.add_parser("interface", parents=[common], help="shrinking-circle tracking")
    i.add_argument("--circle", action="store_true", help="use the shrinking-circle reference (the only one available)")
    i.add_argument("--t-end", type=float, default=0.1, help="last snapshot time")
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    try:
        entries = ex.read_key_values(known.config)
    except OSError as exc:
        raise CliError(f"cannot read config: {exc}", EXIT_CONFIG, "config")
    except ValueError as exc:
        raise CliError(str(exc), EXIT_CONFIG, "config")
    command = next((a for a in argv if not a.startswith("-")), None)
    subparsers = parser._subparsers._group_actions[0].choices  # noqa: SLF001
    target = subparsers.get(command)
    if target is None:
        return
    dests = {a.dest for a in target._actions}  # noqa: SLF001
    defaults = {}
    for key, value in entries.items():
        dest = key.replace("-", "_")
        dest = "lam" if dest == "lambda" else dest
        if dest not in dests or dest == "config":
            raise CliError(f"unknown config key {key!r}", EXIT_CONFIG, "config")
        if dest in BOOLEAN_KEYS:
            if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise CliError(f"config key {key!r} needs a boolean, got {value!r}", EXIT_CONFIG, "config")
            defaults[dest] = value.lower() in ("true", "1", "yes")
        else:
            action = next(a for a in target._actions if a.dest == dest)  # noqa: SLF001
            try:
                defaults[dest] = action.type(value) if action.type else value
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise CliError(f"config key {key!r}: {exc}", EXIT_CONFIG, "config")
            if action.choices is not None and defaults[dest] not in action.choices:
                raise CliError(f"config key {key!r}: {value!r} not in {list(action.choices)}", EXIT_CONFIG, "config")
    target.set_defaults(**defaults)


def _base(args, n: int, k: float, eps: float, T: float) -> ex.RunSpec:
    return ex.RunSpec(args.test, n, k, eps, T, args.degree, args.lam, args.penalty, args.init,
                      args.newton_tol, args.r0, args.test2_symmetrized)


def _one(values, name):
    if len(values) != 1:
        raise CliError(f"--{name} takes a single value for this command", EXIT_USAGE, "usage")
    return values[0]


def _manifest(args, out: Path, extra: dict) -> None:
    entries = {"command": args.command}
    for key in ("test", "eps", "n", "k", "k_coupling", "T", "degree", "lam", "penalty", "init", "newton_tol",
                "snapshots", "workers", "seed", "r0", "test2_symmetrized"):
        entries[key] = getattr(args, key)
    entries.update(extra)
    ex.write_manifest(out / "manifest.txt", entries)


def cmd_run(args, out: Path) -> dict:
    n, eps = _one(args.n, "n"), _one(args.eps, "eps")
    k = _one(args.k, "k") if args.k else ex.coupled_k(n, args.k_coupling)
    T = args.T if args.T is not None else (max(args.snapshots) if args.snapshots else 0.04)
    run = _base(args, n, k, eps, T)
    _manifest(args, out, {"run": f"n={n};k={k!r};eps={eps!r};T={T!r}"})
    space = run.space()
    result = Stepper(space, run.config()).run(run.initial_data(), snapshots=args.snapshots)
    result.trace.to_csv(out / "energy.csv")
    files = []
    for i, t in enumerate(sorted(result.snapshots)):
        path = out / f"snapshot_{i:03d}.vtk"
        ex.write_snapshot_vtk(result.snapshots[t], path)
        files.append(path.name)
    return {"snapshots": files, "final_energy": result.trace.J[-1], "steps": len(result.trace.records) - 1}


def cmd_converge(args, out: Path) -> dict:
    eps = _one(args.eps, "eps")
    if args.levels is not None:
        ns = [_one(args.n, "n") * 2**i for i in range(args.levels)]
    else:
        ns = args.n
    T = args.T if args.T is not None else 0.04
    base = _base(args, ns[0], 0.0, eps, T)
    ks = args.k
    if ks is not None and len(ks) == 1 and len(ns) > 1:
        ks = ks * len(ns)
    ks = ks or [ex.coupled_k(n, args.k_coupling) for n in ns]
    _manifest(args, out, {f"run.{i}": f"n={n};k={k!r};eps={eps!r};T={T!r}" for i, (n, k) in enumerate(zip(ns, ks))}
              | {"reference": f"n={2 * max(ns)};k={ks[ns.index(max(ns))] / 4!r}"})
    table = ex.convergence_study(base, ns, ks, workers=args.workers)
    table.to_csv(out / "convergence.csv")
    return {"rows": len(table.rows), "invalid": sum(not r.valid for r in table.rows)}


def cmd_energy(args, out: Path) -> dict:
    eps = _one(args.eps, "eps")
    ks = args.k or [1e-2, 1e-3, 1e-4]
    T = args.T if args.T is not None else 0.04
    _manifest(args, out, {f"run.{i}": f"n={n};k={k!r};eps={eps!r};T={T!r}"
                          for i, (n, k) in enumerate((n, k) for n in args.n for k in ks)})
    checks = ex.energy_study(_base(args, args.n[0], ks[0], eps, T), args.n, ks, workers=args.workers)
    with open(out / "energy_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "k", "max_relative_increase", "max_newton_iterations", "decreasing", "error"])
        for c in checks:
            w.writerow([c.n, repr(c.k), repr(c.max_increase), c.max_newton, int(c.decreasing), c.error or ""])
            ex.write_energy_csv(c.records, out / f"energy_n{c.n}_k{c.k:g}.csv")
    return {"all_decreasing": all(c.decreasing for c in checks)}


def cmd_spectrum(args, out: Path) -> dict:
    eps = _one(args.eps, "eps")
    _manifest(args, out, {})
    report = ex.spectrum_study(args.test, eps, args.n, args.degree, args.penalty, args.r0, args.test2_symmetrized)
    report.to_csv(out / "spectrum.csv")
    return {"lambda_min": report.lower_bound, "spread": report.spread}


def cmd_interface(args, out: Path) -> dict:
    n = _one(args.n, "n")
    times = args.snapshots or list(np.linspace(0.0, args.t_end, 6))
    eps_values = args.eps
    k = _one(args.k, "k") if args.k else ex.coupled_k(n, args.k_coupling)
    base = replace(_base(args, n, k, eps_values[0], max(times)), test="circle")
    _manifest(args, out, {"times": times} | {f"run.{i}": f"n={n};k={k!r};eps={e!r}" for i, e in enumerate(eps_values)})
    rows = ex.interface_study(base, eps_values, times, out)
    ex.write_interface_csv(rows, out / "interface.csv")
    return {"rows": len(rows)}


COMMANDS = {"run": cmd_run, "converge": cmd_converge, "energy": cmd_energy,
            "spectrum": cmd_spectrum, "interface": cmd_interface}


def run_cli(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        summary = COMMANDS[args.command](args, out)
    except CliError as exc:
        _report(exc.kind, str(exc))
        return exc.code
    except (RunError, NewtonError, ipdg.SolverError) as exc:
        _report("solver", str(exc))
        return EXIT_SOLVER
    except ValueError as exc:
        _report("invalid-input", str(exc))
        return EXIT_USAGE
    print(json.dumps({"status": "ok", "command": args.command, **_jsonable(summary)}))
    return 0


def _jsonable(d: dict) -> dict:
    return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in d.items()}


def _report(kind: str, message: str) -> None:
    print(json.dumps({"status": "error", "kind": kind, "message": message}), file=sys.stderr)


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
