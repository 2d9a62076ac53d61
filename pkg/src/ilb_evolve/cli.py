"""Command-line front end: ``ilb-evolve {evolve,check,bench}``.

Exit codes: 0 success, 1 usage (bad flags, unknown instance, missing file,
mismatched dimensions), 2 parse (malformed control or config), 3 solver
failure, 4 a ``check`` that ran but found violations.  Every nonzero exit
writes one JSON object to stderr.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from .chain import ChainReport, corrupt, validate_chain
from .controls import ControlSignal, l1_norm
from .errors import ContractError, SolverError, UnsupportedOperation
from .instances import make_instance
from .solver import SolverConfig, evol_full, evolve

EXIT_OK, EXIT_USAGE, EXIT_PARSE, EXIT_SOLVER, EXIT_CHECK = 0, 1, 2, 3, 4

# report keys that carry timings and are excluded from reproducibility checks
TIMING_KEYS = ("wall_time",)


class CliError(Exception):
    def __init__(self, code, kind, message, **extra):
        super().__init__(message)
        self.code = code
        self.kind = kind
        self.extra = extra

    def to_dict(self):
        return {"error": self.kind, "message": str(self), "exit_code": self.code, **self.extra}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(EXIT_USAGE, "usage", message)


# -- input resolution ----------------------------------------------------------


def _instance(spec):
    try:
        return make_instance(spec)
    except ContractError as exc:
        raise CliError(EXIT_USAGE, "usage", str(exc)) from exc


def _floats(text, what):
    try:
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError as exc:
        raise CliError(EXIT_USAGE, "usage", f"bad {what}: {text!r}") from exc


def _control_from_dict(data, source):
    try:
        return ControlSignal.from_dict(data)
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise CliError(EXIT_PARSE, "parse", f"invalid control in {source}: {exc}") from exc


def _generator(name, arg, chain, seed):
    dim = chain.algebra_dim
    if name == "zero":
        return ControlSignal.zero(dim)
    if name == "random":
        vals = _floats(arg, "random spec") if arg else []
        steps = int(vals[0]) if vals else 4
        mass = vals[1] if len(vals) > 1 else 1.0
        if steps < 1:
            raise CliError(EXIT_USAGE, "usage", "random controls need at least one step")
        return chain.sample_control(np.random.default_rng(seed), steps, mass)
    if name in ("inverse-sqrt", "inverse_sqrt"):
        d = _floats(arg, "direction") if arg else [1.0] + [0.0] * (dim - 1)
        return ControlSignal.inverse_sqrt(d)
    if name == "constant":
        return ControlSignal.constant(_floats(arg, "constant value"))
    return None


def load_control_spec(spec, chain, seed=0):
    """Resolve ``--control``: a path, inline JSON, ``bundled:NAME`` or a generator.

    Generators: ``zero``, ``random[:steps[,mass]]``, ``inverse-sqrt[:d1,...]``
    and ``constant:v1,...``.
    """
    spec = spec.strip()
    if spec.startswith("{"):
        try:
            data = json.loads(spec)
        except json.JSONDecodeError as exc:
            raise CliError(EXIT_PARSE, "parse", f"inline control: {exc}") from exc
        ctrl = _control_from_dict(data, "inline JSON")
    else:
        name, _, arg = spec.partition(":")
        if name == "bundled":
            res = resources.files("ilb_evolve.data").joinpath(f"{arg}.json")
            if not res.is_file():
                raise CliError(EXIT_USAGE, "usage", f"no bundled control {arg!r}")
            text, source = res.read_text(encoding="utf-8"), f"bundled:{arg}"
            ctrl = None
        else:
            try:
                ctrl = _generator(name, arg, chain, seed)
            except ContractError as exc:
                raise CliError(EXIT_USAGE, "usage", str(exc)) from exc
            if ctrl is None:
                path = Path(spec)
                if not path.is_file():
                    raise CliError(EXIT_USAGE, "io", f"control file not found: {spec}")
                text, source = path.read_text(encoding="utf-8"), spec
        if ctrl is None:
            try:
                data = json.loads(text)
            except json.JSONDecodeError as exc:
                raise CliError(EXIT_PARSE, "parse", f"{source}: {exc}") from exc
            ctrl = _control_from_dict(data, source)
    if ctrl.algebra_dim != chain.algebra_dim:
        raise CliError(
            EXIT_USAGE,
            "usage",
            f"control dimension {ctrl.algebra_dim} does not match {chain.name} ({chain.algebra_dim})",
        )
    return ctrl


def load_config(args):
    cfg = SolverConfig()
    if args.config:
        if not Path(args.config).is_file():
            raise CliError(EXIT_USAGE, "io", f"config file not found: {args.config}")
        try:
            cfg = SolverConfig.from_file(args.config)
        except (ContractError, TypeError, ValueError) as exc:
            raise CliError(EXIT_PARSE, "parse", f"{args.config}: {exc}") from exc
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if args.force_N is not None:
        if args.force_N < 1:
            raise CliError(EXIT_USAGE, "usage", "--force-N must be positive")
        cfg = cfg.replace(force_N=args.force_N)
    return cfg


def parse_levels(text, chain):
    if text is None:
        return [1]
    if text == "all":
        return list(range(1, chain.n_max + 1))
    try:
        levels = sorted({int(p) for p in text.split(",")})
    except ValueError as exc:
        raise CliError(EXIT_USAGE, "usage", f"bad --levels {text!r}") from exc
    if levels[0] < 1 or levels[-1] > chain.n_max:
        raise CliError(EXIT_USAGE, "usage", f"levels must lie in 1..{chain.n_max} for {chain.name}")
    return levels


def _write_json(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


# -- subcommands ---------------------------------------------------------------


def cmd_evolve(args):
    chain = _instance(args.instance)
    cfg = load_config(args)
    control = load_control_spec(args.control, chain, cfg.seed)
    levels = parse_levels(args.levels, chain)
    out = Path(args.out)
    report_path = Path(args.report) if args.report else out.with_suffix(".json")
    out.parent.mkdir(parents=True, exist_ok=True)
    if len(levels) == 1:
        rep = evolve(chain, levels[0], control, cfg)
        rep.trajectory.to_csv(out)
        data = rep.to_dict()
        reports = {levels[0]: rep}
        full = None
    else:
        full = evol_full(chain, control, cfg, levels)
        reports = full.reports
        rep = reports[levels[0]]
        rep.trajectory.to_csv(out)
        for n, r in reports.items():
            r.trajectory.to_csv(out.with_name(f"{out.stem}_level{n}{out.suffix}"))
        data = full.to_dict()
    data["control"] = control.to_dict()
    data["csv"] = out.name
    _write_json(report_path, data)
    if args.plot:
        from . import plotting

        plotting.plot_trajectory(rep, chain, plotting.figure_path(out, "trajectory"))
        plotting.plot_ratios(rep, plotting.figure_path(out, "ratios"))
        if full is not None:
            plotting.plot_levels(full, plotting.figure_path(out, "levels"))
    print(
        f"{chain.name}: levels {','.join(map(str, reports))}, N={rep.N}, "
        f"iterations={sum(rep.iterations)}, endpoint written to {out}"
    )
    return EXIT_OK


def cmd_check(args):
    from .invariants import solver_checks

    chain = _instance(args.instance)
    cfg = load_config(args)
    if args.corrupt is not None:
        chain = corrupt(chain, args.corrupt)
    results = {}
    if args.suite in ("all", "chain"):
        results["chain"] = validate_chain(chain, sample_count=args.samples, seed=cfg.seed)
    if args.suite in ("all", "solver"):
        try:
            results["solver"] = solver_checks(chain, cfg, count=args.controls, seed=cfg.seed)
        except SolverError as exc:
            # a broken chain may stop the solver; that is a failed check
            results["solver"] = ChainReport(chain.name, [])
            results["solver_error"] = exc.to_dict()
    ok = True
    for suite, rep in results.items():
        if suite == "solver_error":
            print(f"[solver] FAIL solver raised {rep['error']}: {rep['message']}")
            ok = False
            continue
        for c in rep.checks:
            print(f"[{suite}] {c.line()}")
        ok = ok and rep.passed
    print(f"{chain.name}: {'all checks passed' if ok else 'violations found'}")
    if args.report:
        data = {k: (v if isinstance(v, dict) else v.to_dict()) for k, v in results.items()}
        data["passed"] = ok
        _write_json(args.report, data)
    return EXIT_OK if ok else EXIT_CHECK


def cmd_bench(args):
    cfg = load_config(args)
    scales = _floats(args.scales, "--scales")
    if not scales or any(s < 0 for s in scales):
        raise CliError(EXIT_USAGE, "usage", "--scales needs non-negative numbers")
    rows, table = [], []
    for spec in args.instance or ["so3"]:
        chain = _instance(spec)
        base = load_control_spec(args.control, chain, cfg.seed)
        for s in scales:
            ctrl = base.scale(s)
            t0 = time.perf_counter()
            rep = evolve(chain, 1, ctrl, cfg)
            wall = time.perf_counter() - t0
            lvl = rep.solve_level + rep.field_offset
            mass = l1_norm(ctrl, lambda v: chain.algebra_norm(lvl, v))
            iters = int(sum(rep.iterations))
            rows.append((mass, rep.N, iters, wall))
            table.append((chain.name, s, mass, rep.N, iters, wall))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("instance,scale,l1_norm,N,total_iterations,wall_time\n")
        for name, s, mass, N, iters, wall in table:
            fh.write(f"{name},{s:.17g},{mass:.17g},{N},{iters},{wall:.6f}\n")
    for name, s, mass, N, iters, wall in table:
        print(f"{name:>14} scale={s:<6g} l1={mass:<10.4g} N={N:<5d} iterations={iters:<6d} {wall:.3f}s")
    if args.report:
        _write_json(
            args.report,
            {
                "config": cfg.to_dict(),
                "control": args.control,
                "rows": [
                    dict(zip(("instance", "scale", "l1_norm", "N", "total_iterations", "wall_time"), r))
                    for r in table
                ],
            },
        )
    if args.plot:
        from . import plotting

        plotting.plot_bench(rows, plotting.figure_path(out, "bench"))
    return EXIT_OK


# -- entry point ---------------------------------------------------------------


def _common(p, instance_required=True, repeat=False):
    if repeat:
        p.add_argument("--instance", action="append", help="registry string (repeatable)")
    else:
        p.add_argument("--instance", required=instance_required, help="registry string, e.g. so3, loop:16,4")
    p.add_argument("--config", help="key = value solver config file")
    p.add_argument("--seed", type=int, default=None, help="seed for sampled bounds and generators")
    p.add_argument("--force-N", dest="force_N", type=int, default=None, help="fix the subdivision count")


def build_parser():
    parser = _Parser(prog="ilb-evolve", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("evolve", help="solve for one control and write CSV + JSON")
    _common(p)
    p.add_argument("--control", required=True, help="file, inline JSON, bundled:NAME or generator")
    p.add_argument("--levels", help="comma list of levels or 'all' (default 1)")
    p.add_argument("--out", default="trajectory.csv", help="trajectory CSV path")
    p.add_argument("--report", help="report JSON path (default: CSV path with .json)")
    p.add_argument("--plot", action="store_true", help="also render PNG figures next to the CSV")
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("check", help="validate chain axioms and solver invariants")
    _common(p)
    p.add_argument("--suite", choices=("all", "chain", "solver"), default="all")
    p.add_argument("--samples", type=int, default=32, help="samples per axiom check")
    p.add_argument("--controls", type=int, default=3, help="random controls for the solver suite")
    p.add_argument("--report", help="write results as JSON")
    p.add_argument("--corrupt", type=float, default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("bench", help="pieces, iterations and time against control size")
    _common(p, repeat=True)
    p.add_argument("--control", default="random", help="base control, scaled by each factor")
    p.add_argument("--scales", default="1,2,4", help="comma list of scale factors")
    p.add_argument("--out", default="bench.csv", help="CSV path")
    p.add_argument("--report", help="JSON path")
    p.add_argument("--plot", action="store_true", help="also render a PNG next to the CSV")
    p.set_defaults(func=cmd_bench)
    return parser


def _fail(err):
    sys.stderr.write(json.dumps(_jsonable(err), sort_keys=True) + "\n")
    return err["exit_code"]


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except CliError as exc:
        return _fail(exc.to_dict())
    except SolverError as exc:
        return _fail({**exc.to_dict(), "exit_code": EXIT_SOLVER})
    except (ContractError, UnsupportedOperation) as exc:
        return _fail({"error": type(exc).__name__, "message": str(exc), "exit_code": EXIT_USAGE})
    except OSError as exc:
        return _fail({"error": "io", "message": str(exc), "exit_code": EXIT_USAGE})


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
