"""Command-line interface: ``pulsekam <command> [options]``.

Exit status is 0 on success, 1 for invalid input (including unknown flags)
and 2 when a numerical step fails.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .harness import (COLUMNS, SchemeSpec, ValidationError,
                      compute_errors, figure_preset, format_csv, format_json, propagate,
                      run_experiment, _default_jobs)
from .kam import KamConfig
from .linalg import unitarity_defect
from .optimize import OptimizationError, ScanGrid, default_axes, minimize_g, scan_g
from .oracle import OracleError, SolverSpec, transition_probability
from .quad import QuadratureError, QuadratureSpec
from .system import PulseSystem

NUMERICAL_ERRORS = (QuadratureError, OracleError, OptimizationError, FloatingPointError,
                    np.linalg.LinAlgError, ArithmeticError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--config", help="JSON file with system/scheme/oracle/quadrature sections")
    g.add_argument("--out", help="output file (default: stdout)")
    g.add_argument("--format", choices=("csv", "json"), help="output format")
    g.add_argument("--tol", type=float, help="quadrature tolerance")
    g.add_argument("--jobs", type=int, help="worker processes (default: all cores)")
    s = p.add_argument_group("system")
    s.add_argument("--eps", type=float, help="sudden parameter epsilon")
    s.add_argument("--area", type=float, help="pulse area A")
    s.add_argument("--form", help="pulse form: sin2, gaussian or tabulated")
    return p


def _scheme_args(p: argparse.ArgumentParser, multiple: bool = False):
    if multiple:
        p.add_argument("--scheme", action="append",
                       help="scheme id (repeatable or comma separated), e.g. magnus2, kamB1")
    else:
        p.add_argument("--scheme", help="scheme id, e.g. magnus2, kamB1, vv1, oracle")
    for name in ("t1", "t1p", "t2", "t2p", "t-v"):
        p.add_argument(f"--{name}", type=float, dest=name.replace("-", "_"))
    p.add_argument("--v", type=int, help="PVZ/VV order at which D_v is anchored at --t-v")
    p.add_argument("--truncation", help="'resummed' or number of commutators")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="pulsekam", description="Unitary perturbation theories for "
                     "pulse-driven two-level systems beyond the sudden limit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("propagate", parents=[common], help="one scheme at one point")
    _scheme_args(p)
    p.add_argument("--t", type=float, help="final time (default t_f)")
    p.add_argument("--t0", type=float, help="initial time (default t_i)")

    p = sub.add_parser("errors", parents=[common], help="Delta_n and delta_n vs the oracle")
    _scheme_args(p, multiple=True)

    p = sub.add_parser("scan", parents=[common], help="g surface over free times")
    _scheme_args(p)
    p.add_argument("--axes", help="comma separated free times (default by scheme)")
    p.add_argument("--count", type=int, default=101, help="nodes per axis")

    p = sub.add_parser("optimize", parents=[common], help="minimize g over free times")
    _scheme_args(p)
    p.add_argument("--axes", help="comma separated free times (default by scheme)")
    p.add_argument("--init", help="initial point, e.g. t1=0.5,t1p=0.2")
    p.add_argument("--local", action="store_true", help="skip the grid pass")

    p = sub.add_parser("figure", parents=[common], help="regenerate a figure's data")
    p.add_argument("--id", type=int, required=True, choices=range(1, 6))
    p.add_argument("--points", type=int, help="sampling density override")
    return parser


# -- configuration assembly -----------------------------------------------------

def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ValidationError("config must be a JSON object")
    unknown = set(cfg) - {"system", "scheme", "oracle", "quadrature"}
    if unknown:
        raise ValidationError(f"unknown config sections {sorted(unknown)}")
    return cfg


def _system(args, cfg) -> PulseSystem:
    sc = dict(cfg.get("system", {}))
    if args.eps is not None:
        sc["epsilon"] = args.eps
    if args.area is not None:
        sc["area"] = args.area
    if args.form is not None:
        sc["form"] = args.form
    return PulseSystem.from_config(sc)


def _quad(args, cfg) -> QuadratureSpec:
    qc = cfg.get("quadrature", {})
    kw = {}
    if "tolerance" in qc:
        kw["tol"] = float(qc["tolerance"])
    if "panels" in qc:
        kw["panels"] = int(qc["panels"])
    if args.tol is not None:
        kw["tol"] = args.tol
    return QuadratureSpec(**kw)


def _oracle(cfg) -> SolverSpec:
    oc = cfg.get("oracle", {})
    return SolverSpec(**{k: float(oc[k]) for k in ("rel_tol", "abs_tol") if k in oc})


def _overrides(args) -> dict:
    out = {}
    for name in ("t1", "t1p", "t2", "t2p", "t_v", "v"):
        val = getattr(args, name, None)
        if val is not None:
            out[name] = val
    trunc = getattr(args, "truncation", None)
    if trunc is not None:
        out["truncation"] = int(trunc) if trunc.isdigit() else trunc
    return out


def _schemes(args, cfg, multiple=False) -> list[SchemeSpec]:
    over = _overrides(args)
    ids = getattr(args, "scheme", None)
    if ids:
        if isinstance(ids, str):
            ids = [ids]
        names = [x for item in ids for x in item.split(",") if x]
        base = {k: v for k, v in cfg.get("scheme", {}).items() if k != "kind"}
        return [SchemeSpec.from_config({"kind": n, **base, **over}) for n in names]
    if "scheme" in cfg:
        sc = dict(cfg["scheme"])
        if "type" in sc and "kind" not in sc:
            sc["kind"] = "kam"
        return [SchemeSpec.from_config({**sc, **over})]
    raise ValidationError("no scheme given (use --scheme or a config 'scheme' section)")


def _emit(text: str, out: str | None):
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, newline="\n")
    else:
        sys.stdout.write(text)


def _kam(scheme: SchemeSpec) -> KamConfig:
    cfg = scheme.build()
    if not isinstance(cfg, KamConfig):
        raise ValidationError("this command needs a KAM scheme (kamA1, kamB1, kamC2, ...)")
    return cfg


# -- commands ---------------------------------------------------------------------

def _cmd_propagate(args, cfg):
    system = _system(args, cfg)
    scheme = _schemes(args, cfg)[0]
    quad, oracle = _quad(args, cfg), _oracle(cfg)
    U = propagate(system, scheme, args.t, args.t0, quad, oracle)
    result = {"scheme": scheme.id, "eps": system.epsilon, "A": system.area,
              "U": [[[float(z.real), float(z.imag)] for z in row] for row in U],
              "unitarity_defect": unitarity_defect(U),
              "transition_probability": transition_probability(U)}
    if args.t is None and args.t0 is None and scheme.kind != "oracle":
        rep = compute_errors(system, scheme, oracle, quad)
        result.update(delta_n=rep.delta_n, delta_prob=rep.delta_prob)
    if args.format == "csv":
        rows = [{"row": i, "col": j, "re": U[i, j].real, "im": U[i, j].imag}
                for i in range(U.shape[0]) for j in range(U.shape[1])]
        _emit(format_csv(rows, ("row", "col", "re", "im")), args.out)
    else:
        _emit(json.dumps(result, indent=1) + "\n", args.out)


def _cmd_errors(args, cfg):
    system = _system(args, cfg)
    quad, oracle = _quad(args, cfg), _oracle(cfg)
    rows = [compute_errors(system, s, oracle, quad).row() for s in _schemes(args, cfg, True)]
    fmt = format_json if args.format == "json" else format_csv
    _emit(fmt(rows, COLUMNS), args.out)


def _axes(args, template):
    return tuple(a for a in args.axes.split(",") if a) if args.axes else default_axes(template)


def _cmd_scan(args, cfg):
    system = _system(args, cfg)
    template = _kam(_schemes(args, cfg)[0])
    grid = ScanGrid.over_support(system, _axes(args, template), args.count)
    res = scan_g(system, template, grid, _quad(args, cfg), args.jobs or _default_jobs())
    cols = tuple(grid.names) + ("g",)
    rows = [{**p, "g": g} for p, g, _ in res.rows()]
    fmt = format_json if args.format == "json" else format_csv
    _emit(fmt(rows, cols), args.out)


def _cmd_optimize(args, cfg):
    system = _system(args, cfg)
    scheme = _schemes(args, cfg)[0]
    template = _kam(scheme)
    init = None
    if args.init:
        try:
            init = {k: float(v) for k, v in (kv.split("=") for kv in args.init.split(","))}
        except ValueError as exc:
            raise ValidationError(f"bad --init value {args.init!r}") from exc
    res = minimize_g(system, template, init, _axes(args, template), _quad(args, cfg),
                     jobs=args.jobs or 1, local=args.local)
    out = {"scheme": scheme.id, "eps": system.epsilon, "A": system.area,
           **res.to_dict()}
    _emit(json.dumps(out, indent=1) + "\n", args.out)


def _cmd_figure(args, cfg):
    spec = figure_preset(args.id, args.area, args.eps, args.points)
    if args.tol is not None or "quadrature" in cfg:
        spec.quad = _quad(args, cfg)
    if "oracle" in cfg:
        spec.oracle = _oracle(cfg)
    if args.form:
        spec.form = args.form
    spec.format = args.format or "csv"
    if args.out:
        spec.out = args.out
        run_experiment(spec, args.jobs)
    else:
        res = run_experiment(spec, args.jobs)
        sys.stdout.write(res.text(spec.format))


COMMANDS = {"propagate": _cmd_propagate, "errors": _cmd_errors, "scan": _cmd_scan,
            "optimize": _cmd_optimize, "figure": _cmd_figure}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _load_config(args.config)
        if args.jobs is not None and args.jobs < 1:
            raise ValidationError("--jobs must be >= 1")
        COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except NUMERICAL_ERRORS as exc:
        print(f"pulsekam: numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, TypeError) as exc:
        print(f"pulsekam: invalid input: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    return 0


if __name__ == "__main__":
    sys.exit(main())
