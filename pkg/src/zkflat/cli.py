"""Command-line front end.

Exit codes: 0 success, 1 configuration error, 2 invariant violation,
3 tolerance failure.
"""

from __future__ import annotations

import argparse
import ast
import configparser
import csv
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT, EXIT_TOLERANCE = 0, 1, 2, 3
SCENARIOS = ("null", "reach", "free", "simulate", "bounds")
PARAM_TYPES = {"a": float, "T": float, "tau": float, "s": float, "M": float,
               "I_max": int, "J_max": int, "nx": int, "ny": int, "nt": int}
DEFAULT_INITIAL = "x*(x+1)*sin(pi*y) + 0.5*x*(x+1)*sin(2*pi*y)"
DEFAULT_TARGET = "0,1,1.0; 1,2,0.3"
# BC-compatible probe profile for the per-mode energy checks
ENERGY_PROBE = "x**2*(x+1)*cos(x)"


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- expressions

_FUNCS = ("sin", "cos", "exp", "sqrt", "sinh", "cosh", "tanh", "abs")
_ALLOWED_NODES = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load, ast.Constant,
                  ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd)


def compile_expression(text: str, names=("x", "y")):
    """Validate an arithmetic expression in x, y and compile it to a numpy callable."""
    import numpy as np

    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"bad expression {text!r}: {exc.msg}") from exc
    allowed = set(names) | set(_FUNCS) | {"pi"}
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_NODES):
            raise ConfigError(f"unsupported syntax {type(node).__name__} in {text!r}")
        if isinstance(node, ast.Name) and node.id not in allowed:
            raise ConfigError(f"unknown name {node.id!r} in {text!r}")
        if isinstance(node, ast.Call) and not (isinstance(node.func, ast.Name) and node.func.id in _FUNCS):
            raise ConfigError(f"only {', '.join(_FUNCS)} may be called")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ConfigError(f"non-numeric constant in {text!r}")
    code = compile(tree, "<expr>", "eval")
    env = {f: getattr(np, f) for f in _FUNCS}
    env["pi"] = math.pi

    def fn(*args):
        return eval(code, {"__builtins__": {}}, {**env, **dict(zip(names, args))})

    return fn


def parse_terms(text: str) -> tuple:
    terms = []
    for chunk in filter(None, (c.strip() for c in text.split(";"))):
        parts = [s.strip() for s in chunk.split(",")]
        if len(parts) != 3:
            raise ConfigError(f"target term {chunk!r} must be 'i,j,beta'")
        try:
            terms.append((int(parts[0]), int(parts[1]), float(parts[2])))
        except ValueError as exc:
            raise ConfigError(f"bad target term {chunk!r}") from exc
    return tuple(terms)


# ---------------------------------------------------------------- config


@dataclass
class RunConfig:
    params: dict
    scenario: str = "null"
    initial: str = DEFAULT_INITIAL
    initial_csv: str | None = None
    target: str = DEFAULT_TARGET
    control_csv: str | None = None
    out: str = "zkflat_out"
    tol_terminal: float = 1e-3
    method: str = "split"
    R_factor: float = 1.1
    snapshot_stride: int = 50
    extra: dict = field(default_factory=dict)

    def make_params(self):
        from .domain import Params

        try:
            return Params(**self.params)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def canonical(self) -> dict:
        d = {k: getattr(self, k) for k in ("scenario", "initial", "initial_csv", "target", "control_csv",
                                           "tol_terminal", "method", "R_factor", "snapshot_stride")}
        d["params"] = dict(sorted(self.params.items()))
        return d

    def hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def validate(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if not self.tol_terminal > 0:
            raise ConfigError("tolerances must be positive")
        if self.method not in ("split", "cn"):
            raise ConfigError(f"unknown method {self.method!r}")
        if not self.R_factor > 1.0:
            raise ConfigError("R_factor must exceed 1")
        if self.snapshot_stride < 1:
            raise ConfigError("snapshot_stride must be >= 1")
        self.make_params()


def load_config(path: str | None, scenario: str | None = None) -> RunConfig:
    """Read an INI file with [params], [run], [initial] and [target] sections."""
    cp = configparser.ConfigParser()
    cp.optionxform = str
    if path is not None:
        if not Path(path).is_file():
            raise ConfigError(f"config file {path} not found")
        try:
            cp.read(path)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from exc
    params = {}
    if cp.has_section("params"):
        for k, v in cp.items("params"):
            if k not in PARAM_TYPES:
                raise ConfigError(f"unknown parameter {k!r}")
            try:
                params[k] = PARAM_TYPES[k](v)
            except ValueError as exc:
                raise ConfigError(f"bad value for {k}: {v!r}") from exc
    run = dict(cp.items("run")) if cp.has_section("run") else {}
    cfg = RunConfig(params=params)
    cfg.scenario = scenario or run.get("scenario", cfg.scenario)
    try:
        cfg.out = run.get("out", cfg.out)
        cfg.tol_terminal = float(run.get("tol_terminal", cfg.tol_terminal))
        cfg.method = run.get("method", cfg.method)
        cfg.R_factor = float(run.get("R_factor", cfg.R_factor))
        cfg.snapshot_stride = int(run.get("snapshot_stride", cfg.snapshot_stride))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    cfg.control_csv = run.get("control_csv")
    if cp.has_section("initial"):
        cfg.initial = cp.get("initial", "expr", fallback=cfg.initial)
        cfg.initial_csv = cp.get("initial", "csv", fallback=None)
    if cp.has_section("target"):
        cfg.target = cp.get("target", "terms", fallback=cfg.target)
    return cfg


# ---------------------------------------------------------------- artifacts


def _header(cfg: RunConfig) -> str:
    return f"zkflat config sha256:{cfg.hash()}"


def _write_json(path: Path, doc: dict) -> None:
    from .synthesis import _jsonable

    path.write_text(json.dumps(_jsonable(doc), sort_keys=True, indent=1) + "\n", encoding="utf-8")


def _write_norms(path: Path, t, norms, cfg: RunConfig) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# {_header(cfg)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "norm"])
        for tk, v in zip(t, norms):
            w.writerow([repr(float(tk)), repr(float(v))])


def _initial_field(cfg: RunConfig, grid):
    from .domain import sample_function
    from .simulator import read_field_csv

    if cfg.initial_csv:
        if not Path(cfg.initial_csv).is_file():
            raise ConfigError(f"initial CSV {cfg.initial_csv} not found")
        return read_field_csv(cfg.initial_csv, grid)
    return sample_function(compile_expression(cfg.initial), grid)


# ---------------------------------------------------------------- commands


def cmd_gentable(cfg: RunConfig, out: Path, strict: bool, table_path: str | None = None) -> int:
    import numpy as np

    from .domain import make_basis
    from .genfun import GenFunTable, build_table, check_bound

    p = cfg.make_params()
    if table_path:
        if not Path(table_path).is_file():
            raise ConfigError(f"table {table_path} not found")
        table = GenFunTable.from_json(Path(table_path).read_text())
    else:
        table = build_table(p, make_basis(p.J_max))
    report = check_bound(table, np.linspace(-1.0, 0.0, 101))
    (out / "table.json").write_text(table.to_json() + "\n", encoding="utf-8")
    _write_json(out / "bounds.json", {"config_hash": cfg.hash(), **report.to_dict()})
    return EXIT_INVARIANT if strict and not report.ok else EXIT_OK


def _bounds_report(cfg: RunConfig, table=None) -> tuple[dict, bool]:
    import numpy as np

    from .domain import make_basis
    from .freeflow import build_mode_operator, energy_balance, evolve_mode, smoothing_diagnostic, trace_bound_diagnostic
    from .genfun import build_table, check_bound

    p = cfg.make_params()
    table = table or build_table(p, make_basis(p.J_max))
    bound = check_bound(table, np.linspace(-1.0, 0.0, 101))
    probe = compile_expression(ENERGY_PROBE, names=("x",))
    energy, smoothing, traces = [], [], []
    ok = bound.ok
    times = [t for t in (0.05, 0.1, 0.2, 0.4) if t < p.T]
    for j in range(1, p.J_max + 1):
        op = build_mode_operator(j, p)
        ev = evolve_mode(op, probe(op.x) * np.ones_like(op.x), p)
        eb = energy_balance(ev)
        eb_ok = abs(eb["relative_residual"]) <= 1e-6 and abs(eb["weighted_residual"]) <= 1e-5 * eb["initial"]
        ok = ok and eb_ok
        energy.append({"j": j, **eb, "ok": eb_ok})
        tnodes = [ev.t[ev.index_of(round(t / p.dt) * p.dt)] for t in times]
        sm = smoothing_diagnostic(ev, tnodes, min(6, ev.n_max))
        smoothing.append({"j": j, "C_fit": sm["C_fit"], "provenance": sm["provenance"]})
        tb = trace_bound_diagnostic(ev, tnodes, min(6, ev.n_max))
        traces.append({"j": j, "max_scaled": tb["max_scaled"]})
    doc = {
        "config_hash": cfg.hash(),
        "generating_function_bound": bound.to_dict(),
        "energy": energy,
        "energy_probe": ENERGY_PROBE,
        "smoothing": smoothing,
        "trace_bound": traces,
        "ok": ok,
    }
    return doc, ok


def cmd_bounds(cfg: RunConfig, out: Path, table_path: str | None = None) -> int:
    table = None
    if table_path:
        from .genfun import GenFunTable

        if not Path(table_path).is_file():
            raise ConfigError(f"table {table_path} not found")
        table = GenFunTable.from_json(Path(table_path).read_text())
    doc, ok = _bounds_report(cfg, table)
    _write_json(out / "bounds_report.json", doc)
    return EXIT_OK if ok else EXIT_INVARIANT


def cmd_free(cfg: RunConfig, out: Path, strict: bool) -> int:
    from .domain import Grid, make_basis
    from .freeflow import energy_balance, evolve_free, modes_from_field, write_snapshots_csv

    p = cfg.make_params()
    grid = Grid.from_params(p)
    u0 = _initial_field(cfg, grid)
    evs = evolve_free(modes_from_field(u0.values, grid.y_nodes, make_basis(p.J_max)), p)
    write_snapshots_csv(out / "snapshots.csv", evs, _header(cfg), stride=cfg.snapshot_stride)
    energy = [{"j": ev.j, **energy_balance(ev)} if ev.v0.any() else {"j": ev.j, "initial": 0.0}
              for ev in evs]
    # modes carrying only roundoff energy are judged against the dominant mode
    floor = 1e-12 * max(e["initial"] for e in energy)
    ok = all(abs(e.get("residual", 0.0)) <= 1e-6 * max(e["initial"], floor) for e in energy)
    _write_json(out / "free_summary.json", {"config_hash": cfg.hash(), "energy": energy,
                                            "energy_ok": ok})
    return EXIT_INVARIANT if strict and not ok else EXIT_OK


def _finish_control_run(cfg, out, p, h, res, reference, extra) -> int:
    from .domain import l2_norm
    from .simulator import compare_fields, run_summary, write_field_csv

    h.to_csv(out / "control.csv", _header(cfg))
    write_field_csv(out / "terminal.csv", res.terminal(), _header(cfg))
    _write_norms(out / "norms.csv", res.grid.t_nodes, res.norms(), cfg)
    if reference is None:
        ref_norm = extra.pop("reference_norm")
        err = l2_norm(res.terminal())
        rel = err / ref_norm if ref_norm > 0 else err
        cmp = {"l2_error": err, "relative_l2": rel}
    else:
        cmp = compare_fields(res.terminal(), reference)
        rel = cmp["relative_l2"]
    passed = rel <= cfg.tol_terminal
    doc = json.loads(run_summary(res, p, config_hash=cfg.hash(), terminal=cmp,
                                 tol_terminal=cfg.tol_terminal, passed=passed))
    doc.update(extra)
    _write_json(out / "summary.json", doc)
    return EXIT_OK if passed else EXIT_TOLERANCE


def cmd_null(cfg: RunConfig, out: Path) -> int:
    import numpy as np

    from .domain import Grid, l2_norm, make_basis
    from .freeflow import evolve_free, modes_from_field
    from .genfun import build_table, check_bound
    from .simulator import simulate_controlled
    from .synthesis import assemble_control, fit_series_decay, null_flat_output, splice_gap, truncation_bound

    p = cfg.make_params()
    grid = Grid.from_params(p)
    basis = make_basis(p.J_max)
    u0 = _initial_field(cfg, grid)
    table = build_table(p, basis)
    evs = evolve_free(modes_from_field(u0.values, grid.y_nodes, basis), p)
    z = null_flat_output(evs, p)
    h = assemble_control(table, z, grid)
    res = simulate_controlled(u0, h, p, method=cfg.method)
    C = check_bound(table, np.linspace(-1.0, 0.0, 101)).factorial_C
    fit = fit_series_decay(table, z, grid.t_nodes[grid.t_nodes >= p.tau], C, x=-1.0)
    tb = truncation_bound(p, fit["M_j"], fit["R"], fit["C"], lambdas=basis.lambdas)
    before = h.samples[:, grid.t_nodes < p.tau]
    extra = {
        "reference_norm": l2_norm(u0),
        "initial_norm": l2_norm(u0),
        "control_before_tau": float(np.max(np.abs(before))) if before.size else 0.0,
        "splice_gap": splice_gap(table, z, evs, grid, grid.t_nodes[np.argmin(np.abs(grid.t_nodes - p.tau / 2))]),
        "truncation_bound": tb,
        "series_fit": {k: v for k, v in fit.items() if k != "terms"},
    }
    return _finish_control_run(cfg, out, p, h, res, None, extra)


def cmd_reach(cfg: RunConfig, out: Path) -> int:
    from .domain import Field, Grid, make_basis
    from .genfun import build_table
    from .simulator import simulate_controlled
    from .synthesis import TargetSpec, assemble_control, check_compatibility, reach_coefficients, reach_flat_output

    p = cfg.make_params()
    grid = Grid.from_params(p)
    basis = make_basis(p.J_max)
    table = build_table(p, basis)
    target = TargetSpec(terms=parse_terms(cfg.target), description=cfg.target)
    try:
        target.validate(table)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    b = reach_coefficients(target, table, basis)
    z = reach_flat_output(b, p, R_factor=cfg.R_factor)
    h = assemble_control(table, z, grid)
    res = simulate_controlled(None, h, p, method=cfg.method)
    u1 = Field(target.evaluate(grid.x_nodes, grid.y_nodes, table), grid, "target")
    compat = check_compatibility(target, min(p.I_max, 6), table, basis)
    (out / "coefficients.json").write_text(b.to_json() + "\n", encoding="utf-8")
    extra = {"compatibility": compat, "flat_bounds": z.bounds}
    if not any(beta for *_, beta in target.terms):
        import numpy as np

        extra["control_max"] = float(np.max(np.abs(h.samples)))
        u1 = None
        extra["reference_norm"] = 0.0
    return _finish_control_run(cfg, out, p, h, res, u1, extra)


def cmd_simulate(cfg: RunConfig, out: Path) -> int:
    from .domain import Grid, l2_norm
    from .simulator import simulate_controlled, zero_control
    from .synthesis import read_control_csv

    p = cfg.make_params()
    grid = Grid.from_params(p)
    u0 = _initial_field(cfg, grid)
    if cfg.control_csv:
        if not Path(cfg.control_csv).is_file():
            raise ConfigError(f"control CSV {cfg.control_csv} not found")
        h = read_control_csv(cfg.control_csv, p.J_max)
    else:
        h = zero_control(p, grid)
    try:
        res = simulate_controlled(u0, h, p, method=cfg.method)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return _finish_control_run(cfg, out, p, h, res, None, {"reference_norm": l2_norm(u0)})


def cmd_plotdata(artifacts: list[str], out: Path) -> int:
    """Tidy long-format CSVs from control, norm-history and bound-report artifacts."""
    written = []
    for a in artifacts:
        path = Path(a)
        if not path.is_file():
            print(f"missing artifact {a}", file=sys.stderr)
            return EXIT_CONFIG
        dest = out / f"plot_{path.stem}.csv"
        with open(dest, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if path.suffix == ".json":
                doc = json.loads(path.read_text())
                doc = doc.get("generating_function_bound", doc)
                if "entries" not in doc:
                    print(f"unrecognized JSON artifact {a}", file=sys.stderr)
                    return EXIT_CONFIG
                w.writerow(["series", "i", "j", "value", "bound"])
                for e in doc["entries"]:
                    w.writerow(["bound", e["i"], e["j"], e["max_abs"], e["bound"]])
            else:
                with open(path, newline="") as src:
                    rows = list(csv.reader(ln for ln in src if not ln.startswith("#")))
                head = rows[0] if rows else []
                if head == ["t", "y", "h"]:
                    w.writerow(["series", "t", "y", "h"])
                    w.writerows(["control", *r] for r in rows[1:])
                elif head == ["t", "norm"]:
                    w.writerow(["series", "t", "norm"])
                    w.writerows(["norm", *r] for r in rows[1:])
                elif head == ["x", "y", "value"]:
                    w.writerow(["series", "x", "y", "value"])
                    w.writerows(["state", *r] for r in rows[1:])
                else:
                    print(f"unrecognized CSV artifact {a}", file=sys.stderr)
                    return EXIT_CONFIG
        written.append(str(dest))
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="zkflat", description="Flatness-based boundary control of the linear ZK equation.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="INI configuration file")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--strict", action="store_true", help="exit 2 on invariant violations")
        sp.add_argument("--threads", type=int, help="BLAS threads (default: $ZKFLAT_THREADS)")
        sp.add_argument("--tol-terminal", type=float, help="relative terminal tolerance")
        sp.add_argument("--imax", type=int, help="override I_max")
        sp.add_argument("--jmax", type=int, help="override J_max")
        sp.add_argument("--nt", type=int, help="override nt")

    for name, helptext in (("gentable", "build the generating-function table"),
                           ("null", "null-control pipeline"),
                           ("reach", "reachability pipeline"),
                           ("free", "free evolution with energy checks"),
                           ("simulate", "simulate a given control"),
                           ("bounds", "bound, energy and smoothing report")):
        sp = sub.add_parser(name, help=helptext)
        common(sp)
        if name in ("gentable", "bounds"):
            sp.add_argument("--table", help="check an existing table JSON instead of building one")
        if name == "simulate":
            sp.add_argument("--control", help="control CSV (t, y, h)")
    sp = sub.add_parser("plotdata", help="tidy CSVs for external plotting")
    sp.add_argument("artifacts", nargs="+")
    sp.add_argument("--out", help="output directory")
    return ap


def _set_threads(n: int | None) -> int | None:
    if n is None:
        env = os.environ.get("ZKFLAT_THREADS")
        n = int(env) if env and env.isdigit() else None
    if n is not None:
        if n < 1:
            raise ConfigError("--threads must be >= 1")
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(n)
    return n


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "plotdata":
            out = Path(args.out or ".")
            out.mkdir(parents=True, exist_ok=True)
            return cmd_plotdata(args.artifacts, out)
        _set_threads(args.threads)
        cfg = load_config(args.config, args.command if args.command in SCENARIOS else None)
        for key, attr in (("I_max", "imax"), ("J_max", "jmax"), ("nt", "nt")):
            if getattr(args, attr) is not None:
                cfg.params[key] = getattr(args, attr)
        if args.tol_terminal is not None:
            cfg.tol_terminal = args.tol_terminal
        if getattr(args, "control", None):
            cfg.control_csv = args.control
        if args.out:
            cfg.out = args.out
        cfg.validate()
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "gentable":
            return cmd_gentable(cfg, out, args.strict, args.table)
        if args.command == "bounds":
            return cmd_bounds(cfg, out, args.table)
        if args.command == "free":
            return cmd_free(cfg, out, args.strict)
        if args.command == "null":
            return cmd_null(cfg, out)
        if args.command == "reach":
            return cmd_reach(cfg, out)
        return cmd_simulate(cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
