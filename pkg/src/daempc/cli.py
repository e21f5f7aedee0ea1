"""Command-line front end.

    daempc analyze    SYSTEM [--report R.json]
    daempc regularize SYSTEM [--report R.json]
    daempc ocp        SYSTEM [--horizon T] [--no-terminal] [--report R.json]
    daempc mpc        SYSTEM [--delta D] [--horizon T] [--steps K] [--out trace.csv] [--report R.json]

SYSTEM is a JSON file or ``builtin:NAME`` for a bundled example
(singular5, nilpotent, identity, singular).  Exit codes: 0 success,
2 rejected input (parse error or unsupported structure), 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import warnings
from importlib import resources

import numpy as np

from . import __doc__ as _pkg_doc
from .mpc import FeasibilityLost, MpcConfig, PipelineError, build_pipeline, run_closed_loop, verify_invariance
from .numlin import NumlinError, sym_eigvals
from .ocp import discretize, infinite_horizon_value, solve_ocp
from .pencil import (
    ConstraintSet,
    DaeSystem,
    StructureError,
    impulse_controllable,
    is_regular,
    is_weakly_consistent,
    kronecker_structure,
)
from .regularize import build_reduced_ode, display_cost
from .riccati import check_assumptions
from .terminal import vf_eval

EXIT_OK, EXIT_REJECT, EXIT_RUNTIME = 0, 2, 3


class InputError(ValueError):
    pass


# ---------------------------------------------------------------------------
# system files
# ---------------------------------------------------------------------------


def _read_text(path: str) -> str:
    if path.startswith("builtin:"):
        name = path.split(":", 1)[1]
        try:
            return resources.files("daempc").joinpath("data", f"{name}.json").read_text()
        except FileNotFoundError as exc:
            raise InputError(f"no bundled example named {name!r}") from exc
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc


def _matrix(doc, key, rows=None, cols=None, required=True):
    if key not in doc:
        if required:
            raise InputError(f"field {key!r}: missing")
        return None
    try:
        M = np.array(doc[key], dtype=float)
    except (TypeError, ValueError) as exc:
        raise InputError(f"field {key!r}: not a numeric matrix ({exc})") from exc
    if M.ndim == 1 and M.size == 0:
        M = M.reshape(0, 0)
    if M.ndim != 2:
        raise InputError(f"field {key!r}: expected a list of rows, got shape {M.shape}")
    if rows is not None and M.shape[0] != rows:
        raise InputError(f"field {key!r}: expected {rows} rows, got {M.shape[0]}")
    if cols is not None and M.shape[1] != cols:
        raise InputError(f"field {key!r}: expected {cols} columns, got {M.shape[1]}")
    if not np.all(np.isfinite(M)):
        raise InputError(f"field {key!r}: non-finite entries")
    return M


def load_system(path: str) -> dict:
    """Parse a system file into ``DaeSystem``, constraints, cost, x0 and mpc settings."""
    text = _read_text(path)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise InputError(f"{path}: top level must be an object")
    E = _matrix(doc, "E")
    ell, n = E.shape
    A = _matrix(doc, "A", ell, n)
    B = np.array(doc.get("B", [[]] * ell), dtype=float)
    if B.size == 0:
        B = np.zeros((ell, 0))
    else:
        B = _matrix(doc, "B", ell)
    m = B.shape[1]
    F = _matrix(doc, "F", cols=n, required=False)
    G = _matrix(doc, "G", cols=m, required=False)
    if F is None and G is None:
        F, G = np.zeros((0, n)), np.zeros((0, m))
    elif F is None or G is None:
        raise InputError("fields 'F' and 'G' must be given together")
    if G.shape[0] != F.shape[0]:
        raise InputError(f"field 'G': expected {F.shape[0]} rows, got {G.shape[0]}")
    if m == 0 and G.shape[1] != 0:
        raise InputError("field 'G': system has no inputs")
    S = _matrix(doc, "S", n + m, n + m, required=False)
    if S is None:
        S = np.eye(n + m)
    skew = np.max(np.abs(S - S.T), initial=0.0)
    if skew > 1e-12:
        raise InputError(f"field 'S': not symmetric (skew part {skew:.3e})")
    if skew > 0:
        warnings.warn("S symmetrized", stacklevel=2)
        S = 0.5 * (S + S.T)
    x0 = np.array(doc.get("x0", np.zeros(n)), dtype=float).ravel()
    if x0.shape[0] != n:
        raise InputError(f"field 'x0': expected length {n}, got {x0.shape[0]}")
    mpc = doc.get("mpc", {})
    if not isinstance(mpc, dict):
        raise InputError("field 'mpc': expected an object")
    return {
        "name": doc.get("name", path),
        "system": DaeSystem(E, A, B),
        "constraints": ConstraintSet(F, G),
        "S": S,
        "x0": x0,
        "mpc": mpc,
    }


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


def _num(x):
    if isinstance(x, np.ndarray):
        return [_num(v) for v in x]
    if isinstance(x, (list, tuple)):
        return [_num(v) for v in x]
    if isinstance(x, (np.floating, float)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    return x


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.10g}"
    if isinstance(v, list):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


def _emit(report: dict, out, report_path=None):
    """Print every field of the report; write the same document as JSON."""
    report = {k: _num(v) for k, v in report.items()}

    def walk(d, prefix=""):
        for k, v in d.items():
            if isinstance(v, dict):
                walk(v, f"{prefix}{k}.")
            else:
                print(f"{prefix}{k}: {_fmt(v)}", file=out)

    walk(report)
    if report_path:
        with open(report_path, "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2, sort_keys=False)
            fh.write("\n")


def _structure_report(sysd) -> dict:
    s = sysd["system"]
    regular = is_regular(s)
    ks = kronecker_structure(s.E, s.A)
    rep = {
        "regular": regular,
        "index": ks.nilpotency_index,
        "blocks": {"l_U": ks.l_U, "n_U": ks.n_U, "n_J": ks.n_J, "n_N": ks.n_N, "l_O": ks.l_O, "n_O": ks.n_O},
        "column_minimal_indices": list(ks.underdetermined_column_indices),
        "row_minimal_indices": list(ks.overdetermined_row_indices),
        "transform_condition": ks.condition,
        "impulse_controllable": impulse_controllable(s) if regular else "n/a (singular)",
    }
    return rep


def cmd_analyze(args, out) -> int:
    sysd = load_system(args.system)
    rep = {"system": sysd["name"], **_structure_report(sysd)}
    red = build_reduced_ode(sysd["system"], sysd["constraints"], sysd["S"], seed=args.seed)
    ar = check_assumptions(red)
    rep["route"] = red.route
    rep["n_hat"] = red.n_hat
    rep["m_prime"] = red.m_prime
    rep["assumptions"] = {
        "s_psd": ar.s_psd, "stabilizable": ar.stabilizable, "r_pd": ar.r_pd,
        "observable": ar.observable, "rank_match": ar.rank_match, "pass": ar.passed,
    }
    head = "regular" if rep["regular"] else "singular"
    rep["summary"] = (
        f"{head}, index {rep['index']}, route: {red.route}, index-1 reduced dim n̂={red.n_hat}, "
        f"LQ assumptions: {'pass' if ar.passed else 'fail (' + ', '.join(ar.failures()) + ')'}"
    )
    _emit(rep, out, args.report)
    return EXIT_OK


def cmd_regularize(args, out) -> int:
    sysd = load_system(args.system)
    red = build_reduced_ode(sysd["system"], sysd["constraints"], sysd["S"], seed=args.seed)
    reg = red.regularization
    rep = {"system": sysd["name"], "route": red.route, "n_hat": red.n_hat, "m_prime": red.m_prime}
    if red.route == "feedback":
        rep["K"] = reg.K
    else:
        rep["T_hat"] = reg.T_hat
        rep["U0"] = reg.U0
        rep["U1"] = reg.U1
        rep["E_r"] = reg.E_r
        rep["A_r"] = reg.A_r
        rep["B_r"] = reg.B_r
    rep["A_hat"] = red.A_hat
    rep["B_hat"] = red.B_hat
    rep["X"] = red.X
    rep["S_hat_implemented_XtSX"] = red.S_hat
    rep["S_hat_display_XinvSX"] = display_cost(red)
    rep["init_selector"] = red.init_selector
    _emit(rep, out, args.report)
    return EXIT_OK


def _mpc_settings(sysd, args):
    mb = sysd["mpc"]
    delta = args.delta if args.delta is not None else float(mb.get("delta", 0.1))
    if args.horizon is not None:
        T = args.horizon
    else:
        T = delta * int(mb.get("horizon_multiple", 3))
    substeps = args.substeps if args.substeps is not None else int(mb.get("substeps", 10))
    steps = args.steps if args.steps is not None else int(mb.get("steps", 100))
    return delta, T, substeps, steps


def cmd_ocp(args, out) -> int:
    sysd = load_system(args.system)
    delta, T, substeps, _ = _mpc_settings(sysd, args)
    pl = build_pipeline(sysd["system"], sysd["constraints"], sysd["S"], seed=args.seed)
    red, ing = pl.reduced, pl.terminal
    if not is_weakly_consistent(sysd["system"], red, sysd["x0"]):
        raise PipelineError("initial value", "x0 is not weakly consistent")
    N = max(1, int(round(T / delta * substeps)))
    use_terminal = not args.no_terminal
    docp = discretize(red, T, N, terminal=ing, gain=ing.K_gain)
    z0 = red.z1_from_state(sysd["x0"])
    sol = solve_ocp(docp, z0, use_terminal=use_terminal)
    if sol.status == "infeasible":
        raise FeasibilityLost(0, z0)
    vf_end = vf_eval(ing, sol.terminal_state)
    rep = {
        "system": sysd["name"],
        "horizon": T, "grid_steps": N, "terminal": use_terminal,
        "status": sol.status, "cost": sol.cost,
        "primal_residual": sol.prim_res, "dual_residual": sol.dual_res,
        "iterations": sol.iterations, "polished": sol.polished,
        "first_input_v": sol.v_grid[:, 0] if sol.v_grid.size else [],
        "z1_0": z0, "z1_T": sol.terminal_state,
        "V_f_end": vf_end, "rho": ing.rho,
        "terminal_membership_residual": max(0.0, vf_end - ing.rho),
        "terminal_boundary_gap": ing.rho - vf_end,
        "V_inf": infinite_horizon_value(pl.riccati, z0),
    }
    _emit(rep, out, args.report)
    return EXIT_OK


def _trace_csv(trace, n, m) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"x_{i + 1}" for i in range(n)] + [f"u_{i + 1}" for i in range(m)]
               + ["stage_cost", "V_f", "in_terminal_region", "ocp_status"])
    K = len(trace.stage_costs)
    for k in range(trace.times.size):
        row = [f"{trace.times[k]:.12g}"]
        row += [f"{v:.17g}" for v in trace.x_path[:, k]]
        row += [f"{v:.17g}" for v in trace.u_path[:, k]]
        row.append(f"{trace.stage_costs[k]:.17g}" if k < K else "")
        row.append(f"{trace.vf_values[k]:.17g}")
        row.append("1" if trace.in_region_flags[k] else "0")
        row.append(trace.ocp_statuses[k] if k < K else "")
        w.writerow(row)
    return buf.getvalue()


def cmd_mpc(args, out) -> int:
    sysd = load_system(args.system)
    delta, T, substeps, steps = _mpc_settings(sysd, args)
    cfg = MpcConfig(delta=delta, T=T, substeps=substeps, n_steps=steps, use_terminal=not args.no_terminal)
    pl = build_pipeline(sysd["system"], sysd["constraints"], sysd["S"], seed=args.seed)
    trace = run_closed_loop(sysd["system"], sysd["constraints"], sysd["S"], sysd["x0"], cfg, pipeline=pl)
    s = sysd["system"]
    text = _trace_csv(trace, s.n, s.m)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    inv = verify_invariance(trace)
    P = pl.riccati.P_hat
    rep = {
        "system": sysd["name"],
        "delta": delta, "horizon": T, "substeps": substeps, "steps_run": len(trace.stage_costs),
        "rho": pl.terminal.rho,
        "P_hat_eigenvalues": sym_eigvals(P) if P.size else [],
        "entry_time": inv["entry_time"] if inv["entry_time"] is not None else "never",
        "invariance": inv["passed"],
        "final_z1_norm": float(np.linalg.norm(trace.z1_path[:, -1])),
        "grid_violation": trace.grid_violation,
        "intersample_violation": trace.intersample_violation,
        "total_cost": float(np.sum(trace.stage_costs)),
    }
    if not args.out:
        out.write(text)
    _emit(rep, out, args.report)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="daempc", description=_pkg_doc)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("system", help="system JSON file or builtin:NAME")
        sp.add_argument("--seed", type=int, default=0, help="seed for randomized steps (default 0)")
        sp.add_argument("--report", help="write a JSON report to this path")

    common(sub.add_parser("analyze", help="structure, route and assumption checks"))
    common(sub.add_parser("regularize", help="print the regularization and reduced ODE"))
    for name in ("ocp", "mpc"):
        sp = sub.add_parser(name, help="solve one OCP" if name == "ocp" else "run the closed loop")
        common(sp)
        sp.add_argument("--horizon", type=float, help="prediction horizon T")
        sp.add_argument("--delta", type=float, help="sampling time δ")
        sp.add_argument("--substeps", type=int, help="grid steps per δ")
        sp.add_argument("--steps", type=int, help="closed-loop steps")
        sp.add_argument("--no-terminal", action="store_true", help="drop terminal cost and set")
        if name == "mpc":
            sp.add_argument("--out", help="write the CSV trace here instead of stdout")
    return p


_COMMANDS = {"analyze": cmd_analyze, "regularize": cmd_regularize, "ocp": cmd_ocp, "mpc": cmd_mpc}


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args, out)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_REJECT
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_REJECT if exc.stage == "regularize" else EXIT_RUNTIME
    except StructureError as exc:
        print(f"error: [structure] {exc}", file=sys.stderr)
        return EXIT_REJECT
    except FeasibilityLost as exc:
        print(f"error: [mpc] {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (NumlinError, ValueError) as exc:
        print(f"error: [runtime] {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
