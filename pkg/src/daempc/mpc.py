"""Receding-horizon loop on the reduced ODE.

At every sampling instant ``kδ`` the reduced state ``z1`` is read from
``E x`` through the initial-value selector, the constrained OCP with
terminal cost and set is solved, the first ``δ`` of the optimal input is
applied, and the plant (identical to the model) is propagated exactly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import numlin
from .ocp import STATUS_INFEASIBLE, DiscreteOcp, OcpSolution, discretize, solve_ocp
from .pencil import ConstraintSet, DaeSystem, StructureError, is_weakly_consistent
from .regularize import ReducedOde, build_reduced_ode, lift_trajectory
from .riccati import AssumptionReport, CareError, RiccatiSolution, certify_closed_loop, check_assumptions, solve_care
from .terminal import TerminalIngredients, build_terminal, vf_eval


class PipelineError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class FeasibilityLost(RuntimeError):
    def __init__(self, k: int, z1):
        super().__init__(f"feasibility lost at k={k} (z1 = {np.array2string(np.asarray(z1), precision=6)})")
        self.k = k
        self.z1 = np.asarray(z1)


@dataclass(frozen=True)
class MpcConfig:
    delta: float
    T: float
    substeps: int = 10
    n_steps: int = 100
    use_terminal: bool = True
    eps: float = 1e-8
    stop_below: float = 1e-12
    monitor_factor: int = 10

    def __post_init__(self):
        if not self.delta > 0 or not self.T > self.delta:
            raise ValueError("need 0 < delta < T")
        ratio = self.T / self.delta
        if abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise ValueError(f"T must be an integer multiple of delta (T/delta = {ratio})")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")

    @property
    def horizon_multiple(self) -> int:
        return int(round(self.T / self.delta))

    @property
    def N(self) -> int:
        return self.horizon_multiple * self.substeps


@dataclass(frozen=True)
class Pipeline:
    reduced: ReducedOde
    assumptions: AssumptionReport
    riccati: RiccatiSolution
    terminal: TerminalIngredients


@dataclass(frozen=True)
class StepResult:
    u_applied: np.ndarray
    v_applied: np.ndarray
    z_sub: np.ndarray
    z_next: np.ndarray
    solution: OcpSolution
    warm_next: np.ndarray


@dataclass(frozen=True)
class ClosedLoopTrace:
    """Samples at ``t_k = kδ`` plus the substep grid used for monitoring."""

    times: np.ndarray
    x_path: np.ndarray
    u_path: np.ndarray
    z1_path: np.ndarray
    stage_costs: np.ndarray
    vf_values: np.ndarray
    in_region_flags: np.ndarray
    ocp_statuses: tuple
    ocp_costs: np.ndarray
    fine_times: np.ndarray = field(repr=False)
    fine_x: np.ndarray = field(repr=False)
    fine_u: np.ndarray = field(repr=False)
    fine_z1: np.ndarray = field(repr=False)
    grid_violation: float = 0.0
    intersample_violation: float = 0.0
    rho: float = np.nan
    pipeline: Optional[Pipeline] = field(default=None, repr=False)


def build_pipeline(sys: DaeSystem, constraints: ConstraintSet, S, seed: int = 0,
                   rho_cap: float = 1e6) -> Pipeline:
    """Regularize, check assumptions, solve the Riccati equation, build terminal ingredients."""
    try:
        red = build_reduced_ode(sys, constraints, S, seed=seed)
    except StructureError as exc:
        raise PipelineError("regularize", str(exc)) from exc
    report = check_assumptions(red)
    if not (report.s_psd and report.r_pd):
        raise PipelineError("riccati", f"assumptions violated: {report.failures()}")
    if not report.passed:
        warnings.warn(f"standing assumptions not all met: {report.failures()}", stacklevel=2)
    try:
        sol = solve_care(red)
    except (CareError, numlin.NumlinError) as exc:
        raise PipelineError("riccati", str(exc)) from exc
    if not certify_closed_loop(red, sol):
        raise PipelineError("riccati", "closed loop Â - B̂K̂ is not certified Hurwitz")
    ing = build_terminal(red, sol, constraints, cap=rho_cap)
    return Pipeline(red, report, sol, ing)


def mpc_step(z1_k, docp: DiscreteOcp, ing: TerminalIngredients, substeps: int,
             warm=None, use_terminal: bool = True, k: int = 0, eps: float = 1e-8) -> StepResult:
    """Solve the OCP at ``z1_k`` and apply its first ``substeps`` grid inputs."""
    z = np.asarray(z1_k, dtype=float).ravel()
    sol = solve_ocp(docp, z, use_terminal=use_terminal, warm=warm, eps=eps)
    if sol.status == STATUS_INFEASIBLE:
        raise FeasibilityLost(k, z)
    M = substeps
    u = sol.u_grid[:, :M]
    z_sub = np.zeros((docp.n_hat, M + 1))
    z_sub[:, 0] = z
    for j in range(M):
        z_sub[:, j + 1] = docp.Ad @ z_sub[:, j] + docp.Bd @ u[:, j]
    v = np.column_stack([docp.reduced_input(z_sub[:, j], u[:, j]) for j in range(M)]) \
        if docp.m_prime else np.zeros((0, M))
    # shift and extend with the terminal law (u = 0 with a prestabilizing gain)
    mp = docp.m_prime
    y = sol.decision
    shifted = np.concatenate([y[M * mp :], np.zeros(min(M * mp, y.size))])[: y.size]
    if docp.gain is None and docp.K_term is not None and mp:
        # without prestabilization extend with the LQR input along the predicted states
        for j in range(max(0, y.size // mp - M), y.size // mp):
            zj = sol.z_grid[:, min(j + M, docp.N)]
            shifted[j * mp : (j + 1) * mp] = -docp.K_term @ zj
    return StepResult(u, v, z_sub, z_sub[:, -1].copy(), sol, shifted)


def run_closed_loop(sys: DaeSystem, constraints: ConstraintSet, S, x0, cfg: MpcConfig,
                    seed: int = 0, pipeline: Optional[Pipeline] = None) -> ClosedLoopTrace:
    if constraints is None:
        constraints = ConstraintSet.empty(sys.n, sys.m)
    pl = pipeline or build_pipeline(sys, constraints, S, seed)
    red, ing = pl.reduced, pl.terminal
    x0 = np.asarray(x0, dtype=float).ravel()
    if not is_weakly_consistent(sys, red, x0):
        raise PipelineError("initial value", "x0 is not weakly consistent")
    docp = discretize(red, cfg.T, cfg.N, terminal=ing, gain=ing.K_gain)
    M = cfg.substeps
    z = red.z1_from_state(x0)
    zs, vs, us_dec, costs, vfs, flags, statuses, ocp_costs = [z], [], [], [], [], [], [], []
    fine_z, fine_v = [], []
    warm = None
    for k in range(cfg.n_steps):
        vfs.append(vf_eval(ing, z))
        if vfs[-1] < cfg.stop_below:
            break
        step = mpc_step(z, docp, ing, M, warm=warm, use_terminal=cfg.use_terminal, k=k, eps=cfg.eps)
        stage = sum(
            float(np.concatenate([step.z_sub[:, j], step.u_applied[:, j]]) @ docp.Sd
                  @ np.concatenate([step.z_sub[:, j], step.u_applied[:, j]]))
            for j in range(M)
        )
        costs.append(stage)
        statuses.append(step.solution.status)
        ocp_costs.append(step.solution.cost)
        fine_z.append(step.z_sub[:, :M])
        fine_v.append(step.v_applied)
        us_dec.append(step.u_applied)
        vs.append(step.v_applied[:, 0])
        z = step.z_next
        zs.append(z)
        warm = step.warm_next
    else:
        vfs.append(vf_eval(ing, z))
    K = len(costs)
    nh, mp = red.n_hat, red.m_prime
    z_path = np.column_stack(zs)
    # input at the final sample follows the terminal law
    v_end = -ing.K_gain @ z
    v_path = np.column_stack(vs + [v_end]) if mp else np.zeros((0, K + 1))
    x_path, u_path = lift_trajectory(red, z_path, v_path)
    vf_arr = np.array(vfs)
    flags_arr = vf_arr <= ing.rho * (1 + 1e-9)

    fz = np.hstack(fine_z + [z[:, None]]) if K else z[:, None]
    fv = np.hstack(fine_v + [v_end[:, None]]) if K else v_end[:, None]
    fx, fu = lift_trajectory(red, fz, fv)
    ft = np.arange(fz.shape[1]) * docp.h

    grid_violation = _max_violation(constraints, fx, fu)
    inter = _intersample_violation(red, docp, constraints, fine_z, us_dec, cfg.monitor_factor)
    return ClosedLoopTrace(
        times=np.arange(K + 1) * cfg.delta,
        x_path=x_path, u_path=u_path, z1_path=z_path,
        stage_costs=np.array(costs), vf_values=vf_arr, in_region_flags=flags_arr,
        ocp_statuses=tuple(statuses), ocp_costs=np.array(ocp_costs),
        fine_times=ft, fine_x=fx, fine_u=fu, fine_z1=fz,
        grid_violation=grid_violation, intersample_violation=inter,
        rho=ing.rho, pipeline=pl,
    )


def _max_violation(constraints: ConstraintSet, x, u) -> float:
    if constraints.p == 0 or x.shape[1] == 0:
        return 0.0
    vals = constraints.F @ x + constraints.G @ u
    return float(max(0.0, np.max(vals) - 1.0))


def _intersample_violation(red, docp: DiscreteOcp, constraints, fine_z, us, factor: int) -> float:
    """Constraint violation on a grid ``factor`` times finer than the substeps."""
    if constraints.p == 0 or not fine_z or factor <= 1:
        return 0.0
    nh = docp.n_hat
    A = red.A_hat if docp.gain is None else red.A_hat - red.B_hat @ docp.gain
    Ad, Bd, _ = numlin.van_loan(A, red.B_hat, np.zeros((nh + docp.m_prime,) * 2), docp.h / factor)
    worst = 0.0
    for zk, uk in zip(fine_z, us):
        for j in range(zk.shape[1]):
            zz = zk[:, j]
            pts_z, pts_v = [], []
            for _ in range(factor):
                pts_z.append(zz)
                pts_v.append(docp.reduced_input(zz, uk[:, j]))
                zz = Ad @ zz + Bd @ uk[:, j]
            x, u = lift_trajectory(red, np.column_stack(pts_z), np.column_stack(pts_v))
            worst = max(worst, _max_violation(constraints, x, u))
    return worst


def verify_decrease(trace: ClosedLoopTrace, tol: float = 1e-7) -> dict:
    """Decrease inequality on steps whose endpoints both lie in the terminal set."""
    gaps = trace.vf_values[1 : len(trace.stage_costs) + 1] - trace.vf_values[: len(trace.stage_costs)] + trace.stage_costs
    inside = trace.in_region_flags[:-1][: gaps.size] & trace.in_region_flags[1:][: gaps.size]
    bound = tol * (1 + trace.vf_values[: gaps.size])
    bad = np.nonzero(inside & (gaps > bound))[0]
    return {
        "gaps": gaps,
        "checked": np.nonzero(inside)[0],
        "passed": bool(bad.size == 0),
        "first_failure": int(bad[0]) if bad.size else None,
    }


def verify_invariance(trace_or_values, ingredients: Optional[TerminalIngredients] = None,
                      slack: float = 1e-8, rho: Optional[float] = None) -> dict:
    """After the first strictly interior sample, every later sample stays in the set."""
    if isinstance(trace_or_values, ClosedLoopTrace):
        vf = trace_or_values.vf_values
        times = trace_or_values.times
    else:
        vf = np.asarray(trace_or_values, dtype=float)
        times = np.arange(vf.size, dtype=float)
    r = rho if rho is not None else (ingredients.rho if ingredients is not None else trace_or_values.rho)
    interior = np.nonzero(vf < r * (1 - 1e-6))[0]
    if interior.size == 0:
        return {"entry_index": None, "entry_time": None, "passed": True, "violation_index": None}
    k0 = int(interior[0])
    out = np.nonzero(vf[k0:] > r * (1 + slack))[0]
    return {
        "entry_index": k0,
        "entry_time": float(times[k0]),
        "passed": bool(out.size == 0),
        "violation_index": int(k0 + out[0]) if out.size else None,
    }
