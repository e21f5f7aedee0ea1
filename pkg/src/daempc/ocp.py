"""Finite-horizon constrained optimal control on the reduced ODE.

The horizon ``[0, T]`` is split into ``N`` steps of length ``h``.  On each
step the decision input ``u_k`` is held constant.  Without a gain the
reduced input is ``v = u_k``; with a prestabilizing gain ``K`` it is
``v(t) = -K z(t) + u_k``, so that ``u ≡ 0`` reproduces the LQR law
exactly.  Dynamics and cost are integrated exactly (matrix exponentials),
the states are eliminated, and the resulting quadratic program with
linear rows and one ellipsoid is solved by operator splitting followed by
an active-set polish.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels, numlin

STATUS_OPTIMAL = "optimal"
STATUS_MAX_ITER = "max_iter"
STATUS_INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class DiscreteOcp:
    """Exact discretization; ``Sd`` acts on ``(z_k; u_k)`` for one step."""

    N: int
    h: float
    Ad: np.ndarray
    Bd: np.ndarray
    Sd: np.ndarray
    rows: np.ndarray
    gain: Optional[np.ndarray] = None
    P_term: Optional[np.ndarray] = None
    rho: Optional[float] = None
    K_term: Optional[np.ndarray] = None

    @property
    def n_hat(self) -> int:
        return self.Ad.shape[0]

    @property
    def m_prime(self) -> int:
        return self.Bd.shape[1]

    @property
    def T(self) -> float:
        return self.N * self.h

    @property
    def Qd(self):
        return self.Sd[: self.n_hat, : self.n_hat]

    @property
    def Hd(self):
        return self.Sd[: self.n_hat, self.n_hat :]

    @property
    def Rd(self):
        return self.Sd[self.n_hat :, self.n_hat :]

    def reduced_input(self, z, u):
        """Reduced input ``v`` at a grid point from state and decision input."""
        return u if self.gain is None else u - self.gain @ z


@dataclass(frozen=True)
class OcpSolution:
    u_grid: np.ndarray
    v_grid: np.ndarray
    z_grid: np.ndarray
    cost: float
    status: str
    prim_res: float
    dual_res: float
    iterations: int
    decision: np.ndarray
    polished: bool = False

    @property
    def terminal_state(self):
        return self.z_grid[:, -1]


def discretize(reduced, T: float, N: int, terminal=None, gain=None) -> DiscreteOcp:
    """ZOH dynamics and exact per-step cost for ``(z1; v)^T Ŝ (z1; v)``.

    ``terminal`` supplies ``(P̂, ρ, K̂)`` for the terminal cost and set.  With
    ``gain`` the decision input is the offset from ``v = -gain z``.
    """
    if not T > 0 or int(N) < 1:
        raise ValueError("need T > 0 and N >= 1")
    N = int(N)
    h = T / N
    nh, mp = reduced.n_hat, reduced.m_prime
    A, B, S = reduced.A_hat, reduced.B_hat, reduced.S_hat
    rows = reduced.constraint_rows
    if gain is not None:
        gain = np.asarray(gain, dtype=float).reshape(mp, nh)
        Tm = np.block([[np.eye(nh), np.zeros((nh, mp))], [-gain, np.eye(mp)]])
        A = A - B @ gain
        S = Tm.T @ S @ Tm
        rows = rows @ Tm
    Ad, Bd, Sd = numlin.van_loan(A, B, S, h)
    P_term = rho = K_term = None
    if terminal is not None:
        P_term, rho, K_term = terminal.P_hat, float(terminal.rho), terminal.K_gain
    return DiscreteOcp(N, h, Ad, Bd, Sd, rows, gain, P_term, rho, K_term)


# ---------------------------------------------------------------------------
# condensing
# ---------------------------------------------------------------------------


@dataclass
class _Condensed:
    P: np.ndarray
    q: np.ndarray
    const: float
    A_box: np.ndarray
    b_box: np.ndarray
    ell_M: Optional[np.ndarray]
    ell_c: Optional[np.ndarray]
    Zy: np.ndarray
    Zc: np.ndarray
    Uy: np.ndarray
    Uc: np.ndarray
    trivially_infeasible: bool
    z0: np.ndarray


def _condense(docp: DiscreteOcp, z0, use_terminal: bool) -> _Condensed:
    N, nh, mp = docp.N, docp.n_hat, docp.m_prime
    if use_terminal and docp.P_term is None:
        raise ValueError("terminal ingredients were not supplied to discretize")
    tie = use_terminal and mp > 0
    nd = (N - 1 if tie else N) * mp
    # inputs U = Uy y + Uc z0 ; states Z_k = Zy[k] y + Zc[k] z0
    Uy = np.zeros((N, mp, nd))
    Uc = np.zeros((N, mp, nh))
    for k in range(N - 1 if tie else N):
        Uy[k, :, k * mp : (k + 1) * mp] = np.eye(mp)
    Zy = np.zeros((N + 1, nh, nd))
    Zc = np.zeros((N + 1, nh, nh))
    Zc[0] = np.eye(nh)
    for k in range(N):
        if tie and k == N - 1 and docp.gain is None:
            # last input follows the terminal LQR law
            Uy[k] = -docp.K_term @ Zy[k]
            Uc[k] = -docp.K_term @ Zc[k]
        Zy[k + 1] = docp.Ad @ Zy[k] + docp.Bd @ Uy[k]
        Zc[k + 1] = docp.Ad @ Zc[k] + docp.Bd @ Uc[k]

    P = np.zeros((nd, nd))
    q = np.zeros(nd)
    const = 0.0
    for k in range(N):
        Gy = np.vstack([Zy[k], Uy[k]])
        gc = np.vstack([Zc[k], Uc[k]]) @ z0
        SG = docp.Sd @ Gy
        P += 2.0 * Gy.T @ SG
        q += 2.0 * SG.T @ gc
        const += gc @ docp.Sd @ gc
    if use_terminal:
        cN = Zc[N] @ z0
        P += 2.0 * Zy[N].T @ docp.P_term @ Zy[N]
        q += 2.0 * Zy[N].T @ docp.P_term @ cN
        const += cN @ docp.P_term @ cN
    P = 0.5 * (P + P.T)

    A_rows, b_rows = [], []
    infeasible = False
    if docp.rows.shape[0]:
        for k in range(N + 1):
            ku = min(k, N - 1)
            Gy = np.vstack([Zy[k], Uy[ku]])
            gc = np.vstack([Zc[k], Uc[ku]]) @ z0
            A_rows.append(docp.rows @ Gy)
            b_rows.append(1.0 - docp.rows @ gc)
    if A_rows:
        A_box = np.vstack(A_rows)
        b_box = np.concatenate(b_rows)
        scale = np.max(np.abs(A_box), axis=1) if nd else np.zeros(A_box.shape[0])
        dead = scale <= 1e-14
        if np.any(b_box[dead] < -1e-9):
            infeasible = True
        A_box, b_box = A_box[~dead], b_box[~dead]
    else:
        A_box, b_box = np.zeros((0, nd)), np.zeros(0)

    ell_M = ell_c = None
    if use_terminal:
        ell_M, ell_c = Zy[N], Zc[N] @ z0
        if not np.any(np.abs(ell_M) > 1e-14) and ell_c @ docp.P_term @ ell_c > docp.rho * (1 + 1e-9):
            infeasible = True
    return _Condensed(P, q, const, A_box, b_box, ell_M, ell_c, Zy, Zc, Uy, Uc, infeasible, z0)


# ---------------------------------------------------------------------------
# solver
# ---------------------------------------------------------------------------


def _admm(c: _Condensed, P_ell, rho_ell, x0, max_iter, eps):
    nd = c.P.shape[0]
    nbox = c.A_box.shape[0]
    has_ell = c.ell_M is not None
    A = np.vstack([c.A_box, c.ell_M]) if has_ell else c.A_box
    A = np.ascontiguousarray(A)
    m = A.shape[0]
    if has_ell:
        lam, V = numlin.sym_eigh(P_ell)
        ell_c = c.ell_c.copy()
    else:
        lam, V, ell_c = np.ones(1), np.eye(1), np.zeros(1)
    sigma, alpha = 1e-6, 1.6
    rho = 1.0
    x = np.zeros(nd) if x0 is None else np.array(x0, dtype=float)
    z = A @ x
    y = np.zeros(m)
    hbox = np.ascontiguousarray(c.b_box)
    AtA = A.T @ A
    Kinv = np.linalg.inv(c.P + sigma * np.eye(nd) + rho * AtA)
    done = 0
    status, prim, dual = 0, np.inf, np.inf
    while done < max_iter:
        chunk = min(50, max_iter - done)
        x, z, y, status, k, prim, dual = _kernels.admm_chunk(
            c.P, c.q, A, Kinv, hbox, nbox, ell_c, lam, np.ascontiguousarray(V), float(rho_ell or 1.0),
            has_ell, x, z, y, rho, sigma, alpha, chunk, eps, eps, 1e-9,
        )
        done += k
        if status:
            break
        Ax = A @ x
        p_scale = max(np.max(np.abs(Ax), initial=0.0), np.max(np.abs(z), initial=0.0), 1e-30)
        d_scale = max(np.max(np.abs(c.P @ x), initial=0.0), np.max(np.abs(A.T @ y), initial=0.0),
                      np.max(np.abs(c.q), initial=0.0), 1e-30)
        ratio = np.sqrt((prim / p_scale) / max(dual / d_scale, 1e-30))
        new_rho = float(np.clip(rho * ratio, 1e-6, 1e6))
        if new_rho > 5 * rho or new_rho < 0.2 * rho:
            rho = new_rho
            Kinv = np.linalg.inv(c.P + sigma * np.eye(nd) + rho * AtA)
    return x, z, y, int(status), done, float(prim), float(dual)


def _kkt(P, q, Aeq, beq):
    nd, k = P.shape[0], Aeq.shape[0]
    K = np.block([[P, Aeq.T], [Aeq, np.zeros((k, k))]])
    rhs = np.concatenate([-q, beq])
    sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    return sol[:nd], sol[nd:]


def _polish(c: _Condensed, P_ell, rho_ell, x, y_dual):
    """Re-solve with the detected active set as equalities; None if it does not validate."""
    nbox = c.A_box.shape[0]
    scale = max(1.0, np.max(np.abs(y_dual), initial=0.0))
    slack = c.b_box - c.A_box @ x
    active = (y_dual[:nbox] > 1e-7 * scale) | (slack < 1e-7 * (1 + np.abs(c.b_box)))
    ell_active = False
    if c.ell_M is not None:
        e = c.ell_M @ x + c.ell_c
        ell_active = e @ P_ell @ e >= rho_ell * (1 - 1e-6)
    Aa, ba = c.A_box[active], c.b_box[active]

    def solve_mu(mu):
        Pm, qm = c.P, c.q
        if mu > 0:
            Pm = c.P + 2 * mu * c.ell_M.T @ P_ell @ c.ell_M
            qm = c.q + 2 * mu * c.ell_M.T @ P_ell @ c.ell_c
        return _kkt(Pm, qm, Aa, ba)

    mu = 0.0
    xp, lam = solve_mu(0.0)
    if ell_active:
        def g(m_):
            xx, _ = solve_mu(m_)
            e = c.ell_M @ xx + c.ell_c
            return e @ P_ell @ e - rho_ell

        if g(0.0) > 0:
            lo, hi = 0.0, 1.0
            while g(hi) > 0 and hi < 1e12:
                hi *= 4.0
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                if g(mid) > 0:
                    lo = mid
                else:
                    hi = mid
                if hi - lo <= 1e-15 * max(1.0, hi):
                    break
            mu = hi
            xp, lam = solve_mu(mu)
    # validate: feasibility and dual signs
    tol = 1e-9
    if c.A_box.shape[0] and np.max(c.A_box @ xp - c.b_box) > tol * (1 + np.max(np.abs(c.b_box))):
        return None
    if lam.size and np.min(lam) < -1e-8 * max(1.0, np.max(np.abs(lam))):
        return None
    if c.ell_M is not None:
        e = c.ell_M @ xp + c.ell_c
        if e @ P_ell @ e > rho_ell * (1 + 1e-9):
            return None
    return xp


def _objective(c: _Condensed, x):
    return 0.5 * x @ c.P @ x + c.q @ x + c.const


def solve_ocp(docp: DiscreteOcp, z1_0, use_terminal: bool = True, warm=None,
              max_iter: int = 20000, eps: float = 1e-8, polish: bool = True) -> OcpSolution:
    """Minimize the discretized cost (plus terminal cost and set when requested)."""
    z0 = np.asarray(z1_0, dtype=float).ravel()
    if z0.shape[0] != docp.n_hat:
        raise ValueError(f"z1_0 must have length {docp.n_hat}")
    if not np.all(np.isfinite(z0)):
        raise ValueError("z1_0 must be finite")
    if not use_terminal and docp.rows.shape[0] == 0 and docp.m_prime:
        return _unconstrained(docp, z0)
    c = _condense(docp, z0, use_terminal)
    nd = c.P.shape[0]
    P_ell, rho_ell = docp.P_term, docp.rho
    if c.trivially_infeasible:
        return _package(docp, c, np.zeros(nd), STATUS_INFEASIBLE, np.inf, np.inf, 0, False)
    if nd == 0:
        x = np.zeros(0)
        ok = True
        if c.A_box.shape[0]:
            ok = bool(np.all(c.b_box >= -1e-9))
        if c.ell_M is not None:
            ok = ok and c.ell_c @ P_ell @ c.ell_c <= rho_ell * (1 + 1e-9)
        return _package(docp, c, x, STATUS_OPTIMAL if ok else STATUS_INFEASIBLE, 0.0, 0.0, 0, False)
    if c.A_box.shape[0] == 0 and c.ell_M is None:
        x = np.linalg.solve(c.P, -c.q)
        return _package(docp, c, x, STATUS_OPTIMAL, 0.0, float(np.max(np.abs(c.P @ x + c.q))), 0, False)
    # an unconstrained minimizer that happens to be feasible is the answer
    x_free = np.linalg.lstsq(c.P, -c.q, rcond=None)[0]
    if _feasible(c, P_ell, rho_ell, x_free) and np.max(np.abs(c.P @ x_free + c.q)) <= 1e-10 * (1 + np.max(np.abs(c.q))):
        return _package(docp, c, x_free, STATUS_OPTIMAL, 0.0, 0.0, 0, True)
    x, z, y, status, iters, prim, dual = _admm(c, P_ell, rho_ell, warm, max_iter, eps)
    if status == 2:
        return _package(docp, c, x, STATUS_INFEASIBLE, prim, dual, iters, False)
    polished = False
    if polish:
        xp = _polish(c, P_ell, rho_ell, x, y)
        if xp is not None and _objective(c, xp) <= _objective(c, x) + 1e-7 * (1 + abs(_objective(c, x))):
            x, polished = xp, True
    st = STATUS_OPTIMAL if (status == 1 or polished) else STATUS_MAX_ITER
    return _package(docp, c, x, st, prim, dual, iters, polished)


def _unconstrained(docp: DiscreteOcp, z0) -> OcpSolution:
    """Backward Riccati recursion; stays well conditioned when ``Ad`` is unstable."""
    N, Ad, Bd = docp.N, docp.Ad, docp.Bd
    Qd, Hd, Rd = docp.Qd, docp.Hd, docp.Rd
    P = np.zeros((docp.n_hat, docp.n_hat))
    gains = []
    for _ in range(N):
        PB = P @ Bd
        K = np.linalg.solve(Rd + Bd.T @ PB, Hd.T + PB.T @ Ad)
        P = Qd + Ad.T @ P @ Ad - (Hd + Ad.T @ PB) @ K
        P = 0.5 * (P + P.T)
        gains.append(K)
    gains.reverse()
    z_grid = np.zeros((docp.n_hat, N + 1))
    u_grid = np.zeros((docp.m_prime, N))
    z_grid[:, 0] = z0
    for k in range(N):
        u_grid[:, k] = -gains[k] @ z_grid[:, k]
        z_grid[:, k + 1] = Ad @ z_grid[:, k] + Bd @ u_grid[:, k]
    v_grid = np.column_stack([docp.reduced_input(z_grid[:, k], u_grid[:, k]) for k in range(N)])
    cost = float(z0 @ P @ z0)
    return OcpSolution(u_grid, v_grid, z_grid, cost, STATUS_OPTIMAL, 0.0, 0.0, 0, u_grid.T.ravel(), False)


def _feasible(c, P_ell, rho_ell, x, tol=1e-9):
    if c.A_box.shape[0] and np.max(c.A_box @ x - c.b_box) > tol:
        return False
    if c.ell_M is not None:
        e = c.ell_M @ x + c.ell_c
        if e @ P_ell @ e > rho_ell * (1 + tol):
            return False
    return True


def _package(docp, c, x, status, prim, dual, iters, polished) -> OcpSolution:
    N = docp.N
    z_grid = np.einsum("kij,j->ik", c.Zy, x) + np.einsum("kij,j->ik", c.Zc, c.z0)
    u_grid = np.einsum("kij,j->ik", c.Uy, x) + np.einsum("kij,j->ik", c.Uc, c.z0)
    if docp.m_prime:
        v_grid = np.column_stack([docp.reduced_input(z_grid[:, k], u_grid[:, k]) for k in range(N)])
    else:
        v_grid = np.zeros((0, N))
    cost = float(_objective(c, x))
    return OcpSolution(u_grid, v_grid, z_grid, cost, status, float(prim), float(dual), int(iters), x, polished)


def infinite_horizon_value(sol, z1_0) -> float:
    """``z1_0^T P̂ z1_0``, the optimal cost over the infinite horizon."""
    z = np.asarray(z1_0, dtype=float).ravel()
    return float(z @ sol.P_hat @ z)


def bellman_residual(reduced, sol, z1_0, T: float, N: int = 200) -> float:
    """``|V_∞(z0) - (J_T + V_∞(z(T)))|`` along the grid optimum with terminal cost ``V_∞``."""
    z0 = np.asarray(z1_0, dtype=float).ravel()
    docp = discretize(reduced, T, N)
    docp = DiscreteOcp(docp.N, docp.h, docp.Ad, docp.Bd, docp.Sd, docp.rows[:0], None, sol.P_hat, np.inf, sol.K_gain)
    c = _condense(docp, z0, use_terminal=False)
    x = np.linalg.solve(c.P + 2.0 * _terminal_hessian(c, sol.P_hat), -(c.q + 2.0 * _terminal_gradient(c, sol.P_hat)))
    res = _package(docp, c, x, STATUS_OPTIMAL, 0.0, 0.0, 0, False)
    J = res.cost
    zN = res.z_grid[:, -1]
    return abs(infinite_horizon_value(sol, z0) - (J + infinite_horizon_value(sol, zN)))


def _terminal_hessian(c, P):
    return c.Zy[-1].T @ P @ c.Zy[-1]


def _terminal_gradient(c, P):
    return c.Zy[-1].T @ P @ (c.Zc[-1] @ c.z0)


def trajectory_cost(docp: DiscreteOcp, z_grid, u_grid) -> float:
    """Exact integral of the stage cost along a grid trajectory."""
    total = 0.0
    for k in range(docp.N):
        w = np.concatenate([z_grid[:, k], u_grid[:, k]])
        total += w @ docp.Sd @ w
    return float(total)
