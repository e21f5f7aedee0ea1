"""Terminal set and terminal cost from the Riccati solution.

The terminal set is the ellipsoid ``{x̂ : x̂^T P̂ x̂ <= ρ}`` in reduced
coordinates, lifted to ``(x; u) = L x̂`` with ``L = X [I; -K̂]``.  The radius
is chosen so that every constraint row stays below one on the ellipsoid:
``|row · x̂| <= ‖row‖_2 ‖x̂‖_2 <= ‖row‖_2 sqrt(ρ / λ_min(P̂))``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import numlin
from .pencil import ConstraintSet

DEFAULT_RHO_CAP = 1e6


class TerminalWarning(UserWarning):
    pass


@dataclass(frozen=True)
class TerminalIngredients:
    rho: float
    P_hat: np.ndarray
    K_gain: np.ndarray
    L: np.ndarray
    W_state: np.ndarray
    constraint_rows: np.ndarray
    capped: bool = False

    @property
    def n_hat(self) -> int:
        return self.P_hat.shape[0]


def build_terminal(reduced, sol, constraints: ConstraintSet = None, cap: float = DEFAULT_RHO_CAP) -> TerminalIngredients:
    """Radius ``ρ = λ_min(P̂) / max_i ‖row_i‖_2^2`` of the constraint rows ``[F G] L``."""
    n, m, nh = reduced.n, reduced.m, reduced.n_hat
    if constraints is None:
        constraints = ConstraintSet.empty(n, m)
    L = reduced.X @ np.vstack([np.eye(nh), -sol.K_gain])
    rows = constraints.FG @ L
    lam = float(numlin.sym_eigvals(sol.P_hat)[0]) if nh else np.inf
    norms = np.linalg.norm(rows, axis=1) if rows.size else np.zeros(rows.shape[0])
    peak = float(np.max(norms)) if norms.size else 0.0
    capped = False
    if peak <= 1e-14 * max(1.0, np.linalg.norm(L)):
        if rows.shape[0]:
            warnings.warn("constraint rows vanish on the terminal manifold; ρ set to the cap", TerminalWarning, stacklevel=2)
        rho = float(cap)
        capped = True
    else:
        rho = lam / peak**2
        if rho > cap:
            rho, capped = float(cap), True
    return TerminalIngredients(
        rho=rho, P_hat=sol.P_hat, K_gain=sol.K_gain, L=L, W_state=L[:n],
        constraint_rows=rows, capped=capped,
    )


def vf_eval(ing: TerminalIngredients, z1) -> float:
    z1 = np.asarray(z1, dtype=float).ravel()
    if z1.shape[0] != ing.n_hat:
        raise ValueError(f"z1 must have length {ing.n_hat}, got {z1.shape[0]}")
    return float(z1 @ ing.P_hat @ z1)


def in_terminal_region(ing: TerminalIngredients, z1, slack: float = 1e-9) -> bool:
    return vf_eval(ing, z1) <= ing.rho * (1.0 + slack)


def sample_boundary(ing: TerminalIngredients, count: int, seed: int = 0) -> np.ndarray:
    """``count`` points (columns) with ``x̂^T P̂ x̂ = ρ``, directions uniform on the sphere."""
    rng = np.random.default_rng(seed)
    d = rng.standard_normal((ing.n_hat, count))
    Pi = np.linalg.inv(numlin.sqrtm_psd(ing.P_hat))
    pts = Pi @ (d / np.linalg.norm(d, axis=0))
    return pts * np.sqrt(ing.rho)


def invariance_certificate(reduced, ing: TerminalIngredients, h: float = 0.05, steps: int = 200,
                           count: int = 200, seed: int = 0) -> dict:
    """Simulate the LQR closed loop from boundary points; report value growth and constraint peaks."""
    Acl = reduced.A_hat - reduced.B_hat @ ing.K_gain
    Phi = numlin.expm(Acl * h)
    z = sample_boundary(ing, count, seed)
    v_prev = np.einsum("ij,ik,kj->j", z, ing.P_hat, z)
    worst_growth = -np.inf
    worst_row = np.max(np.abs(ing.constraint_rows @ z)) if ing.constraint_rows.size else 0.0
    for _ in range(steps):
        z = Phi @ z
        v = np.einsum("ij,ik,kj->j", z, ing.P_hat, z)
        worst_growth = max(worst_growth, float(np.max(v - v_prev)))
        v_prev = v
        if ing.constraint_rows.size:
            worst_row = max(worst_row, float(np.max(np.abs(ing.constraint_rows @ z))))
    return {
        "max_value_increase": worst_growth,
        "max_constraint_row": float(worst_row),
        "passed": bool(worst_growth <= 1e-9 and worst_row <= 1.0 + 1e-8),
    }


def decrease_certificate(reduced, ing: TerminalIngredients, delta: float, count: int = 200,
                         seed: int = 0) -> dict:
    """``V_f(x̂(δ)) + ∫_0^δ stage - V_f(x̂(0))`` along LQR trajectories from boundary points."""
    nh = reduced.n_hat
    Acl = reduced.A_hat - reduced.B_hat @ ing.K_gain
    T = np.vstack([np.eye(nh), -ing.K_gain])
    S_cl = T.T @ reduced.S_hat @ T
    Phi, _, Sd = numlin.van_loan(Acl, np.zeros((nh, 0)), S_cl, delta)
    z = sample_boundary(ing, count, seed)
    v0 = np.einsum("ij,ik,kj->j", z, ing.P_hat, z)
    z1 = Phi @ z
    v1 = np.einsum("ij,ik,kj->j", z1, ing.P_hat, z1)
    stage = np.einsum("ij,ik,kj->j", z, Sd, z)
    gap = v1 + stage - v0
    return {"max_gap": float(np.max(gap)), "passed": bool(np.max(gap) <= 1e-7)}
