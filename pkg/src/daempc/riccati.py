"""Cross-term continuous algebraic Riccati equation for the reduced problem.

Solves  Â^T P + P Â + Q̂ - (P B̂ + Ĥ) R̂^{-1} (P B̂ + Ĥ)^T = 0
for the stabilizing P, and K̂ = R̂^{-1} (B̂^T P + Ĥ^T).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import numlin
from .numlin import RankTolerance


class CareError(numlin.NumlinError):
    """The Riccati equation has no usable stabilizing solution."""


@dataclass(frozen=True)
class LqProblem:
    """Minimal stand-in for a reduced ODE: dynamics and stage-cost matrix."""

    A_hat: np.ndarray
    B_hat: np.ndarray
    S_hat: np.ndarray

    @property
    def n_hat(self) -> int:
        return self.A_hat.shape[0]

    @property
    def m_prime(self) -> int:
        return self.B_hat.shape[1]

    @property
    def Q_hat(self):
        return self.S_hat[: self.n_hat, : self.n_hat]

    @property
    def H_hat(self):
        return self.S_hat[: self.n_hat, self.n_hat :]

    @property
    def R_hat(self):
        return self.S_hat[self.n_hat :, self.n_hat :]


def lq_problem(A, B, Q, R, H=None) -> LqProblem:
    A = numlin.as_matrix(A, "A")
    n = A.shape[0]
    R = np.atleast_2d(np.asarray(R, dtype=float))
    m = R.shape[0]
    B = np.asarray(B, dtype=float).reshape(n, m)
    Q = np.asarray(Q, dtype=float).reshape(n, n)
    H = np.zeros((n, m)) if H is None else np.asarray(H, dtype=float).reshape(n, m)
    S = np.block([[Q, H], [H.T, R]])
    return LqProblem(A, B, S)


@dataclass(frozen=True)
class AssumptionReport:
    s_psd: bool
    stabilizable: bool
    r_pd: bool
    observable: bool
    rank_match: bool
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.s_psd and self.stabilizable and self.r_pd and self.observable and self.rank_match

    def failures(self) -> list:
        names = ("s_psd", "stabilizable", "r_pd", "observable", "rank_match")
        return [k for k in names if not getattr(self, k)]


@dataclass(frozen=True)
class RiccatiSolution:
    P_hat: np.ndarray
    K_gain: np.ndarray
    residual_norm: float
    lambda_min: float
    residual_trace: tuple = ()


def are_residual(prob, P) -> np.ndarray:
    A, B, Q, H, R = prob.A_hat, prob.B_hat, prob.Q_hat, prob.H_hat, prob.R_hat
    PBH = P @ B + H
    if B.shape[1]:
        corr = PBH @ np.linalg.solve(R, PBH.T)
    else:
        corr = np.zeros_like(P)
    return A.T @ P + P @ A + Q - corr


def _gain(prob, P):
    if prob.m_prime == 0:
        return np.zeros((0, prob.n_hat))
    return np.linalg.solve(prob.R_hat, prob.B_hat.T @ P + prob.H_hat.T)


def _tilde(prob):
    """Cross-term free data: Ã, Q̃ and G = B̂ R̂^{-1} B̂^T."""
    A, B, Q, H, R = prob.A_hat, prob.B_hat, prob.Q_hat, prob.H_hat, prob.R_hat
    if B.shape[1] == 0:
        return A, Q, np.zeros_like(A)
    Ri = np.linalg.inv(R)
    At = A - B @ Ri @ H.T
    Qt = Q - H @ Ri @ H.T
    G = B @ Ri @ B.T
    return At, 0.5 * (Qt + Qt.T), 0.5 * (G + G.T)


def newton_refine(prob, P0, sweeps: int = 2) -> np.ndarray:
    """Kleinman-Newton sweeps, each one Lyapunov solve with the current closed loop."""
    At, Qt, G = _tilde(prob)
    P = np.array(P0, dtype=float)
    for _ in range(sweeps):
        Ak = At - G @ P
        P = numlin.solve_lyapunov(Ak, Qt + P @ G @ P)
    return 0.5 * (P + P.T)


def solve_care(prob, newton_sweeps: int = 2) -> RiccatiSolution:
    """Stabilizing solution via the matrix sign function of the Hamiltonian."""
    n = prob.n_hat
    if n == 0:
        return RiccatiSolution(np.zeros((0, 0)), np.zeros((prob.m_prime, 0)), 0.0, np.inf)
    if prob.m_prime:
        r_eigs = numlin.sym_eigvals(prob.R_hat)
        if r_eigs[0] <= 1e-10 * max(np.linalg.norm(prob.R_hat), 1e-300):
            raise CareError("CARE failure: R̂ is not positive definite")
    At, Qt, G = _tilde(prob)
    Ham = np.block([[At, -G], [-Qt, -At.T]])
    trace = []
    try:
        Z = numlin.matrix_sign(Ham)
    except numlin.SignIterationError as exc:
        raise CareError(f"CARE failure: {exc}") from exc
    dec = numlin.rank_decompose(Z - np.eye(2 * n), RankTolerance(rtol=1e-8, scale=2.0))
    if dec.rank != n:
        raise CareError(f"CARE failure: stable subspace has dimension {dec.rank}, expected {n}")
    U1, U2 = dec.range_basis[:n], dec.range_basis[n:]
    if numlin.rank(U1, RankTolerance(rtol=1e-8, scale=1.0)) < n:
        raise CareError("CARE failure: stable subspace is not a graph (no stabilizing solution)")
    P = np.linalg.solve(U1.T, U2.T).T
    P = 0.5 * (P + P.T)
    trace.append(float(np.linalg.norm(are_residual(prob, P))))
    for _ in range(newton_sweeps):
        try:
            P = newton_refine(prob, P, 1)
        except numlin.ResonantLyapunovError as exc:
            raise CareError(f"CARE failure during refinement: {exc}; residuals {trace}") from exc
        trace.append(float(np.linalg.norm(are_residual(prob, P))))
    P = 0.5 * (P + P.T)
    lam = float(numlin.sym_eigvals(P)[0])
    if not lam > 0:
        raise CareError(f"CARE failure: λ_min(P̂) = {lam:.3e} <= 0; residuals {trace}")
    return RiccatiSolution(P, _gain(prob, P), trace[-1], lam, tuple(trace))


def certify_closed_loop(prob, sol: RiccatiSolution) -> bool:
    """Lyapunov certificate: ``(Â - B̂K̂)^T Y + Y (Â - B̂K̂) + I = 0`` has ``Y > 0``."""
    n = prob.n_hat
    if n == 0:
        return True
    Acl = prob.A_hat - prob.B_hat @ sol.K_gain
    try:
        Y = numlin.solve_lyapunov(Acl, np.eye(n))
    except numlin.ResonantLyapunovError:
        return False
    return bool(numlin.sym_eigvals(Y)[0] > 0)


def check_assumptions(prob) -> AssumptionReport:
    """Check the standing assumptions of the reduced LQ problem; never raises."""
    n, m = prob.n_hat, prob.m_prime
    S = prob.S_hat
    details = {}
    s_eigs = numlin.sym_eigvals(0.5 * (S + S.T)) if S.size else np.zeros(0)
    s_norm = np.linalg.norm(S)
    s_psd = bool(s_eigs.size == 0 or s_eigs[0] >= -1e-10 * max(s_norm, 1e-300))
    details["S_eigenvalues"] = s_eigs.tolist()

    if m:
        r_eigs = numlin.sym_eigvals(prob.R_hat)
        r_pd = bool(r_eigs[0] > 1e-10 * max(np.linalg.norm(prob.R_hat), 1e-300))
        details["R_lambda_min"] = float(r_eigs[0])
    else:
        r_pd = True

    pol = RankTolerance(scale=max(s_norm, 1e-300))
    rk_S = numlin.rank(S, pol) if S.size else 0
    rk_Q = numlin.rank(prob.Q_hat, pol) if n else 0
    rk_R = numlin.rank(prob.R_hat, pol) if m else 0
    rank_match = rk_S == rk_Q + rk_R
    details["ranks"] = {"S": rk_S, "Q": rk_Q, "R": rk_R}

    if n:
        blocks = [prob.Q_hat]
        for _ in range(n - 1):
            blocks.append(blocks[-1] @ prob.A_hat)
        O = np.vstack(blocks)
        rk_O = numlin.rank(O, RankTolerance(scale=max(np.linalg.norm(O), 1e-300)))
        observable = rk_O == n
        details["observability_rank"] = rk_O
    else:
        observable = True

    stabilizable = False
    if s_psd and r_pd:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                sol = solve_care(prob)
            stabilizable = certify_closed_loop(prob, sol)
            details["care_residual"] = sol.residual_norm
        except (CareError, numlin.NumlinError) as exc:
            details["care_error"] = str(exc)
    return AssumptionReport(s_psd, stabilizable, r_pd, observable, rank_match, details)
