"""Regularization of descriptor systems to an equivalent ODE control problem.

Two routes lead to a regular index-1 system:

* feedback: for regular, impulse-controllable systems a state feedback
  ``u = K x + v`` removes the higher-index part;
* unimodular: the extended pencil ``s[E, 0] - [A, B]`` is brought to
  quasi-Kronecker form and each block is rewritten as a unimodular left
  factor times an index-1 pencil.  Free variables of underdetermined blocks
  become inputs.

An SVD of the index-1 descriptor matrix then separates differential and
algebraic variables and the algebraic ones are eliminated, giving
``z1' = Â z1 + B̂ v`` and the lift ``(x; u) = X (z1; v)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import numlin
from .numlin import RankTolerance
from .pencil import (
    ConstraintSet,
    DaeSystem,
    KroneckerStructure,
    StructureError,
    is_regular,
    impulse_controllable,
    kronecker_structure,
    nilpotency_index,
)


class RegularizationError(StructureError):
    pass


@dataclass(frozen=True)
class FeedbackRegularization:
    """``u = K x + v`` makes ``[E, A + B K, B]`` regular with index <= 1."""

    K: np.ndarray
    system: DaeSystem
    seed: int
    attempts: int

    @property
    def T_hat(self) -> np.ndarray:
        n, m = self.K.shape[1], self.K.shape[0]
        T = np.eye(n + m)
        T[n:, :n] = self.K
        return T


@dataclass(frozen=True)
class UnimodularRegularization:
    """``[sE - A, -B] T̂ = (s U1 + U0) [0; s E_r - A_r, -B_r]``.

    ``q = ℓ - r`` leading rows of the right factor are zero.  The variables
    ``T̂^{-1} (x; u)`` are ordered as r descriptor variables followed by the
    ``n + m - r`` inputs of ``[E_r, A_r, B_r]``.
    """

    T_hat: np.ndarray
    U0: np.ndarray
    U1: np.ndarray
    E_r: np.ndarray
    A_r: np.ndarray
    B_r: np.ndarray
    r: int
    structure: Optional[KroneckerStructure] = None

    @property
    def system(self) -> DaeSystem:
        return DaeSystem(self.E_r, self.A_r, self.B_r)

    @property
    def q(self) -> int:
        return self.U0.shape[0] - self.r


@dataclass(frozen=True)
class Index1Form:
    """``S_r E T_r = [[I, 0], [0, 0]]`` with the matching split of ``A`` and ``B``."""

    S_r: np.ndarray
    T_r: np.ndarray
    A11: np.ndarray
    A12: np.ndarray
    A21: np.ndarray
    A22: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    n_hat: int
    cond_A22: float


@dataclass(frozen=True)
class ReducedOde:
    """Reduced problem ``z1' = Â z1 + B̂ v`` with cost ``(z1; v)^T Ŝ (z1; v)``.

    ``X`` lifts reduced trajectories to ``(x; u)``; ``init_selector`` maps
    ``(x0; 0)`` to ``z1(0)`` and only depends on ``E x0``.
    """

    A_hat: np.ndarray
    B_hat: np.ndarray
    X: np.ndarray
    T_hat_total: np.ndarray
    S_hat: np.ndarray
    init_selector: np.ndarray
    constraint_rows: np.ndarray
    route: str
    n: int
    m: int
    S: np.ndarray = field(repr=False)
    regularization: object = field(default=None, repr=False)
    index1: Optional[Index1Form] = field(default=None, repr=False)

    @property
    def n_hat(self) -> int:
        return self.A_hat.shape[0]

    @property
    def m_prime(self) -> int:
        return self.B_hat.shape[1]

    @property
    def Q_hat(self) -> np.ndarray:
        return self.S_hat[: self.n_hat, : self.n_hat]

    @property
    def H_hat(self) -> np.ndarray:
        return self.S_hat[: self.n_hat, self.n_hat :]

    @property
    def R_hat(self) -> np.ndarray:
        return self.S_hat[self.n_hat :, self.n_hat :]

    def z1_from_state(self, x0) -> np.ndarray:
        x0 = np.asarray(x0, dtype=float).ravel()
        return self.init_selector[:, : self.n] @ x0

    def left_inverse(self) -> np.ndarray:
        """Canonical left inverse of X selecting ``(z1; v)`` from ``(x; u)``."""
        Ti = np.linalg.inv(self.T_hat_total)
        nh, mp = self.n_hat, self.m_prime
        tot = Ti.shape[0]
        sel = np.zeros((nh + mp, tot))
        sel[:nh, :nh] = np.eye(nh)
        sel[nh:, tot - mp :] = np.eye(mp)
        return sel @ Ti


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _is_index_le1(sys: DaeSystem) -> bool:
    """Square, regular and ``rank [E, A Z] = n`` with ``im Z = ker E``."""
    if sys.ell != sys.n or not is_regular(sys):
        return False
    scale = max(np.linalg.norm(sys.E), np.linalg.norm(sys.A), 1e-300)
    Z = numlin.null_space(sys.E, RankTolerance(scale=scale))
    return numlin.rank(np.hstack([sys.E, sys.A @ Z]), RankTolerance(scale=scale)) == sys.n


def deadbeat_gain(A, B) -> np.ndarray:
    """K with ``A + B K`` nilpotent, via an orthogonal controllability staircase.

    Uncontrollable modes must already be nilpotent.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    B = np.asarray(B, dtype=float).reshape(n, -1)
    m = B.shape[1]
    K = _deadbeat(A, B)
    if n and nilpotency_index(A + B @ K) > n:
        raise RegularizationError("deadbeat assignment failed")
    return K.reshape(m, n)


def _deadbeat(A, B):
    n, m = B.shape
    if n == 0:
        return np.zeros((m, 0))
    scale = max(np.linalg.norm(A), np.linalg.norm(B), 1.0)
    dec = numlin.rank_decompose(B, RankTolerance(scale=scale))
    r1 = dec.rank
    if r1 == 0:
        return np.zeros((m, n))
    if r1 == n:
        return -np.linalg.pinv(B) @ A
    U1 = dec.range_basis
    U2 = numlin.complement(U1, n)
    V = np.hstack([U1, U2])
    At = V.T @ A @ V
    B1 = U1.T @ B
    A11, A12 = At[:r1, :r1], At[:r1, r1:]
    A21, A22 = At[r1:, :r1], At[r1:, r1:]
    K2 = _deadbeat(A22, A21)
    B1p = np.linalg.pinv(B1)
    Kt = -B1p @ np.hstack([A11 - K2 @ A21, A12 - K2 @ A22])
    return Kt @ V.T


def verify_unimodular(U0, U1, rtol: float = 1e-8) -> bool:
    """det(s U1 + U0) is a nonzero constant, sampled at ℓ + 1 points s_k = k + 1/2."""
    U0 = numlin.as_matrix(U0, "U0")
    U1 = numlin.as_matrix(U1, "U1")
    if U0.shape != U1.shape or U0.shape[0] != U0.shape[1]:
        return False
    ell = U0.shape[0]
    if ell == 0:
        return True
    dets = np.array([np.linalg.det((k + 0.5) * U1 + U0) for k in range(ell + 1)])
    ref = np.max(np.abs(dets))
    if not np.isfinite(ref) or ref == 0.0:
        return False
    if np.min(np.abs(dets)) <= 1e-13 * max(1.0, np.linalg.norm(U0) + np.linalg.norm(U1)) ** ell:
        return False
    return bool(np.max(np.abs(dets - dets[0])) <= rtol * ref)


def factorization_residual(sys: DaeSystem, reg: UnimodularRegularization) -> tuple:
    """Residuals of the identity in the s^0, s^1 and s^2 coefficients."""
    ell, r = sys.ell, reg.r
    Ee = np.hstack([sys.E, np.zeros((ell, sys.m))])
    Ae = np.hstack([sys.A, sys.B])
    nv = reg.T_hat.shape[0]
    ZE = np.zeros((ell, nv))
    ZA = np.zeros((ell, nv))
    ZE[ell - r :, :r] = reg.E_r
    ZA[ell - r :, :r] = reg.A_r
    ZA[ell - r :, r:] = reg.B_r
    res0 = np.linalg.norm(Ae @ reg.T_hat - reg.U0 @ ZA)
    res1 = np.linalg.norm(Ee @ reg.T_hat - (reg.U0 @ ZE - reg.U1 @ ZA))
    res2 = np.linalg.norm(reg.U1 @ ZE)
    return res0, res1, res2


# ---------------------------------------------------------------------------
# feedback route
# ---------------------------------------------------------------------------


def feedback_regularize(sys: DaeSystem, seed: int = 0, max_draws: int = 10) -> FeedbackRegularization:
    """Seeded random ``K = M Z^T`` with ``im Z = ker E``, checked for index <= 1."""
    if not impulse_controllable(sys):
        raise RegularizationError("system is not impulse controllable; use the unimodular route")
    n, m = sys.n, sys.m
    scale = max(np.linalg.norm(sys.E), np.linalg.norm(sys.A), 1e-300)
    Z = numlin.null_space(sys.E, RankTolerance(scale=scale))
    k = Z.shape[1]
    rng = np.random.default_rng(seed)
    candidates = [np.zeros((m, k))] + [rng.standard_normal((m, k)) for _ in range(max_draws)]
    for attempt, M in enumerate(candidates):
        K = M @ Z.T if k else np.zeros((m, n))
        closed = DaeSystem(sys.E, sys.A + sys.B @ K, sys.B)
        if _is_index_le1(closed):
            return FeedbackRegularization(K=K, system=closed, seed=seed, attempts=attempt)
    raise RegularizationError(
        f"feedback regularization failed after {max_draws} draws; use the unimodular route"
    )


# ---------------------------------------------------------------------------
# unimodular route
# ---------------------------------------------------------------------------


def _block_U(E_U, A_U):
    """Underdetermined block: constant left factor, shift states plus free inputs."""
    lU, nU = E_U.shape
    if lU == 0:
        return dict(U0=np.zeros((0, 0)), U1=np.zeros((0, 0)), C=np.eye(nU),
                    Ay=np.zeros((0, 0)), By=np.zeros((0, nU)))
    Us, s, Vs = numlin.svd(E_U)
    V1 = Vs[:, :lU]
    V2 = numlin.complement(V1, nU)
    left = Us * s
    Ay = np.linalg.solve(left, A_U @ V1)
    By = np.linalg.solve(left, A_U @ V2)
    return dict(U0=left, U1=np.zeros((lU, lU)), C=np.hstack([V1, V2]), Ay=Ay, By=By)


def _block_O(E_O, A_O):
    """Overdetermined block: q zero rows plus algebraic variables forced to zero."""
    lO, nO = E_O.shape
    q = lO - nO
    scale = max(np.linalg.norm(E_O), np.linalg.norm(A_O), 1.0)
    W = numlin.null_space(A_O.T, RankTolerance(scale=scale))
    if W.shape[1] != q:
        raise RegularizationError("overdetermined block does not have full column rank")
    Ap = np.linalg.pinv(A_O)
    F = -Ap @ E_O
    H = W.T @ E_O
    # output injection Z making F - Z H nilpotent
    Z = -deadbeat_gain(F.T, H.T).T if nO else np.zeros((0, q))
    G = Ap + Z @ W.T
    P = np.vstack([W.T, -G])
    E_bot = F - Z @ H
    Up0 = np.zeros((lO, lO))
    Up1 = np.zeros((lO, lO))
    Up0[:q, :q] = np.eye(q)
    Up0[q:, q:] = -np.eye(nO)
    Up1[:q, q:] = -H
    Up1[q:, q:] = -E_bot
    Pinv = np.linalg.inv(P)
    return dict(U0=Pinv @ Up0, U1=Pinv @ Up1)


def unimodular_regularize(sys: DaeSystem) -> UnimodularRegularization:
    """Regular index-1 system from the quasi-Kronecker form of the extended pencil."""
    ell, n, m = sys.ell, sys.n, sys.m
    if _is_index_le1(sys):
        reg = UnimodularRegularization(
            T_hat=np.eye(n + m), U0=np.eye(ell), U1=np.zeros((ell, ell)),
            E_r=sys.E.copy(), A_r=sys.A.copy(), B_r=sys.B.copy(), r=n,
        )
        return reg
    Ee, Ae = sys.extended()
    ks = kronecker_structure(Ee, Ae)
    b = ks.blocks
    lU, nU, nJ, nN, lO, nO = ks.sizes
    q = lO - nO
    mU = nU - lU
    r = ell - q

    bu = _block_U(b["E_U"], b["A_U"])
    bo = _block_O(b["E_O"], b["A_O"]) if lO else dict(U0=np.zeros((0, 0)), U1=np.zeros((0, 0)))
    J = ks.J

    # block-diagonal left factor in the quasi-Kronecker row order U, J, N, O
    rows = np.cumsum([0, lU, nJ, nN, lO])
    BD0 = np.zeros((ell, ell))
    BD1 = np.zeros((ell, ell))
    BD0[rows[0] : rows[1], rows[0] : rows[1]] = bu["U0"]
    BD0[rows[1] : rows[2], rows[1] : rows[2]] = b["E_J"]
    BD0[rows[2] : rows[3], rows[2] : rows[3]] = b["A_N"]
    BD1[rows[2] : rows[3], rows[2] : rows[3]] = -b["E_N"]
    BD0[rows[3] : rows[4], rows[3] : rows[4]] = bo["U0"]
    BD1[rows[3] : rows[4], rows[3] : rows[4]] = bo["U1"]

    # rows of the right factor: zero rows of O first, then U, J, N, nonzero O
    perm_rows = np.zeros((ell, ell))
    target = list(range(q, q + lU + nJ + nN))
    block_order = list(range(0, lU + nJ + nN))
    target += list(range(q)) + list(range(q + lU + nJ + nN, ell))
    block_order += list(range(lU + nJ + nN, ell))
    perm_rows[block_order, target] = 1.0

    # columns: block variables (y_U, v_U | y_J | z_N | z_O) -> (y_U, y_J, z_N, z_O, v_U)
    nv = n + m
    C = np.eye(nv)
    C[:nU, :nU] = bu["C"]
    block_cols = list(range(lU)) + list(range(nU, nv)) + list(range(lU, nU))
    Pi = np.zeros((nv, nv))
    Pi[block_cols, np.arange(nv)] = 1.0

    L_T = np.linalg.inv(ks.left_transform)
    T_hat = ks.right_transform @ C @ Pi
    U0 = L_T @ BD0 @ perm_rows
    U1 = L_T @ BD1 @ perm_rows

    nd = lU + nJ
    E_r = np.zeros((r, r))
    A_r = np.zeros((r, r))
    B_r = np.zeros((r, mU))
    E_r[:nd, :nd] = np.eye(nd)
    A_r[:lU, :lU] = bu["Ay"]
    A_r[lU:nd, lU:nd] = J
    A_r[nd:, nd:] = np.eye(r - nd)
    B_r[:lU, :] = bu["By"]

    reg = UnimodularRegularization(T_hat=T_hat, U0=U0, U1=U1, E_r=E_r, A_r=A_r, B_r=B_r, r=r, structure=ks)
    _check_unimodular(sys, reg)
    return reg


def _check_unimodular(sys: DaeSystem, reg: UnimodularRegularization):
    scale = max(1.0, np.linalg.norm(np.hstack([sys.E, sys.A, sys.B])))
    scale *= max(1.0, np.linalg.norm(reg.T_hat)) * max(1.0, np.linalg.norm(reg.U0) + np.linalg.norm(reg.U1))
    res = factorization_residual(sys, reg)
    if max(res) > 1e-10 * scale:
        raise RegularizationError(f"factorization identity violated (residuals {res})")
    if not verify_unimodular(reg.U0, reg.U1):
        raise RegularizationError("left factor U(s) is not unimodular")
    if not _is_index_le1(reg.system):
        raise RegularizationError("regularized system is not regular with index <= 1")


# ---------------------------------------------------------------------------
# index-1 reduction and lift
# ---------------------------------------------------------------------------


def index1_to_ode(sys: DaeSystem) -> Index1Form:
    """SVD split of a regular index-1 system into differential and algebraic parts."""
    if sys.ell != sys.n:
        raise StructureError("index-1 reduction needs a square system")
    n = sys.n
    scale = max(np.linalg.norm(sys.E), np.linalg.norm(sys.A), 1e-300)
    U, s, V = numlin.svd(sys.E)
    if n == 0:
        U, V = np.zeros((0, 0)), np.zeros((0, 0))
    tau = RankTolerance(scale=scale).threshold(0.0, sys.E.shape)
    nh = int(np.sum(s > tau))
    d = np.ones(n)
    d[:nh] = 1.0 / s[:nh]
    S_r = U.T
    T_r = V * d
    At = S_r @ sys.A @ T_r
    Bt = S_r @ sys.B
    A22 = At[nh:, nh:]
    if n - nh:
        k = numlin.rank(A22, RankTolerance(scale=scale * max(1.0, np.max(d))))
        if k < n - nh:
            raise StructureError(
                f"A22 is singular (rank {k} of {n - nh}); the system is not regular with index <= 1"
            )
        cond = float(np.linalg.cond(A22))
    else:
        cond = 1.0
    return Index1Form(
        S_r=S_r, T_r=T_r,
        A11=At[:nh, :nh], A12=At[:nh, nh:], A21=At[nh:, :nh], A22=A22,
        B1=Bt[:nh], B2=Bt[nh:], n_hat=nh, cond_A22=cond,
    )


def _select_route(sys: DaeSystem, seed: int, route: Optional[str]):
    if route in (None, "feedback") and is_regular(sys):
        if impulse_controllable(sys):
            try:
                return "feedback", feedback_regularize(sys, seed)
            except RegularizationError:
                if route == "feedback":
                    raise
        elif route == "feedback":
            raise RegularizationError("system is not impulse controllable")
    elif route == "feedback":
        raise RegularizationError("feedback route needs a regular system")
    return "unimodular", unimodular_regularize(sys)


def _normalizing_map(Sx: np.ndarray) -> np.ndarray:
    """Invertible M with ``M Sx`` orthonormal and as close to coordinate axes as possible.

    The rows of ``M Sx`` come from Gram-Schmidt over the columns of the
    orthogonal projector onto the row space of ``Sx``, taken in order, so
    that reduced coordinates coincide with original state components
    whenever the row space is spanned by unit vectors.
    """
    k = Sx.shape[0]
    if k == 0:
        return np.zeros((0, 0))
    G = Sx @ Sx.T
    R = Sx.T @ np.linalg.inv(G)
    Pr = R @ Sx
    basis = []
    for col in Pr.T:
        v = col.copy()
        for b in basis:
            v -= (b @ v) * b
        nv = np.linalg.norm(v)
        if nv > 1e-8:
            basis.append(v / nv)
        if len(basis) == k:
            break
    Q = np.array(basis).T
    return Q.T @ R


def build_reduced_ode(
    sys: DaeSystem,
    constraints: Optional[ConstraintSet] = None,
    S=None,
    seed: int = 0,
    route: Optional[str] = None,
) -> ReducedOde:
    """Equivalent ODE problem for the DAE with cost matrix ``S`` on ``(x; u)``."""
    n, m = sys.n, sys.m
    S = np.eye(n + m) if S is None else numlin.as_matrix(S, "S")
    if S.shape != (n + m, n + m):
        raise ValueError(f"S must be {(n + m, n + m)}, got {S.shape}")
    if constraints is None:
        constraints = ConstraintSet.empty(n, m)
    route_name, reg = _select_route(sys, seed, route)
    inner = reg.system
    f = index1_to_ode(inner)
    nh = f.n_hat
    r = inner.n
    mp = inner.m
    nv = n + m
    T_outer = reg.T_hat
    T_total = T_outer @ _blkdiag(f.T_r, np.eye(nv - r))

    A22i = np.linalg.inv(f.A22) if r - nh else np.zeros((0, 0))
    A_hat = f.A11 - f.A12 @ A22i @ f.A21
    B_hat = f.B1 - f.A12 @ A22i @ f.B2
    lift = np.zeros((nv, nh + mp))
    lift[:nh, :nh] = np.eye(nh)
    lift[nh:r, :nh] = -A22i @ f.A21
    lift[nh:r, nh:] = -A22i @ f.B2
    lift[r:, nh:] = np.eye(mp)
    X = T_total @ lift
    selector = np.linalg.inv(T_total)[:nh]

    # z1 may only depend on E x
    sc = max(1.0, np.linalg.norm(selector))
    if nh and np.max(np.abs(selector[:, n:]), initial=0.0) > 1e-9 * sc:
        raise RegularizationError("reduced initial state depends on the input")
    kerE = numlin.null_space(sys.E, RankTolerance(scale=max(np.linalg.norm(sys.E), 1e-300)))
    if nh and kerE.shape[1] and np.max(np.abs(selector[:, :n] @ kerE)) > 1e-9 * sc:
        raise RegularizationError("reduced initial state is not determined by E x0")

    Mz = _normalizing_map(selector[:, :n])
    Mzi = np.linalg.inv(Mz) if nh else Mz
    A_hat = Mz @ A_hat @ Mzi
    B_hat = Mz @ B_hat
    X = X.copy()
    X[:, :nh] = X[:, :nh] @ Mzi
    selector = Mz @ selector
    T_total = T_total.copy()
    T_total[:, :nh] = T_total[:, :nh] @ Mzi

    S_hat = X.T @ S @ X
    S_hat = 0.5 * (S_hat + S_hat.T)
    rows = constraints.FG @ X
    return ReducedOde(
        A_hat=A_hat, B_hat=B_hat, X=X, T_hat_total=T_total, S_hat=S_hat,
        init_selector=selector, constraint_rows=rows, route=route_name,
        n=n, m=m, S=S, regularization=reg, index1=f,
    )


def _blkdiag(A, B):
    out = np.zeros((A.shape[0] + B.shape[0], A.shape[1] + B.shape[1]))
    out[: A.shape[0], : A.shape[1]] = A
    out[A.shape[0] :, A.shape[1] :] = B
    return out


def display_cost(reduced: ReducedOde) -> np.ndarray:
    """The cost matrix written as ``X^{-1} S X`` with the canonical left inverse."""
    return reduced.left_inverse() @ reduced.S @ reduced.X


def lift_trajectory(reduced: ReducedOde, z1_path, v_path):
    """Map reduced samples (columns) to ``(x_path, u_path)`` through X."""
    z = np.asarray(z1_path, dtype=float)
    v = np.asarray(v_path, dtype=float)
    if z.ndim == 1:
        z = z.reshape(reduced.n_hat, -1)
    if v.ndim == 1:
        v = v.reshape(reduced.m_prime, -1)
    if z.shape[0] != reduced.n_hat or v.shape[0] != reduced.m_prime or z.shape[1] != v.shape[1]:
        raise ValueError(
            f"expected z1 ({reduced.n_hat}, K) and v ({reduced.m_prime}, K) with equal K, "
            f"got {z.shape} and {v.shape}"
        )
    xu = reduced.X @ np.vstack([z, v])
    return xu[: reduced.n], xu[reduced.n :]
