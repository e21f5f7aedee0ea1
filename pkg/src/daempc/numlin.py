"""Dense linear-algebra kernels shared by the rest of the package.

Rank decisions, symmetric eigenvalues and the ellipsoid projection go
through the Jacobi kernels in :mod:`daempc._kernels`; plain solves and
inverses use ``numpy.linalg``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels


class NumlinError(ValueError):
    pass


class ResonantLyapunovError(NumlinError):
    pass


class SignIterationError(NumlinError):
    pass


DEFAULT_RTOL = 1e-10


@dataclass(frozen=True)
class RankTolerance:
    """Threshold policy ``tau = rtol * scale * max(rows, cols)``.

    ``scale`` defaults to the largest singular value of the matrix being
    decomposed.  Pass an explicit scale when the matrix is a projection or
    a sub-block of something larger, so that round-off in an all-but-zero
    block is not mistaken for rank.
    """

    rtol: float = DEFAULT_RTOL
    scale: Optional[float] = None

    def threshold(self, sigma_max: float, shape: tuple) -> float:
        ref = sigma_max if self.scale is None else self.scale
        return self.rtol * ref * max(shape[0], shape[1], 1)


@dataclass(frozen=True)
class RankDecomposition:
    rank: int
    range_basis: np.ndarray
    null_basis: np.ndarray
    singular_values: np.ndarray
    threshold: float
    # smallest ratio sigma/threshold among the values near the cut; used for
    # "marginal rank" diagnostics upstream
    margin: float


def as_matrix(M, name="matrix") -> np.ndarray:
    M = np.array(M, dtype=float)
    if M.ndim == 1:
        M = M.reshape(1, -1) if M.size else M.reshape(0, 0)
    if M.ndim != 2:
        raise NumlinError(f"{name} must be two-dimensional, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise NumlinError(f"{name} has non-finite entries")
    return M


def svd(M):
    """Thin SVD ``M = U diag(s) V^T`` by one-sided Jacobi, s nonincreasing.

    Returns U (m x k), s (k,), V (n x n) when m >= n, else V is (n x k) and
    U is (m x m); k = min(m, n).
    """
    M = as_matrix(M)
    m, n = M.shape
    if m == 0 or n == 0:
        return np.zeros((m, 0)), np.zeros(0), np.eye(n)
    if m >= n:
        W, V = _kernels.svd_jacobi(np.ascontiguousarray(M))
        s = np.sqrt(np.sum(W * W, axis=0))
        order = np.argsort(-s, kind="stable")
        s, W, V = s[order], W[:, order], V[:, order]
        U = np.zeros_like(W)
        nz = s > 0
        U[:, nz] = W[:, nz] / s[nz]
        if not np.all(nz):
            # exact zeros leave no direction; complete orthonormally
            k = int(np.sum(nz))
            U[:, k:] = _complete_basis(U[:, :k], m)[:, : n - k]
        return U, s, V
    Ut, s, Vt = svd(M.T)
    return Vt, s, Ut


def _complete_basis(Q: np.ndarray, dim: int) -> np.ndarray:
    """Orthonormal basis of the orthogonal complement of range(Q) in R^dim."""
    k = Q.shape[1]
    if k >= dim:
        return np.zeros((dim, 0))
    # pivoted Gram-Schmidt over the coordinate axes, orthogonalised twice
    basis = [Q[:, i] for i in range(k)]
    out = []
    cand = np.eye(dim)
    for _ in range(dim - k):
        best, best_norm = None, -1.0
        for e in cand.T:
            v = e.copy()
            for _ in range(2):
                for b in basis:
                    v -= (b @ v) * b
            nv = np.linalg.norm(v)
            if nv > best_norm:
                best, best_norm = v, nv
        v = best / best_norm
        basis.append(v)
        out.append(v)
    return np.array(out).T


def rank_decompose(M, tol_policy: Optional[RankTolerance] = None) -> RankDecomposition:
    """Numerical rank with orthonormal range and null-space bases."""
    M = as_matrix(M)
    policy = tol_policy or RankTolerance()
    m, n = M.shape
    U, s, V = svd(M)
    smax = s[0] if s.size else 0.0
    tau = policy.threshold(smax, M.shape)
    r = int(np.sum(s > tau)) if s.size else 0
    if tau > 0 and s.size:
        ratios = s / tau
        near = ratios[(ratios > 0.1) & (ratios < 10.0)]
        margin = float(np.min(np.abs(np.log10(near)))) if near.size else np.inf
    else:
        margin = np.inf
    range_basis = U[:, :r]
    if m >= n:
        null_basis = V[:, r:]
    else:
        null_basis = _complete_basis(V[:, :r], n)
    return RankDecomposition(r, range_basis, null_basis, s, tau, margin)


def rank(M, tol_policy: Optional[RankTolerance] = None) -> int:
    return rank_decompose(M, tol_policy).rank


def orth(M, tol_policy: Optional[RankTolerance] = None) -> np.ndarray:
    return rank_decompose(M, tol_policy).range_basis


def null_space(M, tol_policy: Optional[RankTolerance] = None) -> np.ndarray:
    return rank_decompose(M, tol_policy).null_basis


def complement(Q: np.ndarray, dim: int) -> np.ndarray:
    """Orthonormal basis of range(Q)^perp; Q must have orthonormal columns."""
    return _complete_basis(np.asarray(Q, dtype=float).reshape(dim, -1), dim)


# ---------------------------------------------------------------------------
# matrix exponential
# ---------------------------------------------------------------------------

# diagonal Pade(6,6) coefficients
_PADE6 = (1.0, 1.0 / 2, 5.0 / 44, 1.0 / 66, 1.0 / 792, 1.0 / 15840, 1.0 / 665280)


def expm(M) -> np.ndarray:
    """Matrix exponential by scaling and squaring with a degree-6 Pade approximant."""
    M = as_matrix(M)
    n, k = M.shape
    if n != k:
        raise NumlinError(f"expm needs a square matrix, got {M.shape}")
    if n == 0:
        return np.zeros((0, 0))
    norm = np.max(np.sum(np.abs(M), axis=0))
    s = 0
    if norm > 0.5:
        s = int(np.ceil(np.log2(norm / 0.5)))
    X = M / (2.0**s)
    ident = np.eye(n)
    X2 = X @ X
    X4 = X2 @ X2
    X6 = X4 @ X2
    c = _PADE6
    U = X @ (c[1] * ident + c[3] * X2 + c[5] * X4)
    V = c[0] * ident + c[2] * X2 + c[4] * X4 + c[6] * X6
    F = np.linalg.solve(V - U, V + U)
    for _ in range(s):
        F = F @ F
    return F


# ---------------------------------------------------------------------------
# Lyapunov, sign function, symmetric eigenvalues
# ---------------------------------------------------------------------------


def solve_lyapunov(A, W) -> np.ndarray:
    """Solve ``A^T Y + Y A + W = 0`` through the vectorised n^2 x n^2 system."""
    A = as_matrix(A, "A")
    W = as_matrix(W, "W")
    n = A.shape[0]
    if A.shape != (n, n) or W.shape != (n, n):
        raise NumlinError("solve_lyapunov: A and W must be square of equal size")
    if n == 0:
        return np.zeros((0, 0))
    ident = np.eye(n)
    # vec(A^T Y) + vec(Y A) with column-major vec
    L = np.kron(ident, A.T) + np.kron(A.T, ident)
    d = rank_decompose(L)
    if d.rank < n * n:
        raise ResonantLyapunovError("resonant Lyapunov equation: A and -A^T share an eigenvalue")
    y = np.linalg.solve(L, -W.reshape(-1, order="F"))
    Y = y.reshape(n, n, order="F")
    return 0.5 * (Y + Y.T)


def matrix_sign(M, tol: float = 1e-13, maxiter: int = 100) -> np.ndarray:
    """Matrix sign function by the determinant-scaled Newton iteration."""
    M = as_matrix(M)
    n = M.shape[0]
    if M.shape != (n, n):
        raise NumlinError("matrix_sign needs a square matrix")
    if n == 0:
        return np.zeros((0, 0))
    Z = M.copy()
    for _ in range(maxiter):
        sign_det, logdet = np.linalg.slogdet(Z)
        if sign_det == 0 or not np.isfinite(logdet):
            raise SignIterationError("imaginary-axis spectrum: singular sign iterate")
        c = np.exp(-logdet / n)
        Zi = np.linalg.inv(Z)
        Znew = 0.5 * (c * Z + Zi / c)
        if not np.all(np.isfinite(Znew)):
            raise SignIterationError("imaginary-axis spectrum: sign iteration diverged")
        diff = np.linalg.norm(Znew - Z, 1)
        Z = Znew
        if diff <= tol * np.linalg.norm(Z, 1):
            break
    # a couple of unscaled steps polish the quadratic convergence
    for _ in range(2):
        Z = 0.5 * (Z + np.linalg.inv(Z))
    if np.linalg.norm(Z @ Z - np.eye(n), 1) > 1e-8 * max(1.0, np.linalg.norm(Z, 1) ** 2):
        raise SignIterationError("imaginary-axis spectrum: sign iteration did not converge")
    return Z


def sym_eigh(M):
    """Eigenvalues (ascending) and orthonormal eigenvectors of a symmetric matrix."""
    M = as_matrix(M)
    n = M.shape[0]
    if M.shape != (n, n):
        raise NumlinError("sym_eigvals needs a square matrix")
    scale = max(np.max(np.abs(M)) if M.size else 0.0, np.finfo(float).tiny)
    if np.max(np.abs(M - M.T), initial=0.0) > 1e-12 * max(scale, 1.0):
        raise NumlinError("sym_eigvals: matrix is not symmetric")
    if n == 0:
        return np.zeros(0), np.zeros((0, 0))
    Ms = 0.5 * (M + M.T)
    tol = 1e-13 * np.linalg.norm(Ms)
    d, V = _kernels.eigh_jacobi(np.ascontiguousarray(Ms), tol)
    order = np.argsort(d, kind="stable")
    return d[order], V[:, order]


def sym_eigvals(M) -> np.ndarray:
    return sym_eigh(M)[0]


def sqrtm_psd(M) -> np.ndarray:
    d, V = sym_eigh(M)
    return (V * np.sqrt(np.clip(d, 0.0, None))) @ V.T


def project_ellipsoid(y, P, rho) -> np.ndarray:
    """Euclidean projection of ``y`` onto ``{z : z^T P z <= rho}``."""
    y = np.asarray(y, dtype=float).ravel()
    P = as_matrix(P, "P")
    if rho <= 0:
        raise NumlinError("project_ellipsoid: rho must be positive")
    lam, V = sym_eigh(P)
    if lam.size and lam[0] <= 0:
        raise NumlinError("project_ellipsoid: P must be positive definite")
    if y @ P @ y <= rho:
        return y.copy()
    return _kernels.project_ellipsoid_eig(y, lam, np.ascontiguousarray(V), float(rho))


def van_loan(A, B, S, h: float):
    """Exact zero-order-hold data for ``x' = A x + B v`` with ``v`` held on ``[0, h]``.

    Returns ``(Ad, Bd, Sd)`` where ``Sd = ∫_0^h e^{C^T t} S e^{C t} dt`` with
    ``C = [[A, B], [0, 0]]``, so that the integral of ``(x; v)^T S (x; v)``
    over one step equals ``(x_k; v_k)^T Sd (x_k; v_k)``.
    """
    A = as_matrix(A, "A")
    n = A.shape[0]
    B = np.asarray(B, dtype=float).reshape(n, -1)
    k = n + B.shape[1]
    S = np.asarray(S, dtype=float).reshape(k, k)
    C = np.zeros((k, k))
    C[:n, :n] = A
    C[:n, n:] = B
    M = np.zeros((2 * k, 2 * k))
    M[:k, :k] = -C.T
    M[:k, k:] = S
    M[k:, k:] = C
    F = expm(M * h)
    F22 = F[k:, k:]
    Sd = F22.T @ F[:k, k:]
    Sd = 0.5 * (Sd + Sd.T)
    return F22[:n, :n], F22[:n, n:], Sd
