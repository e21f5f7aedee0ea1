"""Structure of matrix pencils ``sE - A`` and descriptor systems ``[E, A, B]``.

The quasi-Kronecker decomposition is computed from the Wong sequences

    V_{i+1} = A^{-1}(E V_i),  V_0 = R^n        (limit V*)
    W_{i+1} = E^{-1}(A W_i),  W_0 = {0}        (limit W*)

whose sums and intersections give column spaces of the underdetermined
(V* ∩ W*), finite (V* mod U), infinite (W* mod U) and overdetermined
(complement of V* + W*) parts.  The resulting block-triangular pencil is
decoupled by generalized Sylvester equations.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import numlin
from .numlin import RankTolerance, as_matrix


class StructureError(ValueError):
    """Structural property required by an operation does not hold."""


class RegularityRequiredError(StructureError):
    pass


class IllPosedStructureWarning(UserWarning):
    """A rank decision was close to the numerical threshold."""


@dataclass(frozen=True)
class DaeSystem:
    """Descriptor system ``d/dt (E x) = A x + B u``."""

    E: np.ndarray
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        E = as_matrix(self.E, "E")
        A = as_matrix(self.A, "A")
        if E.shape != A.shape:
            raise ValueError(f"E and A must have equal shape, got {E.shape} and {A.shape}")
        B = np.asarray(self.B, dtype=float)
        if B.size == 0 and B.ndim != 2:
            B = np.zeros((E.shape[0], 0))
        B = as_matrix(B, "B")
        if B.shape[0] != E.shape[0]:
            raise ValueError(f"B must have {E.shape[0]} rows, got {B.shape[0]}")
        object.__setattr__(self, "E", E)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def ell(self) -> int:
        return self.E.shape[0]

    @property
    def n(self) -> int:
        return self.E.shape[1]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def extended(self):
        """The pencil ``s[E, 0] - [A, B]`` acting on ``(x, u)``."""
        return np.hstack([self.E, np.zeros((self.ell, self.m))]), np.hstack([self.A, self.B])


@dataclass(frozen=True)
class ConstraintSet:
    """Mixed constraints ``F x + G u <= 1`` (componentwise)."""

    F: np.ndarray
    G: np.ndarray

    def __post_init__(self):
        F = np.asarray(self.F, dtype=float)
        G = np.asarray(self.G, dtype=float)
        if F.ndim != 2 or G.ndim != 2 or F.shape[0] != G.shape[0]:
            raise ValueError("F and G must be matrices with equal row counts")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "G", G)

    @property
    def p(self) -> int:
        return self.F.shape[0]

    @property
    def FG(self) -> np.ndarray:
        return np.hstack([self.F, self.G])

    @classmethod
    def empty(cls, n: int, m: int) -> "ConstraintSet":
        return cls(np.zeros((0, n)), np.zeros((0, m)))


@dataclass(frozen=True)
class KroneckerStructure:
    """Block sizes and transforms with ``left @ (sE - A) @ right`` block diagonal.

    Block order is underdetermined, finite (J), infinite (N), overdetermined.
    Only the sizes are invariants; the transforms are one valid choice.
    """

    l_U: int
    n_U: int
    n_J: int
    n_N: int
    l_O: int
    n_O: int
    underdetermined_column_indices: tuple
    overdetermined_row_indices: tuple
    J: np.ndarray
    N: np.ndarray
    nilpotency_index: int
    left_transform: np.ndarray
    right_transform: np.ndarray
    blocks: dict = field(repr=False)
    condition: float = 1.0
    marginal: bool = False

    @property
    def sizes(self) -> tuple:
        return (self.l_U, self.n_U, self.n_J, self.n_N, self.l_O, self.n_O)

    @property
    def row_slices(self):
        cuts = np.cumsum([0, self.l_U, self.n_J, self.n_N, self.l_O])
        return [slice(cuts[i], cuts[i + 1]) for i in range(4)]

    @property
    def col_slices(self):
        cuts = np.cumsum([0, self.n_U, self.n_J, self.n_N, self.n_O])
        return [slice(cuts[i], cuts[i + 1]) for i in range(4)]

    def signature(self) -> tuple:
        """Everything that is invariant under strict equivalence."""
        return (
            self.sizes,
            tuple(sorted(self.underdetermined_column_indices)),
            tuple(sorted(self.overdetermined_row_indices)),
            self.nilpotency_index,
        )


# ---------------------------------------------------------------------------
# subspace helpers (orthonormal bases as n x k arrays)
# ---------------------------------------------------------------------------


class _Ranker:
    """Rank decisions against one reference scale; remembers marginal calls."""

    def __init__(self, scale: float, rtol: float = numlin.DEFAULT_RTOL):
        self.policy = RankTolerance(rtol=rtol, scale=max(scale, np.finfo(float).tiny))
        self.unit = RankTolerance(rtol=rtol, scale=1.0)
        self.margin = np.inf

    def _dec(self, M, unit=False):
        d = numlin.rank_decompose(M, self.unit if unit else self.policy)
        self.margin = min(self.margin, d.margin)
        return d

    def orth(self, M, unit=False):
        M = np.atleast_2d(M)
        if M.shape[1] == 0:
            return np.zeros((M.shape[0], 0))
        return self._dec(M, unit).range_basis

    def null(self, M, unit=False):
        return self._dec(M, unit).null_basis

    def preimage(self, M, S):
        """{x : M x in range S}."""
        ell = M.shape[0]
        if S.shape[1] >= ell:
            return np.eye(M.shape[1])
        return self.null((np.eye(ell) - S @ S.T) @ M)

    def intersect(self, V, W):
        if V.shape[1] == 0 or W.shape[1] == 0:
            return np.zeros((V.shape[0], 0))
        C = self.null(np.hstack([V, -W]), unit=True)
        return self.orth(V @ C[: V.shape[1]], unit=True)

    def rel_complement(self, inner, outer):
        """Basis of outer ⊖ inner (inner ⊆ outer)."""
        if outer.shape[1] == 0:
            return outer
        proj = outer - inner @ (inner.T @ outer)
        return self.orth(proj, unit=True)

    def sum(self, V, W):
        return self.orth(np.hstack([V, W]), unit=True)


def _pencil_scale(E, A) -> float:
    return max(np.linalg.norm(E), np.linalg.norm(A), 1e-300)


def wong_sequences(E, A, ranker: Optional[_Ranker] = None):
    """Limits (V*, W*) of the Wong sequences as orthonormal bases."""
    E = as_matrix(E, "E")
    A = as_matrix(A, "A")
    ranker = ranker or _Ranker(_pencil_scale(E, A))
    n = E.shape[1]
    V = np.eye(n)
    for _ in range(n + 1):
        Vn = ranker.preimage(A, ranker.orth(E @ V))
        if Vn.shape[1] == V.shape[1]:
            V = Vn
            break
        V = Vn
    W = np.zeros((n, 0))
    for _ in range(n + 1):
        Wn = ranker.preimage(E, ranker.orth(A @ W) if W.shape[1] else np.zeros((E.shape[0], 0)))
        if Wn.shape[1] == W.shape[1]:
            break
        W = Wn
    return V, W


def _chain_lengths(E, A, ranker: _Ranker) -> tuple:
    """Column minimal indices (as chain lengths n_i >= 1) of a purely underdetermined pencil."""
    n = E.shape[1]
    dims = [0]
    W = np.zeros((n, 0))
    for _ in range(n + 1):
        Wn = ranker.preimage(E, ranker.orth(A @ W) if W.shape[1] else np.zeros((E.shape[0], 0)))
        dims.append(Wn.shape[1])
        if Wn.shape[1] == W.shape[1]:
            break
        W = Wn
    inc = [dims[k] - dims[k - 1] for k in range(1, len(dims))] + [0]
    lengths = []
    for k in range(1, len(inc)):
        lengths += [k] * (inc[k - 1] - inc[k])
    return tuple(sorted(lengths))


def _solve_gen_sylvester(Eii, Aii, Ejj, Ajj, Eij, Aij):
    """Z, Y with Eii Z + Y Ejj = -Eij and Aii Z + Y Ajj = -Aij."""
    li, ni = Eii.shape
    lj, nj = Ejj.shape
    if li * nj == 0:
        return np.zeros((ni, nj)), np.zeros((li, lj)), 0.0
    top = np.hstack([np.kron(np.eye(nj), Eii), np.kron(Ejj.T, np.eye(li))])
    bot = np.hstack([np.kron(np.eye(nj), Aii), np.kron(Ajj.T, np.eye(li))])
    M = np.vstack([top, bot])
    rhs = -np.concatenate([Eij.reshape(-1, order="F"), Aij.reshape(-1, order="F")])
    sol = np.linalg.lstsq(M, rhs, rcond=None)[0]
    res = np.linalg.norm(M @ sol - rhs)
    Z = sol[: ni * nj].reshape(ni, nj, order="F")
    Y = sol[ni * nj :].reshape(li, lj, order="F")
    return Z, Y, res


def kronecker_structure(E, A, rtol: float = numlin.DEFAULT_RTOL) -> KroneckerStructure:
    """Quasi-Kronecker decomposition of ``sE - A``."""
    E = as_matrix(E, "E")
    A = as_matrix(A, "A")
    if E.shape != A.shape:
        raise ValueError("E and A must have equal shape")
    ell, n = E.shape
    scale = _pencil_scale(E, A)
    rk = _Ranker(scale, rtol)

    V, W = wong_sequences(E, A, rk)
    QU = rk.intersect(V, W)
    QJ = rk.rel_complement(QU, V)
    QN = rk.rel_complement(QU, W)
    QO = numlin.complement(rk.sum(V, W), n)
    EV = rk.orth(E @ V) if V.shape[1] else np.zeros((ell, 0))
    AW = rk.orth(A @ W) if W.shape[1] else np.zeros((ell, 0))
    RU = rk.intersect(EV, AW)
    RJ = rk.rel_complement(RU, EV)
    RN = rk.rel_complement(RU, AW)
    RO = numlin.complement(rk.sum(EV, AW), ell)

    l_U, n_U = RU.shape[1], QU.shape[1]
    n_J, n_N = QJ.shape[1], QN.shape[1]
    l_O, n_O = RO.shape[1], QO.shape[1]
    if RJ.shape[1] != n_J or RN.shape[1] != n_N or (n_U and l_U >= n_U) or (l_O and l_O <= n_O):
        raise StructureError(
            "inconsistent quasi-Kronecker block sizes "
            f"(rows {l_U},{RJ.shape[1]},{RN.shape[1]},{l_O}; cols {n_U},{n_J},{n_N},{n_O}); "
            "the rank decisions are ill-posed at this tolerance"
        )

    R = np.hstack([RU, RJ, RN, RO])
    Q = np.hstack([QU, QJ, QN, QO])
    left = np.linalg.inv(R) if ell else np.zeros((0, 0))
    right = Q
    Et = left @ E @ right
    At = left @ A @ right
    rows = np.cumsum([0, l_U, n_J, n_N, l_O])
    cols = np.cumsum([0, n_U, n_J, n_N, n_O])
    rs = [slice(rows[i], rows[i + 1]) for i in range(4)]
    cs = [slice(cols[i], cols[i + 1]) for i in range(4)]

    tol = 1e-8 * scale * max(1.0, np.linalg.cond(R) if ell else 1.0)
    for i in range(4):
        for j in range(i):
            if Et[rs[i], cs[j]].size and (
                np.max(np.abs(Et[rs[i], cs[j]])) > tol or np.max(np.abs(At[rs[i], cs[j]])) > tol
            ):
                raise StructureError("quasi-Kronecker triangular form failed; structure is ill-posed")
            Et[rs[i], cs[j]] = 0.0
            At[rs[i], cs[j]] = 0.0

    for j in range(1, 4):
        for i in range(j - 1, -1, -1):
            Z, Y, res = _solve_gen_sylvester(
                Et[rs[i], cs[i]], At[rs[i], cs[i]], Et[rs[j], cs[j]], At[rs[j], cs[j]],
                Et[rs[i], cs[j]], At[rs[i], cs[j]],
            )
            if res > 1e-8 * scale * (1 + np.linalg.norm(Z) + np.linalg.norm(Y)):
                raise StructureError("block decoupling failed (generalized Sylvester equation)")
            Lop = np.eye(ell)
            Lop[rs[i], rs[j]] = Y
            Rop = np.eye(n)
            Rop[cs[i], cs[j]] = Z
            left = Lop @ left
            right = right @ Rop
            Et = Lop @ Et @ Rop
            At = Lop @ At @ Rop
            Et[rs[i], cs[j]] = 0.0
            At[rs[i], cs[j]] = 0.0

    blocks = {}
    for name, k in zip("UJNO", range(4)):
        blocks["E_" + name] = Et[rs[k], cs[k]].copy()
        blocks["A_" + name] = At[rs[k], cs[k]].copy()

    if n_J:
        Jm = np.linalg.solve(blocks["E_J"], blocks["A_J"])
    else:
        Jm = np.zeros((0, 0))
    if n_N:
        Nm = np.linalg.solve(blocks["A_N"], blocks["E_N"])
    else:
        Nm = np.zeros((0, 0))
    nu = nilpotency_index(Nm)

    sub = _Ranker(scale, rtol)
    col_idx = _chain_lengths(blocks["E_U"], blocks["A_U"], sub) if n_U else ()
    row_idx = _chain_lengths(blocks["E_O"].T, blocks["A_O"].T, sub) if l_O else ()
    if sum(col_idx) != n_U or len(col_idx) != n_U - l_U or sum(row_idx) != l_O or len(row_idx) != l_O - n_O:
        raise StructureError("minimal indices do not match block sizes; structure is ill-posed")

    cond = max(np.linalg.cond(left) if ell else 1.0, np.linalg.cond(right) if n else 1.0)
    marginal = min(rk.margin, sub.margin) < 1.0
    if marginal:
        warnings.warn(
            "ill-posed structure: a singular value lies within 10x of the rank threshold",
            IllPosedStructureWarning,
            stacklevel=2,
        )
    return KroneckerStructure(
        l_U=l_U, n_U=n_U, n_J=n_J, n_N=n_N, l_O=l_O, n_O=n_O,
        underdetermined_column_indices=col_idx,
        overdetermined_row_indices=row_idx,
        J=Jm, N=Nm, nilpotency_index=nu,
        left_transform=left, right_transform=right,
        blocks=blocks, condition=float(cond), marginal=marginal,
    )


def nilpotency_index(N) -> int:
    """min{i : N^i = 0}; 0 for the empty matrix."""
    N = np.asarray(N, dtype=float)
    k = N.shape[0]
    if k == 0:
        return 0
    ref = max(np.linalg.norm(N), 1.0)
    P = np.eye(k)
    for i in range(1, k + 1):
        P = P @ N
        if numlin.rank(P, RankTolerance(scale=ref**i)) == 0:
            return i
    raise StructureError("nilpotent block is not nilpotent to rank tolerance")


def index(E, A) -> int:
    """Index of the pencil, i.e. the nilpotency index of its infinite part."""
    return kronecker_structure(E, A).nilpotency_index


def is_regular(sys: DaeSystem) -> bool:
    """True iff sE - A is square with det(λE - A) not identically zero.

    Tested at λ_k = k + 1/2, k = 0..n: a nonzero determinant polynomial of
    degree <= n cannot vanish at n + 1 points.
    """
    if sys.ell != sys.n:
        return False
    n = sys.n
    if n == 0:
        return True
    scale = _pencil_scale(sys.E, sys.A)
    for k in range(n + 1):
        lam = k + 0.5
        M = lam * sys.E - sys.A
        if numlin.rank(M, RankTolerance(scale=scale * (1 + lam))) == n:
            return True
    return False


def impulse_controllable(sys: DaeSystem) -> bool:
    """rank [E, A Z, B] = n with im Z = ker E (regular systems only)."""
    if not is_regular(sys):
        raise RegularityRequiredError(
            "regularity required for the impulse-controllability rank test; "
            "use the unimodular regularization route for singular systems"
        )
    scale = _pencil_scale(sys.E, sys.A)
    pol = RankTolerance(scale=max(scale, np.linalg.norm(sys.B)))
    Z = numlin.null_space(sys.E, RankTolerance(scale=scale))
    M = np.hstack([sys.E, sys.A @ Z, sys.B])
    return numlin.rank(M, pol) == sys.n


def is_weakly_consistent(sys: DaeSystem, reduced, x0, rtol: float = 1e-9) -> bool:
    """E x0 lies in range(E [I_n, 0] X), the set of attainable (Ex)(0)."""
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.shape[0] != sys.n:
        raise ValueError(f"x0 must have length {sys.n}, got {x0.shape[0]}")
    X = reduced.X
    if X.shape[0] != sys.n + sys.m:
        raise ValueError("reduced ODE does not belong to this system")
    target = sys.E @ x0
    img = sys.E @ X[: sys.n]
    scale = max(np.linalg.norm(img), 1.0)
    basis = numlin.orth(img, RankTolerance(scale=scale)) if img.shape[1] else np.zeros((sys.ell, 0))
    resid = target - basis @ (basis.T @ target)
    return bool(np.linalg.norm(resid) <= rtol * max(1.0, np.linalg.norm(sys.E) * np.linalg.norm(x0)))
