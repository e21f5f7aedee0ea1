import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from daempc import numlin
from daempc.numlin import RankTolerance


def test_rank_of_identity():
    assert numlin.rank(np.eye(3)) == 3


def test_null_space_of_nilpotent_jordan_block():
    Z = numlin.null_space(np.array([[0.0, 1.0], [0.0, 0.0]]))
    assert Z.shape == (2, 1)
    assert np.allclose(np.abs(Z[:, 0]), [1.0, 0.0])


def test_rank_of_outer_product_sum():
    rng = np.random.default_rng(3)
    M = rng.standard_normal((6, 2)) @ rng.standard_normal((2, 5))
    d = numlin.rank_decompose(M)
    assert d.rank == 2
    assert d.null_basis.shape == (5, 3)
    assert np.allclose(M @ d.null_basis, 0, atol=1e-12)


def test_explicit_scale_hides_roundoff_block():
    M = np.diag([1e-13, 1e-14])
    assert numlin.rank(M) == 2
    assert numlin.rank(M, RankTolerance(scale=1.0)) == 0


def test_marginal_rank_is_reported():
    d = numlin.rank_decompose(np.diag([1.0, 3e-10]))
    assert d.margin < 1.0


finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=finite))
def test_svd_reconstructs(M):
    U, s, V = numlin.svd(M)
    assert np.allclose((U * s) @ V.T, M, atol=1e-10 * (1 + np.abs(M).max()))
    assert np.all(np.diff(s) <= 1e-12)
    assert np.allclose(s, np.linalg.svd(M, compute_uv=False), atol=1e-10 * (1 + s.max(initial=0)))


def test_svd_completes_u_for_zero_singular_values():
    U, s, V = numlin.svd(np.diag([2.0, 0.0, 0.0]))
    assert np.allclose(U.T @ U, np.eye(3))


def test_expm_diagonal_and_nilpotent():
    assert np.allclose(numlin.expm(np.diag([-1.0, 0.0])), np.diag([np.exp(-1), 1.0]))
    assert np.allclose(numlin.expm(np.array([[0.0, 1.0], [0.0, 0.0]])), [[1, 1], [0, 1]])


def test_expm_matches_scipy_on_random():
    sla = pytest.importorskip("scipy.linalg")
    rng = np.random.default_rng(5)
    for _ in range(10):
        M = 3 * rng.standard_normal((5, 5))
        assert np.allclose(numlin.expm(M), sla.expm(M), rtol=1e-10, atol=1e-12)


def test_lyapunov_diagonal():
    Y = numlin.solve_lyapunov(np.diag([-1.0, -2.0]), np.eye(2))
    assert np.allclose(Y, np.diag([0.5, 0.25]))


def test_lyapunov_resonant_raises():
    with pytest.raises(numlin.ResonantLyapunovError):
        numlin.solve_lyapunov(np.zeros((1, 1)), np.eye(1))


def test_matrix_sign():
    assert np.allclose(numlin.matrix_sign(np.diag([-3.0, 2.0])), np.diag([-1.0, 1.0]))
    with pytest.raises(numlin.SignIterationError):
        numlin.matrix_sign(np.array([[0.0, 1.0], [-1.0, 0.0]]))


def test_sym_eigvals_and_asymmetric_rejection():
    assert np.allclose(numlin.sym_eigvals(np.array([[2.0, 1.0], [1.0, 2.0]])), [1.0, 3.0])
    with pytest.raises(numlin.NumlinError):
        numlin.sym_eigvals(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_project_ellipsoid():
    P = np.diag([1.0, 4.0])
    assert np.allclose(numlin.project_ellipsoid([2.0, 0.0], np.eye(2), 1.0), [1.0, 0.0])
    y = np.array([0.1, 0.1])
    assert np.allclose(numlin.project_ellipsoid(y, P, 1.0), y)
    rng = np.random.default_rng(1)
    for _ in range(20):
        y = 5 * rng.standard_normal(2)
        p = numlin.project_ellipsoid(y, P, 1.0)
        assert p @ P @ p <= 1.0 + 1e-12
        # optimality: y - p is along the outward normal P p
        if y @ P @ y > 1:
            n = P @ p
            r = y - p
            assert abs(r[0] * n[1] - r[1] * n[0]) <= 1e-8 * np.linalg.norm(r) * np.linalg.norm(n)


def test_van_loan_closed_form():
    Ad, Bd, Sd = numlin.van_loan([[0.0]], [[1.0]], np.eye(2), 1.0)
    assert np.allclose(Ad, 1) and np.allclose(Bd, 1)
    assert np.allclose(Sd, [[1.0, 0.5], [0.5, 4.0 / 3.0]])


def test_van_loan_matches_fine_quadrature():
    rng = np.random.default_rng(2)
    A = rng.standard_normal((3, 3))
    B = rng.standard_normal((3, 2))
    L = rng.standard_normal((5, 5))
    S = L @ L.T
    h = 0.3
    _, _, Sd = numlin.van_loan(A, B, S, h)
    C = np.zeros((5, 5))
    C[:3, :3], C[:3, 3:] = A, B
    ts = np.linspace(0, h, 2001)
    vals = np.array([numlin.expm(C * t).T @ S @ numlin.expm(C * t) for t in ts])
    trap = getattr(np, "trapezoid", None) or np.trapz
    quad = trap(vals, ts, axis=0)
    assert np.allclose(Sd, quad, rtol=1e-6, atol=1e-8)
