import json
from importlib import resources

import numpy as np
import pytest

from daempc.mpc import build_pipeline
from daempc.pencil import ConstraintSet, DaeSystem


def load_bundled(name):
    doc = json.loads(resources.files("daempc").joinpath("data", f"{name}.json").read_text())
    B = np.array(doc["B"], dtype=float)
    n = len(doc["E"][0])
    if B.size == 0:
        B = np.zeros((len(doc["E"]), 0))
    m = B.shape[1]
    sys = DaeSystem(doc["E"], doc["A"], B)
    if "F" in doc:
        cons = ConstraintSet(doc["F"], doc["G"])
    else:
        cons = ConstraintSet.empty(n, m)
    S = np.array(doc.get("S", np.eye(n + m)), dtype=float)
    return sys, cons, S, np.array(doc.get("x0", np.zeros(n)), dtype=float)


@pytest.fixture(scope="session")
def singular5():
    return load_bundled("singular5")


@pytest.fixture(scope="session")
def singular5_pipeline(singular5):
    sys, cons, S, _ = singular5
    return build_pipeline(sys, cons, S)


NILPOTENT = DaeSystem([[0, 1], [0, 0]], np.eye(2), np.zeros((2, 0)))
SINGULAR_3 = DaeSystem(
    [[0, 1, 0], [0, 0, 0], [0, 0, 1]],
    [[1, 0, 0], [0, 0, 1], [0, 0, 0]],
    [[0], [0], [1]],
)


def random_stabilizable(rng, n, m):
    """Random (A, B, S) with S > 0 and (A, B) controllable almost surely."""
    A = rng.standard_normal((n, n))
    B = rng.standard_normal((n, m))
    L = rng.standard_normal((n + m, n + m))
    S = L @ L.T + 0.1 * np.eye(n + m)
    return A, B, S


def canonical_pencil(eps=(), eta=(), nil=(), n_finite=0, rng=None):
    """Block-diagonal pencil in Kronecker canonical form.

    ``eps`` are column minimal indices (blocks of size eps x (eps+1)), ``eta``
    row minimal indices, ``nil`` sizes of nilpotent Jordan blocks and
    ``n_finite`` the size of a random finite block.
    """
    rng = rng or np.random.default_rng(0)
    Es, As = [], []
    for e in eps:
        Es.append(np.hstack([np.eye(e), np.zeros((e, 1))]))
        As.append(np.hstack([np.zeros((e, 1)), np.eye(e)]))
    if n_finite:
        Es.append(np.eye(n_finite))
        As.append(rng.standard_normal((n_finite, n_finite)))
    for k in nil:
        Es.append(np.eye(k, k=1))
        As.append(np.eye(k))
    for e in eta:
        Es.append(np.vstack([np.eye(e), np.zeros((1, e))]))
        As.append(np.vstack([np.zeros((1, e)), np.eye(e)]))
    rows = sum(b.shape[0] for b in Es)
    cols = sum(b.shape[1] for b in Es)
    E, A = np.zeros((rows, cols)), np.zeros((rows, cols))
    i = j = 0
    for e, a in zip(Es, As):
        E[i : i + e.shape[0], j : j + e.shape[1]] = e
        A[i : i + e.shape[0], j : j + e.shape[1]] = a
        i, j = i + e.shape[0], j + e.shape[1]
    return E, A


def expected_sizes(eps=(), eta=(), nil=(), n_finite=0):
    return (
        sum(eps), sum(e + 1 for e in eps), n_finite, sum(nil),
        sum(e + 1 for e in eta), sum(eta),
    )


def well_conditioned(rng, k):
    Q1, _ = np.linalg.qr(rng.standard_normal((k, k)))
    Q2, _ = np.linalg.qr(rng.standard_normal((k, k)))
    return Q1 @ np.diag(rng.uniform(0.5, 2.0, k)) @ Q2


def random_dae(rng, n_finite=None, nil=None, m=None, constrained=False):
    """Random regular DAE hidden behind well-conditioned equivalence transforms.

    The nilpotent chains are driven at their last equation so the system is
    impulse controllable; the cost weight is positive definite.
    """
    n_finite = int(rng.integers(1, 4)) if n_finite is None else n_finite
    nil = tuple(int(k) for k in rng.integers(1, 3, size=int(rng.integers(0, 3)))) if nil is None else nil
    m = int(rng.integers(1, 3)) if m is None else m
    m = max(m, len(nil))
    E0, A0 = canonical_pencil(nil=nil, n_finite=n_finite, rng=rng)
    n = E0.shape[0]
    B0 = rng.standard_normal((n, m))
    row = n_finite
    for j, k in enumerate(nil):
        B0[row : row + k] = 0.0
        B0[row + k - 1, j] = 1.0
        row += k
    P, Q = well_conditioned(rng, n), well_conditioned(rng, n)
    sys = DaeSystem(P @ E0 @ Q, P @ A0 @ Q, P @ B0)
    L = rng.standard_normal((n + m, n + m))
    S = L @ L.T / (n + m) + 0.2 * np.eye(n + m)
    if constrained:
        F = rng.uniform(-1, 1, (2, n))
        G = rng.uniform(-1, 1, (2, m))
        cons = ConstraintSet(np.vstack([F, -F]), np.vstack([G, -G]))
    else:
        cons = ConstraintSet.empty(n, m)
    return sys, cons, S


def consistent_state(reduced, rng):
    """A state ``x0`` whose reduced initial value is a random ``z1``."""
    z1 = rng.standard_normal(reduced.n_hat)
    xu = reduced.X @ np.concatenate([z1, np.zeros(reduced.m_prime)])
    return xu[: reduced.n], z1


def reference_qp(docp, z0):
    """Independent condensing of the grid problem without terminal ingredients.

    Returns ``(H, f, c, A, b)`` for ``min 1/2 x'Hx + f'x + c`` s.t. ``A x <= b``
    with ``x = (u_0, ..., u_{N-1})``; rows are imposed at every grid point
    including the endpoint, where the last input is held.
    """
    N, nh, mp = docp.N, docp.n_hat, docp.m_prime
    # z_k = Phi_k z0 + Gam_k x
    Phi = [np.eye(nh)]
    Gam = [np.zeros((nh, N * mp))]
    for k in range(N):
        Sel = np.zeros((mp, N * mp))
        Sel[:, k * mp : (k + 1) * mp] = np.eye(mp)
        Phi.append(docp.Ad @ Phi[-1])
        Gam.append(docp.Ad @ Gam[-1] + docp.Bd @ Sel)
    H = np.zeros((N * mp, N * mp))
    f = np.zeros(N * mp)
    c = 0.0
    A_rows, b_rows = [], []
    for k in range(N + 1):
        Sel = np.zeros((mp, N * mp))
        j = min(k, N - 1)
        Sel[:, j * mp : (j + 1) * mp] = np.eye(mp)
        M = np.vstack([Gam[k], Sel])
        w = np.concatenate([Phi[k] @ z0, np.zeros(mp)])
        if k < N:
            H += 2 * M.T @ docp.Sd @ M
            f += 2 * M.T @ docp.Sd @ w
            c += w @ docp.Sd @ w
        if docp.rows.shape[0]:
            A_rows.append(docp.rows @ M)
            b_rows.append(1.0 - docp.rows @ w)
    A = np.vstack(A_rows) if A_rows else np.zeros((0, N * mp))
    b = np.concatenate(b_rows) if b_rows else np.zeros(0)
    return H, f, c, A, b


def brute_force_qp(H, f, c, A, b, pairs=None):
    """Minimize a strictly convex QP by enumerating active sets.

    ``pairs`` lists groups of row indices that can never be active together
    (e.g. the two sides of a box); each group contributes at most one row.
    """
    import itertools

    nd = H.shape[0]
    groups = pairs if pairs is not None else [[i] for i in range(A.shape[0])]
    best_x, best_val = None, np.inf
    choices = [[None] + list(g) for g in groups]
    for pick in itertools.product(*choices):
        act = [i for i in pick if i is not None]
        if len(act) > nd:
            continue
        Aa, ba = A[act], b[act]
        K = np.block([[H, Aa.T], [Aa, np.zeros((len(act), len(act)))]])
        try:
            sol = np.linalg.solve(K, np.concatenate([-f, ba]))
        except np.linalg.LinAlgError:
            continue
        x, lam = sol[:nd], sol[nd:]
        if lam.size and lam.min() < -1e-9:
            continue
        if A.shape[0] and np.max(A @ x - b) > 1e-9:
            continue
        val = 0.5 * x @ H @ x + f @ x + c
        if val < best_val:
            best_x, best_val = x, val
    return best_x, best_val


def oracle_instance(rng, N, state_bound=False):
    """Small OCP whose input bound (and optionally a state bound) is active.

    Returns the discretized problem, the initial reduced state and the
    groups of mutually exclusive rows for :func:`brute_force_qp`.
    """
    from daempc.ocp import discretize
    from daempc.regularize import build_reduced_ode

    nh = int(rng.integers(1, 3))
    sys, _, S = random_dae(rng, n_finite=nh, nil=(), m=1)
    red = build_reduced_ode(sys, S=S)
    z0 = rng.standard_normal(red.n_hat)
    free = discretize(red, 1.0, N)
    H, f, c, _, _ = reference_qp(free, z0)
    u_free = np.linalg.solve(H, -f)
    umax = 0.6 * np.max(np.abs(u_free))
    F = np.zeros((2, sys.n))
    G = np.array([[1.0], [-1.0]]) / umax
    if state_bound:
        # tighten a random state functional below its peak along the free optimum
        w = rng.standard_normal(sys.n)
        z = z0.copy()
        peak = abs(w @ _state(red, z0))
        start = 1.05 * peak
        for k in range(N):
            z = free.Ad @ z + free.Bd @ u_free[k : k + 1]
            peak = max(peak, abs(w @ _state(red, z)))
        bound = max(start, 0.8 * peak)
        F = np.vstack([F, w / bound, -w / bound])
        G = np.vstack([G, np.zeros((2, 1))])
    red = build_reduced_ode(sys, ConstraintSet(F, G), S)
    docp = discretize(red, 1.0, N)
    return docp, z0


def _state(red, z0):
    return (red.X @ np.concatenate([z0, np.zeros(red.m_prime)]))[: red.n]


def dedupe_rows(A, b):
    keep = []
    for i in range(A.shape[0]):
        if not any(np.allclose(A[i], A[j]) and np.isclose(b[i], b[j]) for j in keep):
            keep.append(i)
    A, b = A[keep], b[keep]
    # rows that are negatives of each other form an exclusive pair
    groups, used = [], set()
    for i in range(A.shape[0]):
        if i in used:
            continue
        g = [i]
        for j in range(i + 1, A.shape[0]):
            if j not in used and np.allclose(A[i], -A[j]):
                g.append(j)
                used.add(j)
        used.add(i)
        groups.append(g)
    return A, b, groups


# acceptance lines collected for the terminal summary
RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])
