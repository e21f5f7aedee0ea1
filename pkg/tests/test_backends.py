import json
import os
import subprocess
import sys

import numpy as np
import pytest

from daempc import _accel, _kernels, numlin


def _py(f):
    return getattr(f, "py_func", f)


@pytest.mark.parametrize("shape", [(1, 1), (3, 3), (6, 4), (8, 8)])
def test_svd_backends_agree(shape):
    rng = np.random.default_rng(sum(shape))
    M = rng.standard_normal(shape)
    W1, V1 = _kernels._svd_jacobi_loop(M.copy())
    W2, V2 = _kernels._svd_jacobi_np(M.copy())
    s1 = np.sort(np.linalg.norm(W1, axis=0))
    s2 = np.sort(np.linalg.norm(W2, axis=0))
    assert np.allclose(s1, s2, atol=1e-12)
    assert np.allclose(W1 @ V1.T, M) and np.allclose(W2 @ V2.T, M)


def test_eigh_backends_agree():
    rng = np.random.default_rng(4)
    L = rng.standard_normal((7, 7))
    M = L + L.T
    d1, V1 = _kernels._eigh_jacobi_loop(M.copy(), 1e-14)
    d2, V2 = _kernels._eigh_jacobi_np(M.copy(), 1e-14)
    assert np.allclose(np.sort(d1), np.sort(d2), atol=1e-12)
    assert np.allclose(np.sort(d1), np.linalg.eigvalsh(M), atol=1e-12)
    assert np.allclose((V2 * d2) @ V2.T, M)


def test_ellipsoid_projection_compiled_matches_python():
    lam = np.array([0.5, 2.0])
    V = np.eye(2)
    y = np.array([3.0, -1.0])
    a = _kernels.project_ellipsoid_eig(y, lam, V, 1.0)
    b = _py(_kernels._project_ellipsoid_eig)(y, lam, V, 1.0)
    assert np.allclose(a, b, atol=1e-13)
    assert a @ np.diag(lam) @ a == pytest.approx(1.0)


def test_admm_chunk_compiled_matches_python():
    rng = np.random.default_rng(0)
    nd = 4
    L = rng.standard_normal((nd, nd))
    P = L @ L.T + np.eye(nd)
    q = rng.standard_normal(nd)
    A = np.vstack([np.eye(nd), -np.eye(nd)])
    h = np.full(2 * nd, 0.2)
    Kinv = np.linalg.inv(P + 1e-6 * np.eye(nd) + A.T @ A)
    args = (P, q, A, Kinv, h, 2 * nd, np.zeros(1), np.ones(1), np.eye(1), 1.0, False,
            np.zeros(nd), np.zeros(2 * nd), np.zeros(2 * nd), 1.0, 1e-6, 1.6, 200, 1e-10, 1e-10, 1e-9)
    r1 = _kernels.admm_chunk(*[a.copy() if isinstance(a, np.ndarray) else a for a in args])
    r2 = _py(_kernels._admm_chunk)(*[a.copy() if isinstance(a, np.ndarray) else a for a in args])
    assert r1[3] == r2[3] and r1[4] == r2[4]
    assert np.allclose(r1[0], r2[0], atol=1e-12)


def test_flag_selects_numpy_backend():
    env = dict(os.environ, DAEMPC_NUMBA="0")
    code = "from daempc import _accel; print(_accel.backend_name())"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"


def test_pipeline_identical_across_backends():
    code = (
        "import json\n"
        "from daempc.cli import load_system\n"
        "from daempc.mpc import build_pipeline\n"
        "d = load_system('builtin:singular5')\n"
        "p = build_pipeline(d['system'], d['constraints'], d['S'])\n"
        "print(json.dumps([p.riccati.P_hat.ravel().tolist(), p.terminal.rho]))\n"
    )
    outs = []
    for flag in ("0", "1"):
        env = dict(os.environ, DAEMPC_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        outs.append(json.loads(res.stdout))
    (Pa, ra), (Pb, rb) = outs
    assert np.allclose(Pa, Pb, atol=1e-12)
    assert ra == pytest.approx(rb, abs=1e-12)


def test_backend_name_reflects_flag():
    assert _accel.backend_name() in ("numba", "numpy")
    assert numlin.svd(np.eye(2))[1].tolist() == [1.0, 1.0]
