"""Hot inner loops.

Every kernel exists in a scalar-loop form that numba compiles and in a
column-vectorised numpy form used when acceleration is switched off
(``DAEMPC_NUMBA=0``).  Both forms perform the same rotations in the same
order, so results agree to rounding.
"""

import math

import numpy as np

from ._accel import USE_NUMBA, njit

# Jacobi sweeps stop when no rotation was needed in a full sweep.
_MAX_SWEEPS = 80


# ---------------------------------------------------------------------------
# one-sided Jacobi SVD (Hestenes), rows >= cols
# ---------------------------------------------------------------------------


@njit
def _svd_jacobi_loop(M):
    m, n = M.shape
    W = M.copy()
    V = np.eye(n)
    eps = 2.220446049250313e-16
    for _ in range(_MAX_SWEEPS):
        rotated = False
        for i in range(n - 1):
            for j in range(i + 1, n):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for k in range(m):
                    alpha += W[k, i] * W[k, i]
                    beta += W[k, j] * W[k, j]
                    gamma += W[k, i] * W[k, j]
                if gamma == 0.0 or abs(gamma) <= eps * np.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.sign(zeta) / (abs(zeta) + math.hypot(1.0, zeta))
                if zeta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                for k in range(m):
                    wi = W[k, i]
                    wj = W[k, j]
                    W[k, i] = c * wi - s * wj
                    W[k, j] = s * wi + c * wj
                for k in range(n):
                    vi = V[k, i]
                    vj = V[k, j]
                    V[k, i] = c * vi - s * vj
                    V[k, j] = s * vi + c * vj
        if not rotated:
            break
    return W, V


def _svd_jacobi_np(M):
    m, n = M.shape
    W = M.copy()
    V = np.eye(n)
    eps = np.finfo(float).eps
    for _ in range(_MAX_SWEEPS):
        rotated = False
        for i in range(n - 1):
            for j in range(i + 1, n):
                wi = W[:, i]
                wj = W[:, j]
                alpha = float(wi @ wi)
                beta = float(wj @ wj)
                gamma = float(wi @ wj)
                if gamma == 0.0 or abs(gamma) <= eps * math.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = 1.0 if zeta == 0.0 else math.copysign(1.0, zeta) / (abs(zeta) + math.hypot(1.0, zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                wi = wi.copy()
                W[:, i] = c * wi - s * wj
                W[:, j] = s * wi + c * wj
                vi = V[:, i].copy()
                vj = V[:, j].copy()
                V[:, i] = c * vi - s * vj
                V[:, j] = s * vi + c * vj
        if not rotated:
            break
    return W, V


# ---------------------------------------------------------------------------
# cyclic Jacobi for symmetric matrices
# ---------------------------------------------------------------------------


@njit
def _eigh_jacobi_loop(M, tol):
    n = M.shape[0]
    A = M.copy()
    V = np.eye(n)
    for _ in range(_MAX_SWEEPS):
        off = 0.0
        for i in range(n):
            for j in range(n):
                if i != j:
                    off += A[i, j] * A[i, j]
        if np.sqrt(off) <= tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + math.hypot(theta, 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    akp = A[k, p]
                    akq = A[k, q]
                    A[k, p] = c * akp - s * akq
                    A[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = A[p, k]
                    aqk = A[q, k]
                    A[p, k] = c * apk - s * aqk
                    A[q, k] = s * apk + c * aqk
                for k in range(n):
                    vkp = V[k, p]
                    vkq = V[k, q]
                    V[k, p] = c * vkp - s * vkq
                    V[k, q] = s * vkp + c * vkq
    return np.diag(A).copy(), V


def _eigh_jacobi_np(M, tol):
    n = M.shape[0]
    A = M.copy()
    V = np.eye(n)
    for _ in range(_MAX_SWEEPS):
        off = A - np.diag(np.diag(A))
        if math.sqrt(np.sum(off * off)) <= tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = float(A[p, q])
                if apq == 0.0:
                    continue
                theta = (float(A[q, q]) - float(A[p, p])) / (2.0 * apq)
                t = 1.0 if theta == 0.0 else math.copysign(1.0, theta) / (abs(theta) + math.hypot(theta, 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                ap = A[:, p].copy()
                aq = A[:, q].copy()
                A[:, p] = c * ap - s * aq
                A[:, q] = s * ap + c * aq
                ap = A[p, :].copy()
                aq = A[q, :].copy()
                A[p, :] = c * ap - s * aq
                A[q, :] = s * ap + c * aq
                vp = V[:, p].copy()
                vq = V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    return np.diag(A).copy(), V


# ---------------------------------------------------------------------------
# ellipsoid projection multiplier
# ---------------------------------------------------------------------------


@njit
def _ellipsoid_multiplier(lam, yt, rho):
    """Root mu >= 0 of sum lam*yt^2/(1+mu*lam)^2 = rho (eigen-coordinates)."""
    g0 = 0.0
    for i in range(lam.shape[0]):
        g0 += lam[i] * yt[i] * yt[i]
    if g0 <= rho:
        return 0.0
    lo = 0.0
    # g is decreasing; bracket with the crude bound from the smallest eigenvalue
    lmin = lam.min()
    hi = (np.sqrt(g0 / rho) - 1.0) / lmin + 1.0
    mu = 0.0
    for _ in range(200):
        g = 0.0
        dg = 0.0
        for i in range(lam.shape[0]):
            d = 1.0 + mu * lam[i]
            g += lam[i] * yt[i] * yt[i] / (d * d)
            dg -= 2.0 * lam[i] * lam[i] * yt[i] * yt[i] / (d * d * d)
        f = g - rho
        if f > 0.0:
            lo = mu
        else:
            hi = mu
        if abs(f) <= 1e-15 * rho:
            break
        step = mu - f / dg if dg != 0.0 else 0.5 * (lo + hi)
        if step <= lo or step >= hi:
            step = 0.5 * (lo + hi)
        if hi - lo <= 1e-16 * max(1.0, hi):
            break
        mu = step
    return mu


@njit
def _project_ellipsoid_eig(y, lam, V, rho):
    yt = V.T @ y
    mu = _ellipsoid_multiplier(lam, yt, rho)
    if mu == 0.0:
        return y.copy()
    zt = yt / (1.0 + mu * lam)
    # pull back onto the boundary against rounding in the secular equation
    val = 0.0
    for i in range(lam.shape[0]):
        val += lam[i] * zt[i] * zt[i]
    if val > rho:
        zt = zt * np.sqrt(rho / val)
    return V @ zt


# ---------------------------------------------------------------------------
# operator splitting for  min 1/2 x'Px + q'x  s.t.  A x in C
#   C = {rows < nbox : z <= hbox} x {last rows : (z+c)' Pe (z+c) <= rhoe}
# ---------------------------------------------------------------------------


@njit
def _admm_chunk(P, q, A, Kinv, hbox, nbox, ell_c, ell_lam, ell_V, ell_rho, has_ell,
                x, z, y, rho, sigma, alpha, iters, eps_abs, eps_rel, eps_inf):
    """Run at most ``iters`` iterations; return (x, z, y, status, k, prim, dual).

    status: 0 running, 1 converged, 2 primal infeasible.
    """
    m = A.shape[0]
    AT = A.T
    status = 0
    prim = np.inf
    dual = np.inf
    k = 0
    for k in range(iters):
        y_prev = y.copy()
        rhs = sigma * x - q + AT @ (rho * z - y)
        xt = Kinv @ rhs
        zt = A @ xt
        x = alpha * xt + (1.0 - alpha) * x
        zr = alpha * zt + (1.0 - alpha) * z
        v = zr + y / rho
        znew = v.copy()
        for i in range(nbox):
            if znew[i] > hbox[i]:
                znew[i] = hbox[i]
        if has_ell:
            e = v[nbox:] + ell_c
            pe = _project_ellipsoid_eig(e, ell_lam, ell_V, ell_rho)
            znew[nbox:] = pe - ell_c
        y = y + rho * (zr - znew)
        z = znew
        Ax = A @ x
        Px = P @ x
        ATy = AT @ y
        prim = np.max(np.abs(Ax - z)) if m > 0 else 0.0
        dual = np.max(np.abs(Px + q + ATy))
        scale_p = max(np.max(np.abs(Ax)) if m > 0 else 0.0, np.max(np.abs(z)) if m > 0 else 0.0)
        scale_d = max(np.max(np.abs(Px)), max(np.max(np.abs(ATy)), np.max(np.abs(q))))
        if prim <= eps_abs + eps_rel * scale_p and dual <= eps_abs + eps_rel * scale_d:
            status = 1
            break
        # primal infeasibility certificate from successive dual differences
        dy = y - y_prev
        ndy = np.max(np.abs(dy)) if m > 0 else 0.0
        if ndy > 1e-14:
            cert = True
            supp = 0.0
            for i in range(nbox):
                if dy[i] < -eps_inf * ndy:
                    cert = False
                    break
                supp += hbox[i] * max(dy[i], 0.0)
            if cert and has_ell:
                de = dy[nbox:]
                w = ell_V.T @ de
                quad = 0.0
                for i in range(w.shape[0]):
                    quad += w[i] * w[i] / ell_lam[i]
                supp += -(ell_c @ de) + np.sqrt(ell_rho * quad)
            if cert and np.max(np.abs(AT @ dy)) <= eps_inf * ndy and supp < -eps_inf * ndy:
                status = 2
                break
    return x, z, y, status, k + 1, prim, dual


if USE_NUMBA:
    svd_jacobi = _svd_jacobi_loop
    eigh_jacobi = _eigh_jacobi_loop
else:
    svd_jacobi = _svd_jacobi_np
    eigh_jacobi = _eigh_jacobi_np

ellipsoid_multiplier = _ellipsoid_multiplier
project_ellipsoid_eig = _project_ellipsoid_eig
admm_chunk = _admm_chunk
