"""Compiled kernels for the maximum-likelihood radial plane fit.

A plane is held as a unit normal ``n``, a fixed anchor point ``x0`` and an
offset ``c`` along the normal, i.e. ``n . (y - x0) = c``.  Refinement is
Gauss-Newton over ``(a, b, c)`` where ``(a, b)`` move the normal inside its
tangent plane.  Residual, gradient and normal matrix come out of a single
pass over the members.

Output rows are laid out as ``[nx, ny, nz, sx, sy, sz, residual]``.
"""

import numpy as np
from numba import njit

OK = 0
DEGENERATE = 1
NO_CONVERGENCE = 2
PARALLEL = 3

MAX_ITERATIONS = 50
REL_TOL = 1e-12
COLLINEAR_TOL = 1e-12
MAX_HALVINGS = 40


@njit(cache=True, error_model="numpy")
def tangent_basis(n):
    # axis least aligned with n keeps the cross product well conditioned
    ax = np.abs(n)
    e = np.zeros(3)
    if ax[0] <= ax[1] and ax[0] <= ax[2]:
        e[0] = 1.0
    elif ax[1] <= ax[2]:
        e[1] = 1.0
    else:
        e[2] = 1.0
    t1 = np.cross(n, e)
    t1 /= np.sqrt(t1[0] * t1[0] + t1[1] * t1[1] + t1[2] * t1[2])
    t2 = np.cross(n, t1)
    return t1, t2


@njit(cache=True, error_model="numpy")
def pca(P, idx):
    m = idx.shape[0]
    mx = my = mz = 0.0
    for i in range(m):
        q = idx[i]
        mx += P[q, 0]
        my += P[q, 1]
        mz += P[q, 2]
    mx /= m
    my /= m
    mz /= m
    cxx = cxy = cxz = cyy = cyz = czz = 0.0
    for i in range(m):
        q = idx[i]
        dx = P[q, 0] - mx
        dy = P[q, 1] - my
        dz = P[q, 2] - mz
        cxx += dx * dx
        cxy += dx * dy
        cxz += dx * dz
        cyy += dy * dy
        cyz += dy * dz
        czz += dz * dz
    C = np.array([[cxx, cxy, cxz], [cxy, cyy, cyz], [cxz, cyz, czz]])
    w, U = np.linalg.eigh(C)
    return np.array([mx, my, mz]), U[:, 0].copy(), w


@njit(cache=True, error_model="numpy")
def solve3(A, b):
    """Cofactor solve of a symmetric 3x3 system; None when singular."""
    c00 = A[1, 1] * A[2, 2] - A[1, 2] * A[2, 1]
    c01 = A[1, 2] * A[2, 0] - A[1, 0] * A[2, 2]
    c02 = A[1, 0] * A[2, 1] - A[1, 1] * A[2, 0]
    det = A[0, 0] * c00 + A[0, 1] * c01 + A[0, 2] * c02
    scale = abs(A[0, 0]) + abs(A[1, 1]) + abs(A[2, 2])
    if not np.isfinite(det) or abs(det) <= 1e-300 or abs(det) <= 1e-15 * scale ** 3:
        return None
    c11 = A[0, 0] * A[2, 2] - A[0, 2] * A[2, 0]
    c12 = A[0, 1] * A[2, 0] - A[0, 0] * A[2, 1]
    c22 = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
    c10 = A[0, 2] * A[2, 1] - A[0, 1] * A[2, 2]
    c20 = A[0, 1] * A[1, 2] - A[0, 2] * A[1, 1]
    c21 = A[0, 2] * A[1, 0] - A[0, 0] * A[1, 2]
    x = np.empty(3)
    x[0] = (c00 * b[0] + c10 * b[1] + c20 * b[2]) / det
    x[1] = (c01 * b[0] + c11 * b[1] + c21 * b[2]) / det
    x[2] = (c02 * b[0] + c12 * b[1] + c22 * b[2]) / det
    return x


# FMA contraction only; sums are never reassociated, so results stay bit-stable
@njit(cache=True, error_model="numpy", fastmath={"contract", "arcp"})
def _pass(S, V, R, idx, x0, n, c, eps, A, g):
    """Sum of squared radial residuals; fills ``A = J'J`` and ``g = J'rho``.

    Returns inf when some member ray is closer than ``eps`` to parallel.
    """
    t1, t2 = tangent_basis(n)
    n0, n1, n2 = n[0], n[1], n[2]
    u0, u1, u2 = t1[0], t1[1], t1[2]
    w0, w1, w2 = t2[0], t2[1], t2[2]
    p0, p1, p2 = x0[0], x0[1], x0[2]
    a00 = a01 = a02 = a11 = a12 = a22 = 0.0
    g0 = g1 = g2 = 0.0
    f = 0.0
    for i in range(idx.shape[0]):
        q = idx[i]
        vx = V[q, 0]
        vy = V[q, 1]
        vz = V[q, 2]
        nv = n0 * vx + n1 * vy + n2 * vz
        if abs(nv) < eps:
            return np.inf
        dx = p0 - S[q, 0]
        dy = p1 - S[q, 1]
        dz = p2 - S[q, 2]
        inv = 1.0 / nv
        rhat = (c + n0 * dx + n1 * dy + n2 * dz) * inv
        rho = R[q] - rhat
        f += rho * rho
        # hit point relative to the anchor
        hx = rhat * vx - dx
        hy = rhat * vy - dy
        hz = rhat * vz - dz
        j0 = (hx * u0 + hy * u1 + hz * u2) * inv
        j1 = (hx * w0 + hy * w1 + hz * w2) * inv
        j2 = -inv
        a00 += j0 * j0
        a01 += j0 * j1
        a02 += j0 * j2
        a11 += j1 * j1
        a12 += j1 * j2
        a22 += j2 * j2
        g0 += j0 * rho
        g1 += j1 * rho
        g2 += j2 * rho
    A[0, 0] = a00
    A[0, 1] = a01
    A[0, 2] = a02
    A[1, 0] = a01
    A[1, 1] = a11
    A[1, 2] = a12
    A[2, 0] = a02
    A[2, 1] = a12
    A[2, 2] = a22
    g[0] = g0
    g[1] = g1
    g[2] = g2
    return f


@njit(cache=True, error_model="numpy")
def refine(S, V, R, idx, x0, n, eps, out):
    """Gauss-Newton with backtracking from the plane through ``x0`` with normal ``n``."""
    m = idx.shape[0]
    c = 0.0
    A = np.empty((3, 3))
    g = np.empty(3)
    An = np.empty((3, 3))
    gn = np.empty(3)
    f = _pass(S, V, R, idx, x0, n, c, eps, A, g)
    if not np.isfinite(f):
        return PARALLEL
    converged = False
    for _ in range(MAX_ITERATIONS):
        if f == 0.0:
            converged = True
            break
        delta = solve3(A, -g)
        if delta is None:
            converged = True
            break
        t1, t2 = tangent_basis(n)
        step = 1.0
        accepted = False
        for _ls in range(MAX_HALVINGS):
            cand = n + step * (delta[0] * t1 + delta[1] * t2)
            cand /= np.sqrt(cand[0] * cand[0] + cand[1] * cand[1] + cand[2] * cand[2])
            cc = c + step * delta[2]
            fc = _pass(S, V, R, idx, x0, cand, cc, eps, An, gn)
            if fc < f:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            converged = True
            break
        decrease = f - fc
        n = cand
        c = cc
        f = fc
        A[:, :] = An
        g[:] = gn
        if decrease <= REL_TOL * (f + decrease):
            converged = True
            break
    if not converged:
        return NO_CONVERGENCE

    # orient towards the sensor: n.v < 0 for the majority of members
    neg = 0
    for i in range(m):
        q = idx[i]
        if n[0] * V[q, 0] + n[1] * V[q, 1] + n[2] * V[q, 2] < 0.0:
            neg += 1
    if 2 * neg < m:
        n = -n
        c = -c
    for a in range(3):
        out[a] = n[a]
        out[3 + a] = x0[a] + c * n[a]
    out[6] = f
    return OK


@njit(cache=True, error_model="numpy")
def fit_into(S, V, R, P, idx, eps, out):
    """Fit one plane to the rays ``idx`` starting from their PCA plane."""
    out[:] = np.nan
    if idx.shape[0] < 3:
        return DEGENERATE
    x0, n, w = pca(P, idx)
    if w[2] <= 0.0 or w[1] <= COLLINEAR_TOL * w[2]:
        return DEGENERATE
    return refine(S, V, R, idx, x0, n, eps, out)


@njit(cache=True, error_model="numpy")
def fit_sets(S, V, R, P, sets, eps, out, status):
    """Fit each row of ``sets`` (already sorted) independently."""
    for i in range(sets.shape[0]):
        status[i] = fit_into(S, V, R, P, sets[i], eps, out[i])


@njit(cache=True, error_model="numpy")
def fit_extensions(S, V, R, members, ks, support, normal, eps, out, status):
    """Fit ``members`` plus one extra ray for every ray in ``ks``.

    Each fit starts from the current plane of ``members``; adding one ray
    moves the optimum only slightly.
    """
    m = members.shape[0]
    buf = np.empty(m + 1, dtype=members.dtype)
    for j in range(ks.shape[0]):
        k = ks[j]
        pos = np.searchsorted(members, k)
        buf[:pos] = members[:pos]
        buf[pos] = k
        buf[pos + 1:] = members[pos:]
        out[j, :] = np.nan
        status[j] = refine(S, V, R, buf, support, normal.copy(), eps, out[j])


@njit(cache=True, error_model="numpy")
def sorted_union(a, b):
    out = np.empty(a.shape[0] + b.shape[0], dtype=a.dtype)
    i = 0
    j = 0
    k = 0
    while i < a.shape[0] and j < b.shape[0]:
        if a[i] <= b[j]:
            out[k] = a[i]
            i += 1
        else:
            out[k] = b[j]
            j += 1
        k += 1
    while i < a.shape[0]:
        out[k] = a[i]
        i += 1
        k += 1
    while j < b.shape[0]:
        out[k] = b[j]
        j += 1
        k += 1
    return out


@njit(cache=True, error_model="numpy")
def fit_union(S, V, R, P, a, b, eps, out):
    return fit_into(S, V, R, P, sorted_union(a, b), eps, out)
