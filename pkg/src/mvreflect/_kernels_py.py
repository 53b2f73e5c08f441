"""Numpy implementations of the hot kernels.

These mirror ``_core.pyx`` operation for operation so that both backends
produce the same floating-point results on the built-in sections.

A *section* is the frozen shape of a built-in domain at one instant:

* ``kind == BALL``: points within ``radius`` of ``center`` (an interval in 1-D).
* ``kind == RBOX``: axis-aligned box of half-widths ``half`` whose corners are
  rounded with radius ``corner``; equivalently all points within ``corner`` of
  the inner box with half-widths ``half - corner``.
"""
import numpy as np

BALL = 0
RBOX = 1

OK = 0
FAIL_ITERS = 1
FAIL_BRACKET = 2


def _norm(v):
    acc = v[:, 0] * v[:, 0]
    for k in range(1, v.shape[1]):
        acc = acc + v[:, k] * v[:, k]
    return np.sqrt(acc)


def _inner_offset(kind, center, half, corner, X):
    v = X - center
    if kind == RBOX:
        inner = half - corner
        v = v - np.clip(v, -inner, inner)
    return v


def section_distance(kind, center, radius, half, corner, X):
    X = np.asarray(X, dtype=float)
    v = _inner_offset(kind, center, half, corner, X)
    r = radius if kind == BALL else corner
    return np.maximum(_norm(v) - r, 0.0)


def section_nearest(kind, center, radius, half, corner, X):
    """Nearest boundary point and outward unit normal there, row by row."""
    X = np.asarray(X, dtype=float)
    n_pts, d = X.shape
    rel = X - center
    normal = np.zeros_like(X)
    if kind == BALL:
        nv = _norm(rel)
        zero = nv == 0.0
        safe = np.where(zero, 1.0, nv)
        normal = rel / safe[:, None]
        normal[zero] = 0.0
        normal[zero, 0] = 1.0
        return center + radius * normal, normal
    inner = half - corner
    v = rel - np.clip(rel, -inner, inner)
    nv = _norm(v)
    outside_inner = nv > 0.0
    safe = np.where(outside_inner, nv, 1.0)
    normal[outside_inner] = v[outside_inner] / safe[outside_inner, None]
    points = X.copy()
    points[outside_inner] = (X - v)[outside_inner] + corner * normal[outside_inner]
    deep = ~outside_inner
    if np.any(deep):
        margin = half - np.abs(rel[deep])
        face = np.argmin(margin, axis=1)
        rows = np.nonzero(deep)[0]
        sign = np.where(rel[rows, face] < 0.0, -1.0, 1.0)
        normal[rows, face] = sign
        points[rows, face] = center[face] + sign * half[face]
    return points, normal


def oblique_direction(normal, cos_a, sin_a):
    """Reflection direction: the inward normal turned by the field angle (2-D only)."""
    if normal.shape[1] == 2:
        g = np.empty_like(normal)
        g[:, 0] = -(cos_a * normal[:, 0] + sin_a * normal[:, 1])
        g[:, 1] = -(cos_a * normal[:, 1] - sin_a * normal[:, 0])
        return g
    return -normal


def project(kind, center, radius, half, corner, cos_a, sin_a, X, tol, max_step, max_iters):
    """Push every row of ``X`` back into the section along the oblique field.

    Returns ``(points, xi, displacement, iterations, status)``. ``xi`` is the
    arc length travelled, ``displacement`` the net move (the reflector
    increment), ``status`` is ``OK`` or one of the failure codes.
    """
    X = np.array(X, dtype=float)
    n_pts, d = X.shape
    center = np.asarray(center, dtype=float)
    half = np.asarray(half, dtype=float)
    xi = np.zeros(n_pts)
    disp = np.zeros_like(X)
    iters = np.zeros(n_pts, dtype=np.int64)
    status = np.zeros(n_pts, dtype=np.int64)

    def dist(P):
        return section_distance(kind, center, radius, half, corner, P)

    active = np.nonzero(dist(X) > 0.0)[0]
    while active.size:
        cur = X[active]
        d0 = dist(cur)
        inside = d0 <= 0.0
        active = active[~inside]
        cur = cur[~inside]
        d0 = d0[~inside]
        if not active.size:
            break
        over = iters[active] >= max_iters
        if np.any(over):
            status[active[over]] = FAIL_ITERS
            active, cur, d0 = active[~over], cur[~over], d0[~over]
            if not active.size:
                break
        _, normal = section_nearest(kind, center, radius, half, corner, cur)
        g = oblique_direction(normal, cos_a, sin_a)
        gnorm = _norm(g)

        # bracket: double the step from the current distance until inside
        s_in = d0.copy()
        s_out = np.zeros_like(d0)
        best_s = np.zeros_like(d0)
        best_d = d0.copy()
        bracketed = np.zeros(active.size, dtype=bool)
        failed = np.zeros(active.size, dtype=bool)
        todo = np.arange(active.size)
        while todo.size:
            dd = dist(cur[todo] + s_in[todo, None] * g[todo])
            iters[active[todo]] += 1
            hit = dd <= 0.0
            bracketed[todo[hit]] = True
            rest = todo[~hit]
            dd = dd[~hit]
            better = dd < best_d[rest]
            best_d[rest[better]] = dd[better]
            best_s[rest[better]] = s_in[rest[better]]
            s_out[rest] = s_in[rest]
            s_in[rest] = s_in[rest] * 2.0
            stop = (s_in[rest] > max_step) | (iters[active[rest]] >= max_iters)
            failed[rest[stop]] = True
            todo = rest[~stop]

        # bisection on the bracketed rows
        todo = np.nonzero(bracketed)[0]
        while todo.size:
            wide = s_in[todo] - s_out[todo] > tol
            budget = iters[active[todo]] < max_iters
            todo = todo[wide & budget]
            if not todo.size:
                break
            mid = 0.5 * (s_in[todo] + s_out[todo])
            dd = dist(cur[todo] + mid[:, None] * g[todo])
            iters[active[todo]] += 1
            hit = dd <= 0.0
            s_in[todo[hit]] = mid[hit]
            s_out[todo[~hit]] = mid[~hit]
        unresolved = bracketed & (s_in - s_out > tol)
        status[active[unresolved]] = FAIL_ITERS
        done = bracketed & ~unresolved

        # frozen-direction sub-step failed to enter: move to the best ray point and re-anchor
        retry = failed & (best_s > 0.0)
        status[active[failed & ~retry]] = FAIL_BRACKET

        step = np.where(done, s_in, np.where(retry, best_s, 0.0))
        moving = done | retry
        rows = active[moving]
        X[rows] = cur[moving] + step[moving, None] * g[moving]
        xi[rows] = xi[rows] + step[moving] * gnorm[moving]
        disp[rows] = disp[rows] + step[moving, None] * g[moving]
        active = active[retry]
    return X, xi, disp, iters, status


def w2_sq_1d(x, wx, y, wy):
    """Squared 2-Wasserstein distance between weighted atoms on the line."""
    ix = np.argsort(x, kind="stable")
    iy = np.argsort(y, kind="stable")
    xs, ws = np.asarray(x, float)[ix], np.asarray(wx, float)[ix]
    ys, vs = np.asarray(y, float)[iy], np.asarray(wy, float)[iy]
    cx = np.cumsum(ws)
    cy = np.cumsum(vs)
    cx[-1] = cy[-1] = 1.0
    u = np.union1d(cx, cy)
    lo = np.concatenate(([0.0], u[:-1]))
    mass = u - lo
    keep = mass > 0.0
    mid = 0.5 * (lo + u)[keep]
    i = np.minimum(np.searchsorted(cx, mid), xs.size - 1)
    j = np.minimum(np.searchsorted(cy, mid), ys.size - 1)
    diff = xs[i] - ys[j]
    return float(np.sum(mass[keep] * diff * diff))
