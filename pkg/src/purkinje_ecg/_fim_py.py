"""Pure-Python fallback for the fast-iterative eikonal kernel.

Same algorithm and call signature as the compiled extension; an order of
magnitude slower, intended for installs without a C toolchain and as a
cross-check in tests and benchmarks.
"""

from __future__ import annotations

from collections import deque

import numpy as np

BACKEND = "python"

_INF_CUT = 1e29
_BIG = _INF_CUT * 10.0


def _msym(m, a, b):
    return (a[0] * (m[0] * b[0] + m[1] * b[1] + m[2] * b[2])
            + a[1] * (m[1] * b[0] + m[3] * b[1] + m[4] * b[2])
            + a[2] * (m[2] * b[0] + m[4] * b[1] + m[5] * b[2]))


def _edge_update(x, xa, xb, ta, tb, m):
    if ta >= _INF_CUT or tb >= _INF_CUT:
        return _BIG
    e = (xa[0] - xb[0], xa[1] - xb[1], xa[2] - xb[2])
    p = (x[0] - xb[0], x[1] - xb[1], x[2] - xb[2])
    g1 = ta - tb
    a11 = _msym(m, e, e)
    if a11 <= 1e-300:
        return _BIG
    q1 = _msym(m, e, p)
    pmp = _msym(m, p, p)
    denom = 1.0 - g1 * g1 / a11
    rad = pmp - q1 * q1 / a11
    if denom <= 1e-14 or rad < 0.0:
        return _BIG
    ell = np.sqrt(rad / denom)
    alpha = (q1 - ell * g1) / a11
    if alpha <= 0.0 or alpha >= 1.0:
        return _BIG
    return tb + alpha * g1 + ell


def _local_update(x, xa, xb, xc, ta, tb, tc, m):
    best = _BIG
    for xo, to in ((xa, ta), (xb, tb), (xc, tc)):
        if to < _INF_CUT:
            p = (x[0] - xo[0], x[1] - xo[1], x[2] - xo[2])
            cand = to + np.sqrt(_msym(m, p, p))
            if cand < best:
                best = cand
    for cand in (_edge_update(x, xa, xb, ta, tb, m),
                 _edge_update(x, xb, xc, tb, tc, m),
                 _edge_update(x, xa, xc, ta, tc, m)):
        if cand < best:
            best = cand
    if ta < _INF_CUT and tb < _INF_CUT and tc < _INF_CUT:
        e1 = (xa[0] - xc[0], xa[1] - xc[1], xa[2] - xc[2])
        e2 = (xb[0] - xc[0], xb[1] - xc[1], xb[2] - xc[2])
        p = (x[0] - xc[0], x[1] - xc[1], x[2] - xc[2])
        g1, g2 = ta - tc, tb - tc
        a11 = _msym(m, e1, e1)
        a12 = _msym(m, e1, e2)
        a22 = _msym(m, e2, e2)
        q1 = _msym(m, e1, p)
        q2 = _msym(m, e2, p)
        pmp = _msym(m, p, p)
        det = a11 * a22 - a12 * a12
        if det > 1e-300:
            i11, i12, i22 = a22 / det, -a12 / det, a11 / det
            c1 = g1 * (i11 * g1 + i12 * g2) + g2 * (i12 * g1 + i22 * g2)
            c0 = q1 * (i11 * q1 + i12 * q2) + q2 * (i12 * q1 + i22 * q2)
            denom = 1.0 - c1
            rad = pmp - c0
            if denom > 1e-14 and rad >= 0.0:
                ell = np.sqrt(rad / denom)
                s1 = i11 * (q1 - ell * g1) + i12 * (q2 - ell * g2)
                s2 = i12 * (q1 - ell * g1) + i22 * (q2 - ell * g2)
                if s1 >= -1e-12 and s2 >= -1e-12 and s1 + s2 <= 1.0 + 1e-12:
                    cand = tc + g1 * s1 + g2 * s2 + ell
                    if cand < best:
                        best = cand
    return best


def fim_solve(vertices, tets, minv, v2t_off, v2t_idx, nbr_off, nbr_idx,
              times0, tol):
    """Solve the anisotropic eikonal equation; returns per-vertex times (ms)."""
    n = len(vertices)
    times = np.asarray(times0, dtype=np.float64).copy()
    times[times > _INF_CUT] = _BIG
    inq = np.zeros(n, dtype=bool)
    queue: deque[int] = deque()
    for v in np.where(times < _INF_CUT)[0]:
        for u in nbr_idx[nbr_off[v]:nbr_off[v + 1]]:
            if not inq[u]:
                inq[u] = True
                queue.append(int(u))
    verts = vertices
    while queue:
        v = queue.popleft()
        inq[v] = False
        old = times[v]
        best = old
        x = verts[v]
        for t in v2t_idx[v2t_off[v]:v2t_off[v + 1]]:
            others = [int(u) for u in tets[t] if u != v]
            a, b, c = others
            cand = _local_update(x, verts[a], verts[b], verts[c],
                                 times[a], times[b], times[c], minv[t])
            if cand < best:
                best = cand
        if best < old - tol:
            times[v] = best
            for u in nbr_idx[nbr_off[v]:nbr_off[v + 1]]:
                if not inq[u]:
                    inq[u] = True
                    queue.append(int(u))
    times[times >= _INF_CUT] = np.inf
    return times
