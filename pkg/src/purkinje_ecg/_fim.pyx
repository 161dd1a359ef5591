# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled fast-iterative eikonal kernel on tetrahedral meshes.

Label-correcting sweep with a FIFO active list; the per-vertex update solves
the local minimization over each incident tet's opposite face in closed form,
falling back to edges and vertices when the face minimizer is infeasible.
Metric input is the inverse velocity tensor per tet (packed symmetric 3x3).
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()

DEF INF_CUT = 1e29

BACKEND = "compiled"


cdef inline double _msym(const double* m, const double* a, const double* b) nogil:
    # a . M . b with M packed as [xx, xy, xz, yy, yz, zz]
    return (a[0] * (m[0] * b[0] + m[1] * b[1] + m[2] * b[2])
            + a[1] * (m[1] * b[0] + m[3] * b[1] + m[4] * b[2])
            + a[2] * (m[2] * b[0] + m[4] * b[1] + m[5] * b[2]))


cdef double _local_update(const double* x, const double* xa, const double* xb,
                          const double* xc, double ta, double tb, double tc,
                          const double* m) nogil:
    cdef double best = INF_CUT * 10.0
    cdef double p[3]
    cdef double e1[3]
    cdef double e2[3]
    cdef double cand, q, a11, a22, a12, q1, q2, pmp, det
    cdef double i11, i12, i22, c1, c0, denom, rad, ell, g1, g2, s1, s2
    cdef int k

    # vertex fallbacks
    if ta < INF_CUT:
        for k in range(3):
            p[k] = x[k] - xa[k]
        q = _msym(m, p, p)
        cand = ta + sqrt(q)
        if cand < best:
            best = cand
    if tb < INF_CUT:
        for k in range(3):
            p[k] = x[k] - xb[k]
        q = _msym(m, p, p)
        cand = tb + sqrt(q)
        if cand < best:
            best = cand
    if tc < INF_CUT:
        for k in range(3):
            p[k] = x[k] - xc[k]
        q = _msym(m, p, p)
        cand = tc + sqrt(q)
        if cand < best:
            best = cand

    # edge minimizers (interior only; endpoints covered above)
    cand = _edge_update(x, xa, xb, ta, tb, m)
    if cand < best:
        best = cand
    cand = _edge_update(x, xb, xc, tb, tc, m)
    if cand < best:
        best = cand
    cand = _edge_update(x, xa, xc, ta, tc, m)
    if cand < best:
        best = cand

    # face minimizer
    if ta < INF_CUT and tb < INF_CUT and tc < INF_CUT:
        for k in range(3):
            e1[k] = xa[k] - xc[k]
            e2[k] = xb[k] - xc[k]
            p[k] = x[k] - xc[k]
        g1 = ta - tc
        g2 = tb - tc
        a11 = _msym(m, e1, e1)
        a12 = _msym(m, e1, e2)
        a22 = _msym(m, e2, e2)
        q1 = _msym(m, e1, p)
        q2 = _msym(m, e2, p)
        pmp = _msym(m, p, p)
        det = a11 * a22 - a12 * a12
        if det > 1e-300:
            i11 = a22 / det
            i12 = -a12 / det
            i22 = a11 / det
            c1 = g1 * (i11 * g1 + i12 * g2) + g2 * (i12 * g1 + i22 * g2)
            c0 = q1 * (i11 * q1 + i12 * q2) + q2 * (i12 * q1 + i22 * q2)
            denom = 1.0 - c1
            rad = pmp - c0
            if denom > 1e-14 and rad >= 0.0:
                ell = sqrt(rad / denom)
                s1 = i11 * (q1 - ell * g1) + i12 * (q2 - ell * g2)
                s2 = i12 * (q1 - ell * g1) + i22 * (q2 - ell * g2)
                if s1 >= -1e-12 and s2 >= -1e-12 and s1 + s2 <= 1.0 + 1e-12:
                    cand = tc + g1 * s1 + g2 * s2 + ell
                    if cand < best:
                        best = cand
    return best


cdef inline double _edge_update(const double* x, const double* xa,
                                const double* xb, double ta, double tb,
                                const double* m) nogil:
    cdef double e[3]
    cdef double p[3]
    cdef double a11, q1, pmp, g1, denom, rad, ell, alpha
    cdef int k
    if ta >= INF_CUT or tb >= INF_CUT:
        return INF_CUT * 10.0
    for k in range(3):
        e[k] = xa[k] - xb[k]
        p[k] = x[k] - xb[k]
    g1 = ta - tb
    a11 = _msym(m, e, e)
    if a11 <= 1e-300:
        return INF_CUT * 10.0
    q1 = _msym(m, e, p)
    pmp = _msym(m, p, p)
    denom = 1.0 - g1 * g1 / a11
    rad = pmp - q1 * q1 / a11
    if denom <= 1e-14 or rad < 0.0:
        return INF_CUT * 10.0
    ell = sqrt(rad / denom)
    alpha = (q1 - ell * g1) / a11
    if alpha <= 0.0 or alpha >= 1.0:
        return INF_CUT * 10.0
    return tb + alpha * g1 + ell


def fim_solve(double[:, ::1] vertices, long long[:, ::1] tets,
              double[:, ::1] minv, long long[::1] v2t_off,
              long long[::1] v2t_idx, long long[::1] nbr_off,
              long long[::1] nbr_idx, double[::1] times0, double tol):
    """Solve the anisotropic eikonal equation; returns per-vertex times (ms).

    times0 holds source times (finite) and +inf elsewhere; tol is the
    minimum improvement that keeps a vertex active.
    """
    cdef Py_ssize_t n = vertices.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] times_arr = np.asarray(times0).copy()
    cdef double[::1] times = times_arr
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] inq_arr = np.zeros(n, dtype=np.uint8)
    cdef unsigned char[::1] inq = inq_arr
    cdef cnp.ndarray[cnp.int64_t, ndim=1] queue_arr = np.empty(4 * n + 16, dtype=np.int64)
    cdef long long[::1] queue = queue_arr
    cdef Py_ssize_t cap = queue.shape[0]
    cdef Py_ssize_t head = 0, tail = 0, count = 0
    cdef Py_ssize_t v, u, t, j, pos, k
    cdef double best, cand, old
    cdef long long a, b, c
    cdef double x[3]

    # clamp +inf to the sentinel so arithmetic stays finite
    for v in range(n):
        if times[v] > INF_CUT:
            times[v] = INF_CUT * 10.0

    # seed: neighbors of every finite-time vertex
    for v in range(n):
        if times[v] < INF_CUT:
            for j in range(nbr_off[v], nbr_off[v + 1]):
                u = nbr_idx[j]
                if not inq[u]:
                    inq[u] = 1
                    queue[tail] = u
                    tail = (tail + 1) % cap
                    count += 1

    while count > 0:
        v = queue[head]
        head = (head + 1) % cap
        count -= 1
        inq[v] = 0
        old = times[v]
        best = old
        for k in range(3):
            x[k] = vertices[v, k]
        for j in range(v2t_off[v], v2t_off[v + 1]):
            t = v2t_idx[j]
            # the three vertices of tet t other than v
            pos = 0
            a = -1
            b = -1
            c = -1
            for k in range(4):
                u = tets[t, k]
                if u != v:
                    if a < 0:
                        a = u
                    elif b < 0:
                        b = u
                    else:
                        c = u
            cand = _local_update(x, &vertices[a, 0], &vertices[b, 0],
                                 &vertices[c, 0], times[a], times[b],
                                 times[c], &minv[t, 0])
            if cand < best:
                best = cand
        if best < old - tol:
            times[v] = best
            for j in range(nbr_off[v], nbr_off[v + 1]):
                u = nbr_idx[j]
                if not inq[u]:
                    inq[u] = 1
                    queue[tail] = u
                    tail = (tail + 1) % cap
                    count += 1

    # restore +inf for unreached vertices
    for v in range(n):
        if times[v] >= INF_CUT:
            times[v] = np.inf
    return times_arr
