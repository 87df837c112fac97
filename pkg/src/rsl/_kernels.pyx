# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Ricci / Ricci-DeTurck right-hand side.

Mirrors ``rsl.curvature.flow_rhs_numpy`` node by node: pass one forms the
Christoffel symbols, their trace and the DeTurck one-form at every node,
pass two differences them and assembles ``-2 Ric [+ P]``.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()

DEF MAXD = 3


cdef inline Py_ssize_t _nbr(Py_ssize_t idx, Py_ssize_t coord, Py_ssize_t k,
                            Py_ssize_t npts, Py_ssize_t stride) nogil:
    cdef Py_ssize_t c = coord + k
    if c >= npts:
        c -= npts
    elif c < 0:
        c += npts
    return idx + (c - coord) * stride


cdef inline void _coords(Py_ssize_t idx, int dim, Py_ssize_t npts, Py_ssize_t* out) nogil:
    cdef int a
    for a in range(dim - 1, -1, -1):
        out[a] = idx % npts
        idx //= npts


cdef inline double _invert(double g[MAXD][MAXD], double gi[MAXD][MAXD], int n) nogil:
    cdef double det
    if n == 2:
        det = g[0][0] * g[1][1] - g[0][1] * g[1][0]
        gi[0][0] = g[1][1] / det
        gi[1][1] = g[0][0] / det
        gi[0][1] = -g[0][1] / det
        gi[1][0] = -g[1][0] / det
        return det
    det = (g[0][0] * (g[1][1] * g[2][2] - g[1][2] * g[2][1])
           - g[0][1] * (g[1][0] * g[2][2] - g[1][2] * g[2][0])
           + g[0][2] * (g[1][0] * g[2][1] - g[1][1] * g[2][0]))
    gi[0][0] = (g[1][1] * g[2][2] - g[1][2] * g[2][1]) / det
    gi[0][1] = (g[0][2] * g[2][1] - g[0][1] * g[2][2]) / det
    gi[0][2] = (g[0][1] * g[1][2] - g[0][2] * g[1][1]) / det
    gi[1][0] = (g[1][2] * g[2][0] - g[1][0] * g[2][2]) / det
    gi[1][1] = (g[0][0] * g[2][2] - g[0][2] * g[2][0]) / det
    gi[1][2] = (g[0][2] * g[1][0] - g[0][0] * g[1][2]) / det
    gi[2][0] = (g[1][0] * g[2][1] - g[1][1] * g[2][0]) / det
    gi[2][1] = (g[0][1] * g[2][0] - g[0][0] * g[2][1]) / det
    gi[2][2] = (g[0][0] * g[1][1] - g[0][1] * g[1][0]) / det
    return det


def flow_rhs(const double[:, ::1] g, int dim, Py_ssize_t npts, double[::1] spacing,
             double[::1] coeffs, gam0=None, bint deturck=True):
    """Packed ``-2 Ric(g) [+ P_{g0}(g)]`` for node-major packed metric data.

    Parameters
    ----------
    g : (nodes, ncomp) float64
    coeffs : first-difference coefficients for offsets 1..r
    gam0 : optional (nodes, n, n, n) background Christoffel symbols
    """
    cdef Py_ssize_t nodes = g.shape[0]
    cdef int n = dim
    cdef int ncomp = n * (n + 1) // 2
    cdef int r = coeffs.shape[0]
    cdef Py_ssize_t strides[MAXD]
    cdef int pidx[MAXD][MAXD]
    cdef int a, i, j, k, l, m, p, q
    cdef Py_ssize_t node, nb_p, nb_m
    cdef Py_ssize_t coord[MAXD]
    cdef double gf[MAXD][MAXD]
    cdef double gi[MAXD][MAXD]
    cdef double dg[MAXD][MAXD][MAXD]
    cdef double low[MAXD][MAXD][MAXD]
    cdef double gl[MAXD][MAXD][MAXD]
    cdef double ric[MAXD][MAXD]
    cdef double dt[MAXD][MAXD]
    cdef double dw[MAXD][MAXD]
    cdef double acc, part, wup[MAXD]
    cdef bint have_bg = gam0 is not None
    cdef const double[:, :, :, ::1] g0v

    out_arr = np.empty((nodes, ncomp), dtype=np.float64)
    gam_arr = np.empty((nodes, n, n, n), dtype=np.float64)
    tr_arr = np.empty((nodes, n), dtype=np.float64)
    w_arr = np.zeros((nodes, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[:, :, :, ::1] gam = gam_arr
    cdef double[:, ::1] trv = tr_arr
    cdef double[:, ::1] w = w_arr
    if have_bg:
        g0v = gam0

    p = 0
    for i in range(n):
        for j in range(i, n):
            pidx[i][j] = p
            pidx[j][i] = p
            p += 1
    strides[n - 1] = 1
    for a in range(n - 2, -1, -1):
        strides[a] = strides[a + 1] * npts

    with nogil:
        # pass 1: Christoffel symbols, their trace, DeTurck one-form
        for node in range(nodes):
            _coords(node, n, npts, coord)
            for i in range(n):
                for j in range(n):
                    gf[i][j] = g[node, pidx[i][j]]
            for a in range(n):
                for i in range(n):
                    for j in range(i, n):
                        acc = 0.0
                        for k in range(r):
                            nb_p = _nbr(node, coord[a], k + 1, npts, strides[a])
                            nb_m = _nbr(node, coord[a], -(k + 1), npts, strides[a])
                            acc = acc + coeffs[k] * (g[nb_p, pidx[i][j]] - g[nb_m, pidx[i][j]])
                        dg[i][j][a] = acc / spacing[a]
                        dg[j][i][a] = dg[i][j][a]
            _invert(gf, gi, n)
            for l in range(n):
                for i in range(n):
                    for j in range(n):
                        low[l][i][j] = 0.5 * ((dg[j][l][i] + dg[i][l][j]) - dg[i][j][l])
            for k in range(n):
                for i in range(n):
                    for j in range(n):
                        acc = 0.0
                        for l in range(n):
                            acc = acc + gi[k][l] * low[l][i][j]
                        gl[k][i][j] = acc
                        gam[node, k, i, j] = acc
            for k in range(n):
                acc = 0.0
                for i in range(n):
                    acc = acc + gl[i][i][k]
                trv[node, k] = acc
            if deturck:
                for k in range(n):
                    acc = 0.0
                    for p in range(n):
                        for q in range(n):
                            if have_bg:
                                acc = acc + gi[p][q] * (gl[k][p][q] - g0v[node, k, p, q])
                            else:
                                acc = acc + gi[p][q] * gl[k][p][q]
                    wup[k] = acc
                for j in range(n):
                    acc = 0.0
                    for k in range(n):
                        acc = acc + gf[j][k] * wup[k]
                    w[node, j] = acc

        # pass 2: difference the pass-1 fields and assemble
        for node in range(nodes):
            _coords(node, n, npts, coord)
            # divergence of Gamma: ric_jk starts as d_i Gamma^i_jk
            for j in range(n):
                for k in range(j, n):
                    acc = 0.0
                    for i in range(n):
                        part = 0.0
                        for m in range(r):
                            nb_p = _nbr(node, coord[i], m + 1, npts, strides[i])
                            nb_m = _nbr(node, coord[i], -(m + 1), npts, strides[i])
                            part = part + coeffs[m] * (gam[nb_p, i, j, k] - gam[nb_m, i, j, k])
                        acc = acc + part / spacing[i]
                    ric[j][k] = acc
            for a in range(n):
                for k in range(n):
                    acc = 0.0
                    for m in range(r):
                        nb_p = _nbr(node, coord[a], m + 1, npts, strides[a])
                        nb_m = _nbr(node, coord[a], -(m + 1), npts, strides[a])
                        acc = acc + coeffs[m] * (trv[nb_p, k] - trv[nb_m, k])
                    dt[k][a] = acc / spacing[a]
                    if deturck:
                        acc = 0.0
                        for m in range(r):
                            nb_p = _nbr(node, coord[a], m + 1, npts, strides[a])
                            nb_m = _nbr(node, coord[a], -(m + 1), npts, strides[a])
                            acc = acc + coeffs[m] * (w[nb_p, k] - w[nb_m, k])
                        dw[k][a] = acc / spacing[a]
            for j in range(n):
                for k in range(j, n):
                    acc = ric[j][k] - 0.5 * (dt[k][j] + dt[j][k])
                    for m in range(n):
                        acc = acc + trv[node, m] * gam[node, m, j, k]
                    for i in range(n):
                        for m in range(n):
                            acc = acc - gam[node, i, j, m] * gam[node, m, i, k]
                    acc = -2.0 * acc
                    if deturck:
                        acc = acc + dw[k][j] + dw[j][k]
                        for m in range(n):
                            acc = acc - 2.0 * gam[node, m, j, k] * w[node, m]
                    out[node, pidx[j][k]] = acc
    return out_arr
