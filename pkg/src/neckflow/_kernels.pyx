# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled stencil kernels for the radial-graph flow and the drift operator.

Mirrors ``_kernels_py``; boundary rows of ``out`` are zeroed.
"""

import numpy as np


def graph_rhs(double[:, ::1] u, double[::1] y, double h_y, double h_th,
              bint rescaled, double[:, ::1] out):
    cdef Py_ssize_t ny = u.shape[0]
    cdef Py_ssize_t nt = u.shape[1]
    cdef Py_ssize_t i, j, jp, jm
    cdef double c, u_y, u_yy, u_t, u_tt, u_yt, inv_u, q, p2, qq, num, rate
    cdef double iy2 = 1.0 / (2.0 * h_y)
    cdef double iyy = 1.0 / (h_y * h_y)
    cdef double it2 = 0.0, itt = 0.0, iyt = 0.0
    if nt > 1:
        it2 = 1.0 / (2.0 * h_th)
        itt = 1.0 / (h_th * h_th)
        iyt = 1.0 / (4.0 * h_y * h_th)
    for j in range(nt):
        out[0, j] = 0.0
        out[ny - 1, j] = 0.0
    for i in range(1, ny - 1):
        for j in range(nt):
            c = u[i, j]
            u_y = (u[i + 1, j] - u[i - 1, j]) * iy2
            u_yy = (u[i + 1, j] - 2.0 * c + u[i - 1, j]) * iyy
            if nt > 1:
                jp = j + 1 if j + 1 < nt else 0
                jm = j - 1 if j > 0 else nt - 1
                u_t = (u[i, jp] - u[i, jm]) * it2
                u_tt = (u[i, jp] - 2.0 * c + u[i, jm]) * itt
                u_yt = (u[i + 1, jp] - u[i + 1, jm]
                        - u[i - 1, jp] + u[i - 1, jm]) * iyt
            else:
                u_t = 0.0
                u_tt = 0.0
                u_yt = 0.0
            inv_u = 1.0 / c
            q = u_t * inv_u
            p2 = u_y * u_y
            qq = 1.0 + p2 + q * q
            num = (-(1.0 + q * q) * u_yy
                   + 2.0 * u_y * u_t * u_yt * inv_u * inv_u
                   - (1.0 + p2) * u_tt * inv_u * inv_u
                   + u_t * u_t * inv_u * inv_u * inv_u)
            rate = -(num / qq + inv_u)
            if rescaled:
                rate += 0.5 * (c - y[i] * u_y)
            out[i, j] = rate
    return np.asarray(out)


def lc_apply(double[:, ::1] v, double[::1] y, double h_y, double h_th,
             double[:, ::1] out):
    cdef Py_ssize_t ny = v.shape[0]
    cdef Py_ssize_t nt = v.shape[1]
    cdef Py_ssize_t i, j, jp, jm
    cdef double c, v_tt
    cdef double iy2 = 1.0 / (2.0 * h_y)
    cdef double iyy = 1.0 / (h_y * h_y)
    cdef double itt = 0.0
    if nt > 1:
        itt = 1.0 / (h_th * h_th)
    for j in range(nt):
        out[0, j] = 0.0
        out[ny - 1, j] = 0.0
    for i in range(1, ny - 1):
        for j in range(nt):
            c = v[i, j]
            if nt > 1:
                jp = j + 1 if j + 1 < nt else 0
                jm = j - 1 if j > 0 else nt - 1
                v_tt = (v[i, jp] - 2.0 * c + v[i, jm]) * itt
            else:
                v_tt = 0.0
            out[i, j] = ((v[i + 1, j] - 2.0 * c + v[i - 1, j]) * iyy
                         + 0.5 * v_tt
                         - 0.5 * y[i] * (v[i + 1, j] - v[i - 1, j]) * iy2
                         + c)
    return np.asarray(out)
