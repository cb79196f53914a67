"""Pure numpy versions of the stencil kernels.

Same signatures and results as the compiled ``_kernels`` module. Boundary
rows (first and last y index) of ``out`` are left at zero; the caller
closes them by extrapolation.
"""

import numpy as np


def _theta_derivs(u, h_th):
    if u.shape[1] == 1:
        z = np.zeros_like(u)
        return z, z
    up = np.roll(u, -1, axis=1)
    um = np.roll(u, 1, axis=1)
    return (up - um) / (2.0 * h_th), (up - 2.0 * u + um) / (h_th * h_th)


def graph_rhs(u, y, h_y, h_th, rescaled, out):
    """Radial velocity of the graph r = u(y, theta) under (rescaled) MCF."""
    u = np.asarray(u, dtype=float)
    out[...] = 0.0
    c = u[1:-1]
    u_y = (u[2:] - u[:-2]) / (2.0 * h_y)
    u_yy = (u[2:] - 2.0 * c + u[:-2]) / (h_y * h_y)
    u_t, u_tt = _theta_derivs(u, h_th)
    u_t = u_t[1:-1]
    u_tt = u_tt[1:-1]
    if u.shape[1] > 1:
        dn = np.roll(u[2:], -1, axis=1) - np.roll(u[2:], 1, axis=1)
        ds = np.roll(u[:-2], -1, axis=1) - np.roll(u[:-2], 1, axis=1)
        u_yt = (dn - ds) / (4.0 * h_y * h_th)
    else:
        u_yt = np.zeros_like(c)
    inv_u = 1.0 / c
    q = u_t * inv_u
    p2 = u_y * u_y
    qq = 1.0 + p2 + q * q
    num = (-(1.0 + q * q) * u_yy
           + 2.0 * u_y * u_t * u_yt * inv_u * inv_u
           - (1.0 + p2) * u_tt * inv_u * inv_u
           + u_t * u_t * inv_u * inv_u * inv_u)
    qh = num / qq + inv_u
    rate = -qh
    if rescaled:
        rate = rate + 0.5 * (c - y[1:-1, None] * u_y)
    out[1:-1] = rate
    return out


def lc_apply(v, y, h_y, h_th, out):
    """Apply the drift operator  v_yy + v_thth / 2 - y v_y / 2 + v."""
    v = np.asarray(v, dtype=float)
    out[...] = 0.0
    c = v[1:-1]
    v_y = (v[2:] - v[:-2]) / (2.0 * h_y)
    v_yy = (v[2:] - 2.0 * c + v[:-2]) / (h_y * h_y)
    _, v_tt = _theta_derivs(v, h_th)
    out[1:-1] = v_yy + 0.5 * v_tt[1:-1] - 0.5 * y[1:-1, None] * v_y + c
    return out
