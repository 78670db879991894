"""Numba-compiled twins of the kernels in ``_kernels_numpy``.

Explicit loops over (node, mode); nopython with caching.  Each function has
the exact signature and semantics of its numpy counterpart so the backends
are interchangeable.
"""

import numba
import numpy as np

_jit = numba.njit(cache=True, fastmath=False)


@_jit
def forward_step(parent, smooth, fac_down, fac_up, out):
    n, J = parent.shape
    for p in range(n):
        for j in range(J):
            v = parent[p, j]
            out[2 * p, j] = smooth[j] * (fac_down * v)
            out[2 * p + 1, j] = smooth[j] * (fac_up * v)
    return out


@_jit
def backward_step(children, smooth, a_sqdt, z_out, d_out):
    n, J = z_out.shape
    for p in range(n):
        for j in range(J):
            up = children[2 * p + 1, j]
            down = children[2 * p, j]
            d = 0.5 * (up - down)
            m = 0.5 * (up + down)
            d_out[p, j] = d
            z_out[p, j] = smooth[j] * (m + a_sqdt * d)
    return z_out, d_out


@_jit
def quad_level(values, weight):
    n, J = values.shape
    acc = 0.0
    for p in range(n):
        for j in range(J):
            row = 0.0
            for l in range(J):
                row += weight[j, l] * values[p, l]
            acc += values[p, j] * row
    return acc


@_jit
def apply_weight(values, weight, out):
    n, J = values.shape
    for p in range(n):
        for j in range(J):
            acc = 0.0
            for l in range(J):
                acc += values[p, l] * weight[l, j]
            out[p, j] = acc
    return out
