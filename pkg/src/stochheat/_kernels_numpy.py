"""Pure-numpy implementations of the per-level tree kernels.

These are the hot inner loops of every solver: one forward branching step,
one backward (conditional expectation / martingale split) step, and the
weighted quadratic form accumulated over the nodes of a level.  The numba
twin in ``_kernels_numba`` computes the same quantities; either backend may
be selected through ``STOCHHEAT_BACKEND``.
"""

import numpy as np


def forward_step(parent, smooth, fac_down, fac_up, out):
    """Branch one tree level forward through the drift-implicit solve.

    out[2p]   = smooth * (fac_down * parent[p])
    out[2p+1] = smooth * (fac_up   * parent[p])
    """
    out[0::2] = smooth * (fac_down * parent)
    out[1::2] = smooth * (fac_up * parent)
    return out


def backward_step(children, smooth, a_sqdt, z_out, d_out):
    """Combine sibling pairs one level backward.

    d is the half-difference of the siblings (martingale part, Z = d/sqrt(dt));
    z = smooth * (m + a*sqrt(dt)*d) with m the pair mean.
    """
    up = children[1::2]
    down = children[0::2]
    np.subtract(up, down, out=d_out)
    d_out *= 0.5
    np.add(up, down, out=z_out)
    z_out *= 0.5
    if a_sqdt != 0.0:
        z_out += a_sqdt * d_out
    z_out *= smooth
    return z_out, d_out


def quad_level(values, weight):
    """Sum of v^T W v over the rows of ``values`` (un-normalized)."""
    return float(np.einsum("pj,jl,pl->", values, weight, values))


def apply_weight(values, weight, out):
    """Row-wise v -> W v for a symmetric weight matrix."""
    np.matmul(values, weight, out=out)
    return out
