"""Controlled forward dynamics and the backward adjoint pair on the tree.

One step of the forward system (modal coefficients, drift-implicit in the
stiff Laplacian term, noise factor inside the solve, control injected at
the step's right endpoint):

    y_{k+1} = S (1 + a_k dW_k) y_k + dt * f_{k+1},      S = (I + dt Lam)^{-1},

where f is the modal injection (B u for a plain control field u).  The
backward dynamics are DEFINED as the exact transpose of this map:

    d_k = (z up - z down)/2,   Z_k = d_k / sqrt(dt),
    z_k = S (m_k + a_k sqrt(dt) d_k),   m_k = pair mean,

which is simultaneously the standard drift-implicit scheme for the adjoint
backward equation dz = -Az dt - a Z dt + Z dw.  Transposition buys the
discrete duality identity

    E(y_K, eta) = (y_0, z_0) + sum_{k=1..K} dt E(f_k, z_k)

to machine precision for every control, noise path and terminal datum, so
all first-order optimality machinery downstream is exact in the discrete
model and solver error is the only error left.

Injections pair with z at the step's right endpoint: the control value
over (t_k, t_{k+1}] lives on level k+1 nodes (F_{t_{k+1}}-measurable, the
right-point rule for the dt-integral of an adapted integrand).  This keeps
the control Gramian positive definite on the whole terminal space and the
discrete system exactly null controllable even with nonzero noise.
"""

from dataclasses import dataclass

import numpy as np

from .backend import kernels
from .density import ActuatorDensity, MultiplierMatrix, multiplier_matrix
from .errors import InvalidConfigError
from .spectral import SpectralBasis
from .tree import AdaptedField, FiltrationTree, NoiseCoefficient, TerminalData


def smoothing_diag(tree: FiltrationTree, basis: SpectralBasis) -> np.ndarray:
    """Per-mode implicit-Euler factor 1/(1 + dt*lambda_j)."""
    return 1.0 / (1.0 + tree.dt * basis.eigenvalues)


@dataclass(frozen=True)
class ForwardTrajectory:
    y: AdaptedField

    @property
    def terminal(self):
        return self.y.levels[-1]


@dataclass(frozen=True)
class AdjointTrajectory:
    z: AdaptedField
    Zproc: AdaptedField
    terminal: TerminalData


def forward_sweep(tree, basis, y0, noise, injections=None, collapsed=None):
    """Run the forward recursion; returns the list of level arrays.

    ``injections`` holds the modal forcing added as dt*f at levels 1..K
    (index 0 unused).  Collapsed (deterministic) storage is used when the
    noise vanishes and no full-layout injection forces node resolution.
    """
    k_mod = kernels()
    a = noise.for_tree(tree)
    J = basis.count
    y0 = np.asarray(y0, dtype=float).reshape(J)
    S = smoothing_diag(tree, basis)
    sq = np.sqrt(tree.dt)
    if collapsed is None:
        collapsed = noise.is_zero and (
            injections is None or all(f is None or f.shape[0] == 1 for f in injections)
        )
    if collapsed and not noise.is_zero:
        raise InvalidConfigError("collapsed forward sweep requires zero noise")
    if not collapsed:
        tree.check_materializable()
    levels = [y0[None, :].copy()]
    for k in range(tree.steps):
        parent = levels[k]
        if collapsed:
            child = S * parent
        else:
            n = parent.shape[0]
            if n == 1:
                parent = np.broadcast_to(parent, (tree.level_size(k), J))
                n = parent.shape[0]
            child = np.empty((2 * n, J))
            k_mod.forward_step(
                np.ascontiguousarray(parent), S, 1.0 - a[k] * sq, 1.0 + a[k] * sq, child
            )
        if injections is not None and injections[k + 1] is not None:
            f = injections[k + 1]
            child = child + tree.dt * (f if f.shape == child.shape else np.broadcast_to(f, child.shape))
        levels.append(child)
    return levels


def backward_sweep(tree, basis, eta_values, noise, corruption=1.0):
    """Run the adjoint recursion from terminal values; returns (z, d) levels.

    Deterministic terminal data keeps the whole adjoint deterministic (the
    sibling difference vanishes, so the martingale part is zero for any
    noise), and collapsed storage is used then.  ``corruption`` rescales every
    backward step; it exists only as a fault-injection hook for the
    negative-control verification suite, 1.0 is the scheme.
    """
    k_mod = kernels()
    a = noise.for_tree(tree)
    eta_values = np.atleast_2d(np.asarray(eta_values, dtype=float))
    J = basis.count
    S = smoothing_diag(tree, basis)
    sq = np.sqrt(tree.dt)
    collapsed = eta_values.shape[0] == 1
    if not collapsed and eta_values.shape[0] != tree.n_leaves:
        raise InvalidConfigError(
            f"terminal values have {eta_values.shape[0]} rows, tree has {tree.n_leaves} leaves"
        )
    if not collapsed:
        tree.check_materializable()
    z_levels = [None] * (tree.steps + 1)
    d_levels = [None] * tree.steps
    z_levels[tree.steps] = eta_values.copy()
    for k in range(tree.steps - 1, -1, -1):
        child = z_levels[k + 1]
        if collapsed:
            z = S * child
            d = np.zeros_like(child)
        else:
            n = child.shape[0] // 2
            z = np.empty((n, J))
            d = np.empty((n, J))
            k_mod.backward_step(np.ascontiguousarray(child), S, a[k] * sq, z, d)
        if corruption != 1.0:
            z = corruption * z
        z_levels[k] = z
        d_levels[k] = d
    return z_levels, d_levels


def forward_solve(
    y0,
    control,
    density: ActuatorDensity,
    a: NoiseCoefficient,
    tree: FiltrationTree,
    basis: SpectralBasis,
) -> ForwardTrajectory:
    """Solve the controlled forward system with modal control field u.

    The control enters through the multiplier matrix, f = B u; the level-0
    entry of the control field is ignored (controls live on steps).
    """
    injections = None
    if control is not None:
        if control.n_modes != basis.count:
            raise InvalidConfigError("control field and basis disagree on mode count")
        if control.depth != tree.steps:
            raise InvalidConfigError("control field depth must equal the step count")
        B = multiplier_matrix(density, basis).entries
        injections = [None] + [control.levels[k] @ B for k in range(1, tree.steps + 1)]
    levels = forward_sweep(tree, basis, y0, a, injections)
    return ForwardTrajectory(AdaptedField(tree, levels))


def adjoint_solve(
    eta: TerminalData,
    a: NoiseCoefficient,
    tree: FiltrationTree,
    basis: SpectralBasis,
    corruption=1.0,
) -> AdjointTrajectory:
    """Solve the backward adjoint pair (z, Z) from terminal data eta."""
    if eta.n_modes != basis.count:
        raise InvalidConfigError("terminal data and basis disagree on mode count")
    z_levels, d_levels = backward_sweep(tree, basis, eta.values, a, corruption=corruption)
    z = AdaptedField(tree, z_levels)
    Z = AdaptedField(tree, [d / np.sqrt(tree.dt) for d in d_levels])
    return AdjointTrajectory(z, Z, eta)


def _level_pairing(u, v, k):
    """E(u_k, v_k) at level k; broadcasts collapsed against full storage."""
    n = max(u.shape[0], v.shape[0])
    if n == 1:
        return float(np.sum(u * v))
    u = np.broadcast_to(u, (n, u.shape[1]))
    v = np.broadcast_to(v, (n, v.shape[1]))
    return float(np.sum(u * v)) / n


def duality_terms(y0, control, density, a, eta, tree, basis, corruption=1.0):
    """The three members of the duality identity.

    Returns (pairing, initial, terminal) where
      pairing  = sum_k dt E(u_k, B z_k),
      initial  = (y_0, z(0)),
      terminal = E(y_K, eta).
    """
    adj = adjoint_solve(eta, a, tree, basis, corruption=corruption)
    fwd = forward_solve(y0, control, density, a, tree, basis)
    B = multiplier_matrix(density, basis).entries
    pairing = 0.0
    for k in range(1, tree.steps + 1):
        pairing += tree.dt * _level_pairing(control.levels[k] @ B, adj.z.levels[k], k)
    y0 = np.asarray(y0, dtype=float).reshape(basis.count)
    initial = float(y0 @ adj.z.levels[0][0])
    terminal = _level_pairing(fwd.terminal, eta.values, tree.steps)
    return pairing, initial, terminal


def duality_identity(y0, control, density, a, eta, tree, basis, corruption=1.0):
    """Absolute gap |pairing + initial - terminal| of the duality identity.

    By the transpose construction this is round-off for the uncorrupted
    scheme; acceptance asserts <= 1e-10 relative to the term magnitudes.
    """
    pairing, initial, terminal = duality_terms(
        y0, control, density, a, eta, tree, basis, corruption=corruption
    )
    return abs(pairing + initial - terminal)


def brownian_lattice_adjoint(tree: FiltrationTree, lam, a: NoiseCoefficient, scale=1.0):
    """Adjoint of terminal data scale*W_T on one mode, on the value lattice.

    Terminal data measurable with respect to W_T alone keeps every level of
    the backward recursion a function of (level, W_{t_k}): sibling pairs in
    the path tree map to adjacent lattice states, so the k+1 distinct values
    per level reproduce the per-node tree values exactly while staying
    affordable at step counts far beyond the materializable tree depth.

    Returns a list over levels k of arrays indexed by the up-move count u,
    with W_{t_k} = (2u - k) sqrt(dt).
    """
    a_vals = a.for_tree(tree)
    dt = tree.dt
    S = 1.0 / (1.0 + dt * lam)
    sq = np.sqrt(dt)
    levels = [None] * (tree.steps + 1)
    K = tree.steps
    levels[K] = scale * sq * (2.0 * np.arange(K + 1) - K)
    for k in range(K - 1, -1, -1):
        child = levels[k + 1]
        up, down = child[1:], child[:-1]
        m = 0.5 * (up + down)
        d = 0.5 * (up - down)
        levels[k] = S * (m + a_vals[k] * sq * d)
    return levels


def expectation_weight(level_values, k):
    return 1.0 if level_values.shape[0] == 1 else 2.0 ** (-k)


def window_quadratic(z_levels, weight, tree, step_mask):
    """sum_k chi_E(t_{k-1}) dt E z_k^T W z_k over levels 1..K."""
    k_mod = kernels()
    W = np.ascontiguousarray(weight)
    total = 0.0
    for lev in range(1, tree.steps + 1):
        if not step_mask[lev - 1]:
            continue
        v = z_levels[lev]
        total += tree.dt * expectation_weight(v, lev) * k_mod.quad_level(
            np.ascontiguousarray(v), W
        )
    return total


def level_energies(z_levels, weight, tree):
    """Per-level expected W-energy E z_k^T W z_k, k = 0..K."""
    k_mod = kernels()
    W = np.ascontiguousarray(weight)
    return np.array(
        [
            expectation_weight(z_levels[k], k)
            * k_mod.quad_level(np.ascontiguousarray(z_levels[k]), W)
            for k in range(len(z_levels))
        ]
    )
