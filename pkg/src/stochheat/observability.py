"""Computable analogues of the decay, interpolation and observability bounds.

Every estimator returns a measured constant for the discrete model rather
than certifying the continuum constants, which the underlying theory only
proves to exist:

* decay margin - the high-frequency adjoint energy against the scheme-exact
  transcription of the exponential decay bound (implicit-Euler contraction
  per step, discrete noise growth product);
* interpolation constant - smallest K with
  E||z(t)||^2 <= K exp(K/(T-t)) (E||z(t)||_G^2)^{1/2} (E||eta||^2)^{1/2};
* the sharp L2-in-time constant - largest generalized eigenvalue of the
  time-zero energy against the windowed observation form;
* a lower estimate of the L1-in-time constant - multi-start projected
  ascent of a scale-invariant, non-concave ratio (reported as a lower
  bound, never as sharp);
* the telescoping time sequence and the level-set measure bound used by
  the relaxed-observability argument, instantiated exactly.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .density import ActuatorDensity, theta_weight
from .dynamics import backward_sweep, forward_sweep, level_energies, window_quadratic
from .errors import (
    DegenerateObservationError,
    InvalidConfigError,
    InvalidDensityError,
)
from .hum import GramOperator, conjugate_gradient
from .spectral import Region, SpectralBasis, gram, spectral_project
from .tree import FiltrationTree, NoiseCoefficient, TerminalData, TimeWindow


@dataclass
class ObservabilityReport:
    """Measured constants for one configuration."""

    c_l2: float
    c_l1_lower: float
    k_interp: float
    decay_violations: int
    metadata: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "c_l2": self.c_l2,
            "c_l1_lower": self.c_l1_lower,
            "k_interp": self.k_interp,
            "decay_violations": self.decay_violations,
            "metadata": dict(self.metadata),
        }


def _terminal_energy(values, n_leaves):
    prob = 1.0 if values.shape[0] == 1 else 1.0 / n_leaves
    return prob * float(np.sum(values**2))


def check_decay(eta: TerminalData, lam_cutoff, a, tree, basis) -> float:
    """Margin of the high-frequency decay bound, min over grid times < T.

    The continuum bound exp((-2 lam + tau)(T-t)) is transcribed with the
    quantities the scheme actually realizes: the implicit-Euler contraction
    (1 + dt*lam)^{-2} per step and the exact per-step noise growth factor
    (1 + a_k^2 dt).  The transcription converges to the continuum bound as
    dt -> 0 and is provably respected by the scheme at every dt, which the
    continuum rate is not for stiff modes.
    """
    if lam_cutoff < 0:
        raise InvalidConfigError("cutoff must be nonnegative")
    _, high = spectral_project(eta.values, basis, lam_cutoff)
    z_levels, _ = backward_sweep(tree, basis, high, a)
    energies = level_energies(z_levels, np.eye(basis.count), tree)
    eta_energy = _terminal_energy(eta.values, tree.n_leaves)
    a_vals = a.for_tree(tree)
    contraction = (1.0 + tree.dt * lam_cutoff) ** -2
    growth = 1.0 + a_vals**2 * tree.dt
    margin = np.inf
    bound = eta_energy
    factors = np.ones(tree.steps + 1)
    for k in range(tree.steps - 1, -1, -1):
        factors[k] = factors[k + 1] * contraction * growth[k]
    for k in range(tree.steps):
        margin = min(margin, factors[k] * eta_energy - energies[k])
    return float(margin)


def check_interpolation(eta: TerminalData, region: Region, t_index, a, tree, basis) -> float:
    """Smallest constant K with the three-term interpolation bound at t_index."""
    if not 0 <= t_index < tree.steps:
        raise InvalidConfigError(
            f"t_index must lie strictly before the horizon (0..{tree.steps - 1})"
        )
    z_levels, _ = backward_sweep(tree, basis, eta.values, a)
    W = gram(basis, region).entries
    full_energy = level_energies(z_levels, np.eye(basis.count), tree)[t_index]
    region_energy = level_energies(z_levels, W, tree)[t_index]
    eta_energy = _terminal_energy(eta.values, tree.n_leaves)
    if full_energy == 0.0:
        return 0.0
    rhs_factor = np.sqrt(max(region_energy, 0.0)) * np.sqrt(eta_energy)
    if rhs_factor == 0.0:
        raise DegenerateObservationError(
            "region energy vanishes while the state does not; "
            "region is blind to the solution at this resolution"
        )
    target = full_energy / rhs_factor
    gap = tree.horizon - tree.times()[t_index]
    # Solve x * exp(x/gap) = target; the left side is strictly increasing.
    hi = 1.0
    while hi * np.exp(hi / gap) < target:
        hi *= 2.0
        if hi > 1e12:
            raise InvalidConfigError("interpolation constant diverged")
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid * np.exp(mid / gap) < target:
            lo = mid
        else:
            hi = mid
    return float(hi)


def _observation_operator(weight_source, window, a, tree, basis):
    if isinstance(weight_source, ActuatorDensity):
        W = theta_weight(weight_source, basis)
        density = weight_source
    elif isinstance(weight_source, Region):
        W = gram(basis, weight_source).entries
        density = None
    else:
        W = np.asarray(weight_source, dtype=float)
        density = None
    return GramOperator(W, window, a, tree, basis, density=density)


def l2_observability_constant(
    weight_source,
    window: TimeWindow,
    a: NoiseCoefficient,
    tree: FiltrationTree,
    basis: SpectralBasis,
    tol=1e-10,
    method="auto",
    dense_limit=600,
    max_iter=20000,
):
    """Sharp discrete constant sup ||z(0)||^2 / sum chi dt E ||z||_W^2.

    ``weight_source`` is an ActuatorDensity (relaxed form), a Region
    (indicator form) or a raw weight matrix.  Power iteration on the
    generalized pencil with CG inner solves; dense generalized
    eigendecomposition when the terminal space is small.
    """
    op = _observation_operator(weight_source, window, a, tree, basis)
    if method == "dense" or (method == "auto" and op.dim <= dense_limit):
        # Numerator ||z(0; f)||^2 = f^T S0^T S0 f is coordinate-plain, the
        # denominator matrix from dense_matrix already carries the leaf
        # probabilities, so the pencil is consistent as assembled.
        A = op.dense_matrix()
        S0 = _root_map_matrix(op)
        N = S0.T @ S0
        try:
            vals = scipy.linalg.eigh(N, A, eigvals_only=True)
        except scipy.linalg.LinAlgError as exc:
            deficiency = int(np.sum(np.linalg.eigvalsh(A) <= 1e-14 * np.abs(A).max()))
            raise DegenerateObservationError(
                f"observation form singular: {exc}", deficiency=deficiency
            ) from exc
        return float(vals[-1])
    rng = np.random.default_rng(91)
    x = rng.standard_normal((op.n_rows, basis.count))
    rho_prev = None
    for _ in range(200):
        num_image = op.load(op.root_value(x))
        y, _, _, ok = conjugate_gradient(
            op.apply, num_image, op.ht_dot, tol=min(tol, 1e-12), max_iter=max_iter
        )
        if not ok:
            raise DegenerateObservationError(
                "CG failed inside the power iteration; observation form "
                "is singular or extremely ill conditioned"
            )
        nrm = op.ht_norm(y)
        if nrm == 0.0:
            raise DegenerateObservationError("power iteration collapsed to zero")
        x = y / nrm
        root = op.root_value(x)
        rho = float(root @ root) / op.quad(x)
        if rho_prev is not None and abs(rho - rho_prev) <= tol * max(rho, 1e-300):
            return rho
        rho_prev = rho
    return rho_prev


def _root_map_matrix(op: GramOperator):
    """Matrix of eta -> z(0; eta) on flat coordinates, shape (J, dim)."""
    from .hum import _batched_backward

    J = op.basis.count
    basis_cols = np.eye(op.dim).reshape(op.n_rows, J, op.dim)
    z = _batched_backward(op.tree, op.basis, op.noise, basis_cols, op.collapsed)
    return z[0][0]


def l1_observability_constant(
    region_source,
    window: TimeWindow,
    a: NoiseCoefficient,
    tree: FiltrationTree,
    basis: SpectralBasis,
    restarts=8,
    seed=0,
    ascent_steps=60,
    samples=64,
):
    """Lower estimate of the L1-in-time observability constant.

    Maximizes the 0-homogeneous ratio

        R(eta) = ||z(0)||^2 / ( sum_k chi_E dt (E ||z_k||_G^2)^{1/2} )^2

    over the unit sphere by random sampling plus projected-gradient ascent
    from multiple starts.  The ratio is not concave, so the result is an
    honest lower bound on the sharp constant, nothing more.
    """
    op = _observation_operator(region_source, window, a, tree, basis)
    rng = np.random.default_rng(seed)
    dt = tree.dt
    weights = np.array(
        [dt if op.mask[lev - 1] else 0.0 for lev in range(1, tree.steps + 1)]
    )

    def ratio_and_grad(x, want_grad=True):
        z_levels = op.adjoint_levels(x)
        root = z_levels[0][0]
        n_val = float(root @ root)
        q = level_energies(z_levels, op.weight, tree)[1:]
        sq = np.sqrt(np.maximum(q, 0.0))
        D = float(weights @ sq)
        if D <= 0.0:
            return None, None
        R = n_val / D**2
        if not want_grad:
            return R, None
        grad_n = 2.0 * op.load(root)
        inj = [None] * (tree.steps + 1)
        for lev in range(1, tree.steps + 1):
            w = weights[lev - 1]
            if w > 0.0 and sq[lev - 1] > 1e-300:
                inj[lev] = (w / sq[lev - 1]) * (z_levels[lev] @ op.weight)
        grad_D = forward_sweep(
            tree, basis, np.zeros(basis.count), a, inj, collapsed=op.collapsed
        )[-1]
        grad = grad_n / D**2 - (2.0 * n_val / D**3) * grad_D
        return R, grad

    def ascend(x0):
        x = x0 / op.ht_norm(x0)
        R, grad = ratio_and_grad(x)
        if R is None:
            return None
        step = 0.5
        for _ in range(ascent_steps):
            tangent = grad - op.ht_dot(grad, x) * x
            t_norm = op.ht_norm(tangent)
            if t_norm <= 1e-14 * max(1.0, abs(R)):
                break
            improved = False
            while step > 1e-12:
                cand = x + step * tangent / t_norm
                cand /= op.ht_norm(cand)
                R_new, grad_new = ratio_and_grad(cand)
                if R_new is not None and R_new > R:
                    x, R, grad = cand, R_new, grad_new
                    step *= 1.5
                    improved = True
                    break
                step *= 0.5
            if not improved:
                break
        return R

    best = None
    discarded = 0
    for _ in range(samples):
        x = rng.standard_normal((op.n_rows, basis.count))
        R, _ = ratio_and_grad(x, want_grad=False)
        if R is None:
            discarded += 1
            continue
        best = R if best is None else max(best, R)
    for _ in range(restarts):
        x0 = rng.standard_normal((op.n_rows, basis.count))
        R = ascend(x0)
        if R is None:
            discarded += 1
            continue
        best = R if best is None else max(best, R)
    if best is None:
        raise DegenerateObservationError(
            f"all {discarded} candidates had vanishing observation"
        )
    return float(best)


@dataclass(frozen=True)
class TelescopingSequence:
    """Geometric time slicing used to absorb the iteration constants.

    ell decreases strictly to the anchor; consecutive gaps contract by the
    exact ratio q = (C + 1/2)/(C + 1); tau_m sits inside (ell_{m+1}, ell_m)
    one sixth of the gap above its lower end.
    """

    anchor: float
    start: float
    ratio: float
    ell: np.ndarray
    tau: np.ndarray

    @property
    def gaps(self):
        return self.ell[:-1] - self.ell[1:]


def build_telescoping(anchor, start, proof_constant, length=24) -> TelescopingSequence:
    if not anchor < start:
        raise InvalidConfigError(
            f"telescoping anchor {anchor} must lie strictly below the start {start}"
        )
    if proof_constant <= 0:
        raise InvalidConfigError("proof constant must be positive")
    q = (proof_constant + 0.5) / (proof_constant + 1.0)
    m = np.arange(length + 1)
    ell = anchor + (start - anchor) * q**m
    gaps = ell[:-1] - ell[1:]
    tau = ell[1:] + gaps / 6.0
    return TelescopingSequence(float(anchor), float(start), float(q), ell, tau)


def level_set_bound(density: ActuatorDensity, alpha) -> tuple:
    """Instantiate the level-set measure bound for beta = sqrt(theta).

    Returns (measure of {beta >= sqrt(alpha/2)}, alpha|D|/(2-alpha), ok).
    """
    if abs(alpha - density.alpha) > 1e-12:
        raise InvalidDensityError(
            f"density budget {density.alpha} does not match requested alpha {alpha}"
        )
    beta = density.beta
    threshold = np.sqrt(alpha / 2.0)
    measure = float(density.grid.volumes[beta >= threshold - 1e-15].sum())
    bound = alpha * density.grid.domain.volume / (2.0 - alpha)
    return measure, bound, measure >= bound - 1e-12


def decay_violation_count(
    samples, lam_max, a, tree, basis, seed=0, scale_tol=1e-12
):
    """Count negative decay margins over random (eta, lambda) draws."""
    rng = np.random.default_rng(seed)
    violations = 0
    for _ in range(samples):
        values = rng.standard_normal((tree.n_leaves if not a.is_zero else 1, basis.count))
        eta = TerminalData(tree, values)
        lam = rng.uniform(0.0, lam_max)
        eta_energy = _terminal_energy(eta.values, tree.n_leaves)
        if check_decay(eta, lam, a, tree, basis) < -scale_tol * max(1.0, eta_energy):
            violations += 1
    return violations
