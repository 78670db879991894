"""Minimal-norm null control by the variational (observability-Gram) route.

The control Gramian acts on terminal data eta by

    G eta = terminal state of the forward system driven by the
            window-masked, weight-applied adjoint trajectory of eta,

so <G eta, eta'> = sum_k chi_E dt E (W z_k(eta), z_k(eta')) exactly, by the
transpose construction of the dynamics.  With W the theta-weighted modal
Gram, minimizing

    1/2 <G eta, eta> + <r, eta>,       <r, eta> = (y_0, z(0; eta)),

over terminal data gives the optimal adjoint state phi* = z(.; eta*) and
the minimal-norm control u* = beta phi*.  The control is kept in this
potential form: its L2 cost integrates the true product beta*phi exactly
through the cell Grams (the modal projection B phi* is also provided for
export, but its plain norm undercounts the product at finite mode count).
The load vector r equals the uncontrolled terminal state, again by duality.

Because injections pair with the adjoint at step right endpoints, G is
positive definite whenever the weight matrix is, the discrete system is
exactly null controllable for every noise coefficient, and eps = 0 direct
solves drive the terminal state to round-off.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .density import ActuatorDensity, multiplier_matrix, theta_weight
from .dynamics import (
    backward_sweep,
    forward_sweep,
    level_energies,
    window_quadratic,
)
from .errors import (
    DegenerateObservationError,
    InternalConsistencyError,
    InvalidConfigError,
    IterationLimitError,
)
from .spectral import SpectralBasis
from .tree import (
    AdaptedField,
    FiltrationTree,
    NoiseCoefficient,
    TerminalData,
    TimeWindow,
)


def conjugate_gradient(apply_op, rhs, dot, x0=None, tol=1e-10, max_iter=5000):
    """Plain CG for a self-adjoint positive (semi)definite operator.

    Returns (x, iterations, residual_history, converged); residuals are
    relative to ||rhs||.
    """
    rhs_norm = np.sqrt(dot(rhs, rhs))
    if rhs_norm == 0.0:
        return np.zeros_like(rhs), 0, [0.0], True
    x = np.zeros_like(rhs) if x0 is None else x0.copy()
    r = rhs - apply_op(x)
    p = r.copy()
    rs = dot(r, r)
    history = [np.sqrt(rs) / rhs_norm]
    for it in range(1, max_iter + 1):
        Ap = apply_op(p)
        denom = dot(p, Ap)
        if denom <= 0.0:
            # Numerical loss of positivity; stop with the current iterate.
            return x, it, history, history[-1] <= tol
        alpha = rs / denom
        x += alpha * p
        r -= alpha * Ap
        rs_new = dot(r, r)
        history.append(np.sqrt(rs_new) / rhs_norm)
        if history[-1] <= tol:
            return x, it, history, True
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x, max_iter, history, False


class GramOperator:
    """Window-weighted observation Gramian on the terminal-data space.

    weight is any symmetric PSD modal matrix; the HUM assembly uses the
    theta-weighted Gram of an actuator density, the observability module
    reuses the same operator with a region Gram.
    """

    def __init__(self, weight, window, noise, tree, basis, density=None, certify=True):
        self.weight = 0.5 * (np.asarray(weight, float) + np.asarray(weight, float).T)
        self.window = window
        self.noise = noise
        self.tree = tree
        self.basis = basis
        self.density = density
        self.mask = window.step_mask(tree)
        if not self.mask.any():
            raise DegenerateObservationError(
                "time window contains no step left endpoint; observation form vanishes"
            )
        self.collapsed = noise.is_zero
        if not self.collapsed:
            tree.check_materializable()
        eig = np.linalg.eigvalsh(self.weight)
        self.weight_eig_min = float(eig[0])
        self.positive_definite = self.weight_eig_min > 1e-13 * max(1.0, float(eig[-1]))
        if certify:
            self._certify()

    # -- layout ---------------------------------------------------------
    @property
    def n_rows(self):
        return 1 if self.collapsed else self.tree.n_leaves

    @property
    def dim(self):
        return self.n_rows * self.basis.count

    @property
    def ht_weight(self):
        """Uniform leaf probability turning flat dots into expectations."""
        return 1.0 if self.collapsed else 1.0 / self.tree.n_leaves

    def ht_dot(self, u, v):
        return self.ht_weight * float(np.sum(u * v))

    def ht_norm(self, u):
        return np.sqrt(self.ht_dot(u, u))

    def zero_values(self):
        return np.zeros((self.n_rows, self.basis.count))

    # -- operator actions -------------------------------------------------
    def adjoint_levels(self, eta_values):
        z_levels, _ = backward_sweep(self.tree, self.basis, eta_values, self.noise)
        return z_levels

    def _injections(self, z_levels):
        inj = [None] * (self.tree.steps + 1)
        for lev in range(1, self.tree.steps + 1):
            if self.mask[lev - 1]:
                inj[lev] = z_levels[lev] @ self.weight
        return inj

    def apply(self, eta_values):
        """G eta, as terminal values in the operator's layout."""
        z_levels = self.adjoint_levels(eta_values)
        inj = self._injections(z_levels)
        y_levels = forward_sweep(
            self.tree,
            self.basis,
            np.zeros(self.basis.count),
            self.noise,
            inj,
            collapsed=self.collapsed,
        )
        return y_levels[-1]

    def quad(self, eta_values):
        """<G eta, eta> evaluated directly as the windowed trajectory energy."""
        z_levels = self.adjoint_levels(eta_values)
        return window_quadratic(z_levels, self.weight, self.tree, self.mask)

    def load(self, y0):
        """r with <r, eta> = (y_0, z(0; eta)): the uncontrolled terminal state."""
        y_levels = forward_sweep(
            self.tree, self.basis, y0, self.noise, None, collapsed=self.collapsed
        )
        out = y_levels[-1]
        if not self.collapsed and out.shape[0] == 1:
            out = np.repeat(out, self.n_rows, axis=0)
        return out

    def root_value(self, eta_values):
        """z(0; eta), the deterministic adjoint value at time zero."""
        return self.adjoint_levels(eta_values)[0][0]

    # -- dense path --------------------------------------------------------
    def dense_matrix(self):
        """Plain-coordinate matrix A with f^T A f' = <G eta, eta'>_HT."""
        J = self.basis.count
        basis_cols = np.eye(self.dim).reshape(self.n_rows, J, self.dim)
        z = _batched_backward(self.tree, self.basis, self.noise, basis_cols, self.collapsed)
        inj = [None] * (self.tree.steps + 1)
        for lev in range(1, self.tree.steps + 1):
            if self.mask[lev - 1]:
                inj[lev] = np.einsum("jl,nlb->njb", self.weight, z[lev])
        term = _batched_forward(self.tree, self.basis, self.noise, inj, self.collapsed)
        A = self.ht_weight * term.reshape(self.dim, self.dim)
        return 0.5 * (A + A.T)

    # -- build-time certification ------------------------------------------
    def _certify(self, n_pairs=10, rtol=1e-10):
        rng = np.random.default_rng(2718)
        for _ in range(n_pairs):
            u = rng.standard_normal((self.n_rows, self.basis.count))
            v = rng.standard_normal((self.n_rows, self.basis.count))
            gu, gv = self.apply(u), self.apply(v)
            left = self.ht_dot(gu, v)
            right = self.ht_dot(u, gv)
            scale = max(abs(left), abs(right), 1e-300)
            if abs(left - right) > rtol * scale:
                raise InternalConsistencyError(
                    f"Gram operator is not self-adjoint ({left} vs {right}); "
                    "forward/adjoint transpose mismatch"
                )
            quad = self.ht_dot(gu, u)
            direct = self.quad(u)
            if quad < -rtol * max(direct, 1.0) or abs(quad - direct) > 1e-8 * max(
                abs(direct), 1e-300
            ):
                raise InternalConsistencyError(
                    f"Gram quadratic form mismatch: pairing {quad} vs direct {direct}"
                )


def _batched_backward(tree, basis, noise, eta, collapsed):
    a = noise.for_tree(tree)
    S = 1.0 / (1.0 + tree.dt * basis.eigenvalues)
    sq = np.sqrt(tree.dt)
    levels = [None] * (tree.steps + 1)
    levels[tree.steps] = eta
    for k in range(tree.steps - 1, -1, -1):
        child = levels[k + 1]
        if collapsed:
            levels[k] = S[None, :, None] * child
        else:
            m = 0.5 * (child[1::2] + child[0::2])
            d = 0.5 * (child[1::2] - child[0::2])
            levels[k] = S[None, :, None] * (m + a[k] * sq * d)
    return levels


def _batched_forward(tree, basis, noise, injections, collapsed):
    a = noise.for_tree(tree)
    S = 1.0 / (1.0 + tree.dt * basis.eigenvalues)
    sq = np.sqrt(tree.dt)
    ncols = next(f.shape[-1] for f in injections if f is not None)
    J = basis.count
    cur = np.zeros((1, J, ncols))
    for k in range(tree.steps):
        if collapsed:
            nxt = S[None, :, None] * cur
        else:
            n = cur.shape[0]
            nxt = np.empty((2 * n, J, ncols))
            nxt[0::2] = S[None, :, None] * ((1.0 - a[k] * sq) * cur)
            nxt[1::2] = S[None, :, None] * ((1.0 + a[k] * sq) * cur)
        f = injections[k + 1]
        if f is not None:
            nxt = nxt + tree.dt * (f if f.shape == nxt.shape else np.broadcast_to(f, nxt.shape))
        cur = nxt
    return cur


def assemble_gram_operator(
    density: ActuatorDensity,
    window: TimeWindow,
    a: NoiseCoefficient,
    tree: FiltrationTree,
    basis: SpectralBasis,
) -> GramOperator:
    """HUM Gramian for an actuator density (weight = theta-weighted Gram)."""
    W = theta_weight(density, basis)
    return GramOperator(W, window, a, tree, basis, density=density)


@dataclass
class HumSolution:
    """Output bundle of one HUM solve."""

    eta_star: TerminalData
    phi_star: object
    u_star: AdaptedField
    cost_N: float
    value_V: float
    terminal_residual: float
    el_residual: float
    regularization: float
    op: GramOperator
    control_energy: np.ndarray = field(default=None)
    state_energy: np.ndarray = field(default=None)
    linf_control: float = 0.0
    solver_info: dict = field(default_factory=dict)

    def scalars(self):
        return {
            "cost_N": self.cost_N,
            "value_V": self.value_V,
            "terminal_residual": self.terminal_residual,
            "el_residual": self.el_residual,
            "regularization": self.regularization,
            "linf_control": self.linf_control,
            "solver": dict(self.solver_info),
        }


def _control_injections(op: GramOperator, z_levels):
    return op._injections(z_levels)


def solve_hum(
    y0,
    gram_op: GramOperator,
    eps=0.0,
    tol=1e-10,
    max_iter=5000,
    eps_schedule=None,
    method="auto",
    dense_limit=600,
) -> HumSolution:
    """Minimize 1/2 <G eta, eta> + <r, eta> and build the optimal control.

    eps adds Tikhonov mass eps*I (in the expectation inner product); an
    eps_schedule runs a warm-started continuation ending at its last value.
    method: "dense" (Cholesky), "cg", or "auto" (dense when dim is small).
    """
    op = gram_op
    from .dynamics import adjoint_solve  # local import avoids a cycle at module load

    if eps < 0.0:
        raise InvalidConfigError("Tikhonov weight must be nonnegative")
    schedule = list(eps_schedule) if eps_schedule is not None else [eps]
    if not schedule:
        schedule = [eps]
    eps_final = schedule[-1]
    if eps_final == 0.0 and not op.positive_definite:
        raise DegenerateObservationError(
            "weight matrix is singular; eps = 0 solve not certified",
            mu_min=op.weight_eig_min,
        )
    y0 = np.asarray(y0, dtype=float).reshape(op.basis.count)
    r = op.load(y0)
    r_norm = op.ht_norm(r)
    info = {
        "method": method,
        "eps_schedule": [float(e) for e in schedule],
        "y0": y0.tolist(),
    }

    if r_norm == 0.0:
        eta = op.zero_values()
        phi = adjoint_solve(TerminalData(op.tree, eta), op.noise, op.tree, op.basis)
        zero_field = AdaptedField(
            op.tree, [np.zeros_like(v) for v in phi.z.levels]
        )
        return HumSolution(
            eta_star=TerminalData(op.tree, eta),
            phi_star=phi,
            u_star=zero_field,
            cost_N=0.0,
            value_V=0.0,
            terminal_residual=0.0,
            el_residual=0.0,
            regularization=eps_final,
            op=op,
            control_energy=np.zeros(op.tree.steps + 1),
            state_energy=np.zeros(op.tree.steps + 1),
            solver_info=info,
        )

    use_dense = method == "dense" or (method == "auto" and op.dim <= dense_limit)
    if use_dense:
        A = op.dense_matrix()
        b = op.ht_weight * r.reshape(-1)
        for e in schedule:
            A_eps = A + (e * op.ht_weight) * np.eye(op.dim)
            f = scipy.linalg.cho_solve(scipy.linalg.cho_factor(A_eps), -b)
        eta = f.reshape(op.n_rows, op.basis.count)
        info.update(method="dense", iterations=0)
    else:
        eta = None
        iters_total = 0
        history = []
        for e in schedule:
            apply_eps = lambda v, _e=e: op.apply(v) + _e * v
            eta, its, hist, ok = conjugate_gradient(
                apply_eps, -r, op.ht_dot, x0=eta, tol=tol, max_iter=max_iter
            )
            iters_total += its
            history = hist
            if not ok:
                raise IterationLimitError(
                    f"CG failed to reach tol={tol} in {max_iter} iterations at eps={e}",
                    residual_history=hist,
                )
        info.update(method="cg", iterations=iters_total, final_residual=history[-1])

    z_levels = op.adjoint_levels(eta)
    cost_N = window_quadratic(z_levels, op.weight, op.tree, op.mask)
    value_V = 0.5 * cost_N + op.ht_dot(r, eta)
    el_residual = op.ht_norm(op.apply(eta) + eps_final * eta + r) / r_norm

    inj = _control_injections(op, z_levels)
    y_levels = forward_sweep(op.tree, op.basis, y0, op.noise, inj, collapsed=op.collapsed)
    terminal_residual = op.ht_norm(y_levels[-1])

    phi = adjoint_solve(TerminalData(op.tree, eta), op.noise, op.tree, op.basis)
    B = None
    if op.density is not None:
        B = multiplier_matrix(op.density, op.basis).entries
    u_levels = [np.zeros_like(z_levels[0])]
    for lev in range(1, op.tree.steps + 1):
        w = 1.0 if op.mask[lev - 1] else 0.0
        proj = z_levels[lev] @ B if B is not None else z_levels[lev] @ op.weight
        u_levels.append(w * proj)
    u_star = AdaptedField(op.tree, u_levels)

    control_energy = level_energies(z_levels, op.weight, op.tree)
    for lev in range(1, op.tree.steps + 1):
        if not op.mask[lev - 1]:
            control_energy[lev] = 0.0
    control_energy[0] = 0.0
    state_energy = level_energies(y_levels, np.eye(op.basis.count), op.tree)
    linf = float(np.sqrt(np.max(control_energy)))

    return HumSolution(
        eta_star=TerminalData(op.tree, eta),
        phi_star=phi,
        u_star=u_star,
        cost_N=float(cost_N),
        value_V=float(value_V),
        terminal_residual=float(terminal_residual),
        el_residual=float(el_residual),
        regularization=float(eps_final),
        op=op,
        control_energy=control_energy,
        state_energy=state_energy,
        linf_control=linf,
        solver_info=info,
    )


def verify_null_control(solution: HumSolution, density, a, tree, basis) -> float:
    """Recompute the controlled forward run from scratch; return (E||y_K||^2)^1/2."""
    op = solution.op
    W = theta_weight(density, basis)
    z_levels, _ = backward_sweep(tree, basis, solution.eta_star.values, a)
    inj = [None] * (tree.steps + 1)
    for lev in range(1, tree.steps + 1):
        if op.mask[lev - 1]:
            inj[lev] = z_levels[lev] @ W
    y0 = solution.solver_info.get("y0")
    if y0 is None:
        # The load vector is linear; recover y0 from the stored residual inputs.
        raise InvalidConfigError("solution does not carry its initial state")
    y_levels = forward_sweep(tree, basis, np.asarray(y0, float), a, inj, collapsed=op.collapsed)
    return op.ht_norm(y_levels[-1])


def el_pairing(solution: HumSolution, eta_test) -> float:
    """Euler-Lagrange pairing <G eta* + r, eta_test> for a test direction.

    Equals sum_k chi dt E(u*, beta psi) + E(y_{0,beta}, beta psi) for
    psi = z(.; eta_test); vanishes at the exact optimum.
    """
    op = solution.op
    y0 = np.asarray(solution.solver_info["y0"], dtype=float)
    residual = op.apply(solution.eta_star.values) + op.load(y0)
    return op.ht_dot(residual, np.atleast_2d(eta_test))


def minimal_norm_over_admissible(solution: HumSolution, trials=100, seed=0, tol=1e-12):
    """Probe optimality against perturbed admissible controls.

    Samples modal control perturbations, projects them onto the null space
    of the control-to-terminal map (CG on the normal equations), and checks
    cost(u* + v) >= cost(u*) - 1e-10.  Returns (ok, details).
    """
    op = solution.op
    if op.density is None:
        raise InvalidConfigError("minimal-norm check needs a density-backed operator")
    B = multiplier_matrix(op.density, op.basis).entries
    B2 = B @ B
    normal_op = GramOperator(
        B2, op.window, op.noise, op.tree, op.basis, density=op.density, certify=False
    )
    rng = np.random.default_rng(seed)
    dt = op.tree.dt
    phi_levels = solution.phi_star.z.levels

    def control_dot(u_levels, v_levels):
        total = 0.0
        for lev in range(1, op.tree.steps + 1):
            if not op.mask[lev - 1]:
                continue
            u, v = u_levels[lev], v_levels[lev]
            n = max(u.shape[0], v.shape[0])
            prob = 1.0 if n == 1 else 1.0 / n
            total += dt * prob * float(
                np.sum(np.broadcast_to(u, (n, u.shape[1])) * np.broadcast_to(v, (n, v.shape[1])))
            )
        return total

    rows_at = lambda lev: 1 if op.collapsed else op.tree.level_size(lev)
    checked = skipped = 0
    worst = np.inf
    for _ in range(trials):
        v_levels = [np.zeros((1, op.basis.count))]
        for lev in range(1, op.tree.steps + 1):
            w = 1.0 if op.mask[lev - 1] else 0.0
            v_levels.append(w * rng.standard_normal((rows_at(lev), op.basis.count)))
        # terminal effect of v under the B injection
        inj = [None] + [v_levels[lev] @ B for lev in range(1, op.tree.steps + 1)]
        Lv = forward_sweep(
            op.tree, op.basis, np.zeros(op.basis.count), op.noise, inj, collapsed=op.collapsed
        )[-1]
        wsol, _, _, ok = conjugate_gradient(
            normal_op.apply, Lv, normal_op.ht_dot, tol=1e-12, max_iter=4000
        )
        if not ok:
            skipped += 1
            continue
        z_w = normal_op.adjoint_levels(wsol)
        v_proj = [v_levels[0]]
        for lev in range(1, op.tree.steps + 1):
            w = 1.0 if op.mask[lev - 1] else 0.0
            v_proj.append(v_levels[lev] - w * (z_w[lev] @ B))
        # cost(u* + v) - cost(u*) = 2 <u*, v> + ||v||^2 with
        # <u*, v> = sum_k chi dt E(phi*^T B v_k)
        u_star_proj = [phi_levels[0]] + [
            phi_levels[lev] @ B for lev in range(1, op.tree.steps + 1)
        ]
        cross = control_dot(u_star_proj, v_proj)
        vv = control_dot(v_proj, v_proj)
        diff = 2.0 * cross + vv
        worst = min(worst, diff)
        checked += 1
    if checked == 0:
        raise IterationLimitError("all perturbation projections failed")
    ok = worst >= -1e-10 * max(1.0, solution.cost_N)
    return ok, {"checked": checked, "skipped": skipped, "worst_increase": float(worst)}
