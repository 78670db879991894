"""Relaxed optimal actuator placement and its Nash certification.

The placement cost N(theta) = min-norm control energy is a matrix-fractional
function of the cell density theta: the control Gramian is affine in theta
(the theta-weighted modal Gram is a cell-wise sum), so theta -> N(theta) is
convex on the admissible polytope

    Theta = { 0 <= theta_c <= 1,  sum_c theta_c vol_c = alpha |D| }.

Both admissible-set primitives are exact: Euclidean projection (clipped
shift, threshold by bisection) and the continuous-knapsack linear oracle.
The optimizer minimizes N by projected gradient or Frank-Wolfe with the
envelope gradient dN/dtheta_c = -E_c, E_c the windowed adjoint energy of
the inner solution over cell c.

The minimax certificate plays the associated zero-sum game

    F(theta, eta) = -1/2 sum_c theta_c E_c(eta) - <r, eta>

with two independent solvers: the theta-side infimum of sup_eta F equals
the placement optimum (1/2 N), while the eta-side supremum of inf_theta F
is the negative minimum of the convex function
h(eta) = 1/2 max_theta sum theta_c E_c(eta) + <r, eta>, minimized directly
(the inner max is the knapsack).  A vanishing gap certifies the pair as a
saddle point; the knapsack level-set structure of theta* against the cell
energies of phi* is the complementary-slackness check.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize

from .density import ActuatorDensity, CellGrid, cell_grams
from .dynamics import backward_sweep, forward_sweep
from .errors import (
    InvalidBudgetError,
    InvalidConfigError,
    OptimizerError,
)
from .hum import GramOperator, conjugate_gradient
from .spectral import SpectralBasis
from .tree import FiltrationTree, NoiseCoefficient, TimeWindow

_TIE_REL = 1e-12


def project_onto_theta(raw, alpha, grid: CellGrid) -> ActuatorDensity:
    """Euclidean projection onto the admissible density polytope.

    KKT form theta_c = clip(raw_c - mu * vol_c, 0, 1) with the multiplier
    found by bisection on the (monotone) mass residual.
    """
    raw = np.asarray(raw, dtype=float).ravel()
    if raw.shape != (grid.n_cells,):
        raise InvalidConfigError(f"raw vector needs {grid.n_cells} cells")
    vol = grid.volumes
    budget = alpha * grid.domain.volume
    if budget < 0.0 or budget > grid.domain.volume + 1e-12:
        raise InvalidBudgetError(f"budget alpha={alpha} infeasible")

    def mass(mu):
        return float(np.clip(raw - mu * vol, 0.0, 1.0) @ vol)

    lo = float(np.min((raw - 1.0) / vol)) - 1.0
    hi = float(np.max(raw / vol)) + 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mass(mid) > budget:
            lo = mid
        else:
            hi = mid
    theta = np.clip(raw - 0.5 * (lo + hi) * vol, 0.0, 1.0)
    return ActuatorDensity(grid, theta, alpha)


def knapsack_max(energies, alpha, grid: CellGrid, tie_rule="proportional"):
    """Maximize sum_c theta_c E_c over the density polytope (exact LMO).

    Cells are filled in decreasing energy density E_c / vol_c.  Exact ties
    at the budget boundary are filled proportionally by default
    (deterministic and symmetric); ``tie_rule='index'`` instead fills tied
    cells in index order leaving at most one fractional cell, which is the
    vertex form the Frank-Wolfe oracle wants.
    """
    E = np.asarray(energies, dtype=float).ravel()
    if E.shape != (grid.n_cells,):
        raise InvalidConfigError(f"energy vector needs {grid.n_cells} cells")
    if np.any(E < -1e-12 * max(1.0, np.abs(E).max())):
        raise InvalidConfigError("cell energies must be nonnegative")
    vol = grid.volumes
    budget = alpha * grid.domain.volume
    scores = E / vol
    scale = max(np.abs(scores).max(), 1.0)
    order = sorted(range(grid.n_cells), key=lambda c: (-scores[c], c))
    theta = np.zeros(grid.n_cells)
    remaining = budget
    level = scores[order[-1]]
    i = 0
    while i < len(order) and remaining > 1e-15 * budget:
        j = i
        while j < len(order) and scores[order[j]] >= scores[order[i]] - _TIE_REL * scale:
            j += 1
        group = order[i:j]
        group_vol = float(vol[group].sum())
        level = scores[group[0]]
        if remaining >= group_vol - 1e-15 * budget:
            theta[group] = 1.0
            remaining -= group_vol
        else:
            if tie_rule == "proportional":
                theta[group] = remaining / group_vol
            else:
                for c in group:
                    take = min(1.0, remaining / vol[c])
                    theta[c] = take
                    remaining -= take * vol[c]
                    if remaining <= 1e-15 * budget:
                        break
            remaining = 0.0
        i = j
    density = ActuatorDensity(grid, np.clip(theta, 0.0, 1.0), alpha)
    return density, float(density.theta @ E), float(level)


@dataclass
class GameValue:
    """Primal/dual values of the placement game in the 1/2 N scale."""

    u_plus: float
    u_minus: float
    gap: float
    converged: bool = True
    iterates: list = field(default_factory=list)

    def as_dict(self):
        return {
            "u_plus": self.u_plus,
            "u_minus": self.u_minus,
            "gap": self.gap,
            "relative_gap": self.gap / abs(self.u_plus) if self.u_plus else 0.0,
            "converged": self.converged,
            "iterations": len(self.iterates),
        }


@dataclass
class NashReport:
    """Saddle-point diagnostics for a candidate (theta*, phi*) pair."""

    theta_star: ActuatorDensity
    energy_per_cell: np.ndarray
    level: float
    structure_violation: float
    el_residual: float
    value_gap_theta: float
    fractional_cells: int
    gap: float = np.nan
    theta_side_ok: bool = True
    phi_side_ok: bool = True

    @property
    def ok(self):
        return self.theta_side_ok and self.phi_side_ok

    def as_dict(self):
        return {
            "level": self.level,
            "structure_violation": self.structure_violation,
            "el_residual": self.el_residual,
            "value_gap_theta": self.value_gap_theta,
            "fractional_cells": self.fractional_cells,
            "gap": self.gap,
            "theta_side_ok": self.theta_side_ok,
            "phi_side_ok": self.phi_side_ok,
            "ok": self.ok,
            "theta": self.theta_star.theta.tolist(),
            "energy_per_cell": self.energy_per_cell.tolist(),
        }


class PlacementProblem:
    """Shared workspace for the placement optimizers and the game solvers.

    Assembles the per-cell quadratic forms of the windowed adjoint energy
    once (dense, whenever the terminal space is small enough) and exposes
    the inner HUM solve, the cell energies, and the concave-side objective.
    """

    def __init__(
        self,
        y0,
        window: TimeWindow,
        a: NoiseCoefficient,
        tree: FiltrationTree,
        basis: SpectralBasis,
        grid: CellGrid,
        alpha,
        dense_limit=600,
        cg_tol=1e-11,
        cg_max_iter=20000,
    ):
        self.window, self.noise, self.tree, self.basis = window, a, tree, basis
        self.grid, self.alpha = grid, alpha
        self.y0 = np.asarray(y0, dtype=float).reshape(basis.count)
        self.grams = cell_grams(grid, basis)
        self.mask = window.step_mask(tree)
        self.collapsed = a.is_zero
        self.n_rows = 1 if self.collapsed else tree.n_leaves
        self.dim = self.n_rows * basis.count
        self.ht_weight = 1.0 if self.collapsed else 1.0 / tree.n_leaves
        self.cg_tol, self.cg_max_iter = cg_tol, cg_max_iter
        self.dense = self.dim <= dense_limit and grid.n_cells * self.dim**2 <= 3e8
        r = forward_sweep(tree, basis, self.y0, a, None, collapsed=self.collapsed)[-1]
        if r.shape[0] != self.n_rows:
            r = np.repeat(r, self.n_rows, axis=0)
        self.b = self.ht_weight * r.reshape(-1)
        self.r_values = r
        if self.dense:
            self.P = self._assemble_cell_forms()

    # -- assembly ---------------------------------------------------------
    def _assemble_cell_forms(self):
        J = self.basis.count
        from .hum import _batched_backward

        cols = np.eye(self.dim).reshape(self.n_rows, J, self.dim)
        z = _batched_backward(self.tree, self.basis, self.noise, cols, self.collapsed)
        P = np.zeros((self.grid.n_cells, self.dim, self.dim))
        for lev in range(1, self.tree.steps + 1):
            if not self.mask[lev - 1]:
                continue
            zl = z[lev]
            n = zl.shape[0]
            w = self.tree.dt * (1.0 if n == 1 else 1.0 / n)
            for c in range(self.grid.n_cells):
                t = np.einsum("jl,nlb->njb", self.grams[c], zl)
                P[c] += w * np.tensordot(t, zl, axes=([0, 1], [0, 1]))
        for c in range(self.grid.n_cells):
            P[c] = 0.5 * (P[c] + P[c].T)
        return P

    # -- inner HUM solve ----------------------------------------------------
    def density(self, theta):
        return ActuatorDensity(self.grid, theta, self.alpha)

    def operator(self, theta):
        W = np.einsum("c,cjl->jl", theta, self.grams)
        return GramOperator(
            0.5 * (W + W.T),
            self.window,
            self.noise,
            self.tree,
            self.basis,
            density=self.density(theta),
            certify=False,
        )

    def solve(self, theta, tol=None):
        """Inner minimal-norm solve at theta: returns (N, eta_flat, E_c)."""
        theta = np.asarray(theta, dtype=float)
        if self.dense:
            A = np.tensordot(theta, self.P, axes=1)
            try:
                f = scipy.linalg.cho_solve(scipy.linalg.cho_factor(A), -self.b)
            except scipy.linalg.LinAlgError as exc:
                raise OptimizerError(
                    f"inner Gramian factorization failed: {exc}", last_iterate=theta
                ) from exc
            N = float(-self.b @ f)
            E = np.einsum("b,cbd,d->c", f, self.P, f)
            return N, f, E
        op = self.operator(theta)
        r = self.r_values
        eta, _, _, ok = conjugate_gradient(
            op.apply,
            -r,
            op.ht_dot,
            tol=self.cg_tol if tol is None else tol,
            max_iter=self.cg_max_iter,
        )
        if not ok:
            raise OptimizerError("inner CG failed to converge", last_iterate=theta)
        N = float(-op.ht_dot(r, eta))
        return N, eta.reshape(-1), self.cell_energies_of(eta)

    def cost(self, theta):
        return self.solve(theta)[0]

    def cell_energies_of(self, eta_flat):
        """E_c(eta) = sum_k chi dt E integral_cell z^2 for each cell."""
        eta = np.asarray(eta_flat).reshape(self.n_rows, self.basis.count)
        z_levels, _ = backward_sweep(self.tree, self.basis, eta, self.noise)
        E = np.zeros(self.grid.n_cells)
        for lev in range(1, self.tree.steps + 1):
            if not self.mask[lev - 1]:
                continue
            zl = z_levels[lev]
            w = self.tree.dt * (1.0 if zl.shape[0] == 1 else 1.0 / zl.shape[0])
            E += w * np.einsum("cjl,pj,pl->c", self.grams, zl, zl)
        return E

    # -- concave-side objective --------------------------------------------
    def h_and_grad(self, f):
        """h(eta) = 1/2 max_theta sum theta_c E_c(eta) + <r, eta> and its gradient."""
        if self.dense:
            E = np.einsum("b,cbd,d->c", f, self.P, f)
        else:
            E = self.cell_energies_of(f)
        theta_hat, value, _ = knapsack_max(np.maximum(E, 0.0), self.alpha, self.grid)
        h = 0.5 * value + float(self.b @ f)
        if self.dense:
            grad = np.tensordot(theta_hat.theta, self.P, axes=1) @ f + self.b
        else:
            op = self.operator(theta_hat.theta)
            eta = f.reshape(self.n_rows, self.basis.count)
            grad = self.ht_weight * op.apply(eta).reshape(-1) + self.b
        return h, grad

    def game_pairing(self, theta, f):
        """F(theta, eta) = -1/2 sum theta_c E_c(eta) - <r, eta>."""
        E = (
            np.einsum("b,cbd,d->c", f, self.P, f)
            if self.dense
            else self.cell_energies_of(f)
        )
        return -0.5 * float(np.asarray(theta) @ E) - float(self.b @ f)


def optimize_actuator(
    y0,
    window,
    a,
    tree,
    basis,
    grid,
    alpha,
    method="projected-gradient",
    schedule=None,
    tol=1e-8,
    max_iter=400,
    problem=None,
):
    """Minimize the placement cost over the density polytope.

    Returns (theta_star, NashReport, GameValue).  ``schedule`` optionally
    carries Tikhonov continuation values for ill-conditioned inner solves
    (unused on the well-posed dense path).
    """
    if method not in ("projected-gradient", "frank-wolfe"):
        raise InvalidConfigError(f"unknown method {method!r}")
    prob = problem or PlacementProblem(y0, window, a, tree, basis, grid, alpha)
    if np.allclose(prob.y0, 0.0):
        theta = ActuatorDensity.constant(grid, alpha)
        E = np.zeros(grid.n_cells)
        report = NashReport(theta, E, 0.0, 0.0, 0.0, 0.0, 0)
        game = GameValue(0.0, 0.0, 0.0, True, [])
        return theta, report, game

    theta = np.full(grid.n_cells, float(alpha))
    N, f, E = prob.solve(theta)
    history = [{"N": N, "fractional_cells": grid.n_cells}]
    best_N = N
    step = 1.0 / max(float(np.abs(E).max()), 1e-30)

    def fw_step(theta, N, f, E):
        """Exact line search toward the knapsack vertex; returns the new point."""
        vertex, _, _ = knapsack_max(np.maximum(E, 0.0), alpha, grid, tie_rule="index")
        direction = vertex.theta - theta
        gap = float(E @ direction)
        if gap <= 0.0:
            return theta, N, f, E, gap, False
        line = scipy.optimize.minimize_scalar(
            lambda t: prob.cost(theta + t * direction),
            bounds=(0.0, 1.0),
            method="bounded",
            options={"xatol": 1e-12},
        )
        cand = theta + float(line.x) * direction
        N_new, f_new, E_new = prob.solve(cand)
        if N_new < N:
            return cand, N_new, f_new, E_new, gap, True
        return theta, N, f, E, gap, False

    for _ in range(1, max_iter + 1):
        if method == "projected-gradient":
            # dN/dtheta_c = -E_c, so the descent move is theta + step * E.
            moved = False
            first_try = True
            while step > 1e-18:
                cand = project_onto_theta(theta + step * E, alpha, grid).theta
                N_new, f_new, E_new = prob.solve(cand)
                if N_new <= N - 1e-15 * abs(N):
                    theta, N, f, E = cand, N_new, f_new, E_new
                    if first_try:
                        step *= 1.3
                    moved = True
                    break
                first_try = False
                step *= 0.3
            if not moved:
                # projection stalled; a single exact Frank-Wolfe move either
                # improves or certifies optimality
                theta, N, f, E, fw_gap, moved = fw_step(theta, N, f, E)
                step = 1.0 / max(float(np.abs(E).max()), 1e-30)
            vertex, _, _ = knapsack_max(np.maximum(E, 0.0), alpha, grid, tie_rule="index")
            fw_gap = float(E @ (vertex.theta - theta))
        else:  # frank-wolfe
            theta, N, f, E, fw_gap, moved = fw_step(theta, N, f, E)
        best_N = min(best_N, N)
        frac = int(np.sum((theta > 1e-9) & (theta < 1.0 - 1e-9)))
        history.append({"N": N, "fractional_cells": frac, "fw_gap": fw_gap})
        if fw_gap <= tol * max(abs(N), 1e-300):
            break
        if not moved and fw_gap <= 1e3 * tol * max(abs(N), 1e-300):
            break
        if not moved:
            break

    theta_density = ActuatorDensity(grid, theta, alpha)
    u_plus = 0.5 * best_N
    game = minimax_gap(theta_density, prob, u_plus=u_plus)
    game.iterates = history
    report = check_nash_energies(theta_density, E, f, prob, el_from=(N, f))
    report.gap = game.gap
    return theta_density, report, game


def minimax_gap(theta_star: ActuatorDensity, problem: PlacementProblem, u_plus=None, starts=3,
                seed=7, lbfgs_maxiter=4000):
    """Independent primal/dual game values and their gap.

    u_plus is the theta-side value 1/2 N(theta*) (recomputed unless the
    optimizer hands over its running minimum); u_minus is obtained by
    minimizing the convex eta-side objective directly with L-BFGS from
    several starts, never touching the theta optimizer.
    """
    prob = problem
    if np.allclose(prob.y0, 0.0):
        return GameValue(0.0, 0.0, 0.0, True, [])
    if u_plus is None:
        u_plus = 0.5 * prob.cost(theta_star.theta)
    rng = np.random.default_rng(seed)
    best = None
    converged = False
    for s in range(starts):
        x0 = np.zeros(prob.dim)
        if s > 0:
            x0 = 1e-2 * rng.standard_normal(prob.dim)
        res = scipy.optimize.minimize(
            prob.h_and_grad,
            x0,
            jac=True,
            method="L-BFGS-B",
            options={"maxiter": lbfgs_maxiter, "ftol": 1e-17, "gtol": 1e-12},
        )
        if best is None or res.fun < best:
            best = float(res.fun)
            converged = bool(res.success) or converged
    u_minus = -best
    return GameValue(float(u_plus), float(u_minus), float(u_plus - u_minus), converged, [])


def check_nash_energies(theta_star, energies, f_star, problem, el_from=None, tol=1e-4):
    """Saddle diagnostics from precomputed cell energies of phi*."""
    E = np.asarray(energies, dtype=float)
    knap_density, knap_value, level = knapsack_max(
        np.maximum(E, 0.0), theta_star.alpha, theta_star.grid
    )
    attained = float(theta_star.theta @ E)
    value_gap = knap_value - attained
    vol = theta_star.grid.volumes
    scores = E / vol
    band = tol * max(float(np.abs(scores).max()), 1e-300)
    fractional = (theta_star.theta > 1e-6) & (theta_star.theta < 1.0 - 1e-6)
    off_level = np.abs(scores - level) > band
    misplaced = (
        (fractional & off_level)
        | ((theta_star.theta >= 1.0 - 1e-6) & (scores < level - band))
        | ((theta_star.theta <= 1e-6) & (scores > level + band))
    )
    structure_violation = float(vol[misplaced].sum())
    el_residual = 0.0
    if el_from is not None:
        N_val, f = el_from
        if problem.dense:
            A = np.tensordot(theta_star.theta, problem.P, axes=1)
            el_residual = float(
                np.linalg.norm(A @ f + problem.b) / max(np.linalg.norm(problem.b), 1e-300)
            )
        else:
            op = problem.operator(theta_star.theta)
            eta = f.reshape(problem.n_rows, problem.basis.count)
            res = problem.ht_weight * op.apply(eta).reshape(-1) + problem.b
            el_residual = float(np.linalg.norm(res) / max(np.linalg.norm(problem.b), 1e-300))
    report = NashReport(
        theta_star=theta_star,
        energy_per_cell=E,
        level=level,
        structure_violation=structure_violation,
        el_residual=el_residual,
        value_gap_theta=float(value_gap),
        fractional_cells=int(np.sum(fractional)),
        theta_side_ok=value_gap <= tol * max(abs(attained), 1e-300)
        and structure_violation <= 1e-3 * theta_star.grid.domain.volume,
        phi_side_ok=el_residual <= tol,
    )
    return report


def check_nash(theta_star: ActuatorDensity, problem: PlacementProblem, tol=1e-4):
    """Verify both saddle conditions for a candidate theta*.

    Re-solves the inner problem at theta* for the phi side and compares the
    theta side against the knapsack optimum of the resulting cell energies.
    """
    N, f, E = problem.solve(theta_star.theta)
    return check_nash_energies(theta_star, E, f, problem, el_from=(N, f), tol=tol)


def mass_swap_probes(theta_star: ActuatorDensity, energies, n_probes=100, seed=11):
    """Random feasible mass swaps; how many strictly decrease sum theta E.

    At a knapsack optimum every feasible swap moves mass from a cell with
    higher energy density to one with lower, so the count should equal the
    probe count up to exact ties.
    """
    rng = np.random.default_rng(seed)
    grid = theta_star.grid
    vol = grid.volumes
    E = np.asarray(energies, dtype=float)
    scores = E / vol
    theta = theta_star.theta
    decreased = 0
    attempts = 0
    probes = 0
    scale = max(float(np.abs(E).max()), 1e-300)
    while probes < n_probes and attempts < 100 * n_probes:
        attempts += 1
        i, j = rng.integers(0, grid.n_cells, size=2)
        if i == j:
            continue
        if scores[i] <= scores[j]:
            i, j = j, i
        if abs(scores[i] - scores[j]) <= 1e-12 * max(abs(scores[i]), 1.0):
            continue
        room_out = theta[i] * vol[i]
        room_in = (1.0 - theta[j]) * vol[j]
        m = 0.5 * min(room_out, room_in)
        if m <= 1e-13:
            continue
        delta = m * (E[j] / vol[j] - E[i] / vol[i])
        probes += 1
        if delta < -1e-14 * scale:
            decreased += 1
    return decreased, probes


def saddle_probes(problem: PlacementProblem, theta_star, f_star, n_probes=100, seed=5, tol=1e-8):
    """Probe F(theta*, phi) <= F(theta*, phi*) <= F(theta, phi*) pointwise.

    Returns the worst violation of each inequality over random feasible
    probes (positive numbers mean violation beyond round-off).
    """
    rng = np.random.default_rng(seed)
    F_star = problem.game_pairing(theta_star.theta, f_star)
    worst_left = -np.inf
    worst_right = -np.inf
    scale = max(abs(F_star), 1.0)
    for _ in range(n_probes):
        f_probe = f_star + rng.standard_normal(problem.dim) * (
            0.3 * np.linalg.norm(f_star) / np.sqrt(problem.dim)
        )
        worst_left = max(worst_left, problem.game_pairing(theta_star.theta, f_probe) - F_star)
        raw = rng.uniform(0.0, 1.0, problem.grid.n_cells)
        theta_probe = project_onto_theta(raw, problem.alpha, problem.grid).theta
        worst_right = max(worst_right, F_star - problem.game_pairing(theta_probe, f_star))
    return worst_left / scale, worst_right / scale
