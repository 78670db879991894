"""Relaxed actuator densities on a uniform cell grid.

theta assigns each grid cell a value in [0, 1] with total mass
sum_c theta_c vol_c = alpha |D|; beta = sqrt(theta) cellwise.  Cellwise
densities keep both admissible sets exact polytopes (projection and the
continuous-knapsack linear oracle are closed form) while the products
beta*phi remain genuine L2 functions whose norms the cell Gram matrices
integrate exactly.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidBudgetError, InvalidDensityError
from .spectral import BoxDomain, Region, SpectralBasis, box_gram

MASS_TOL = 1e-10


@dataclass(frozen=True)
class CellGrid:
    """Uniform partition of the domain into axis-aligned cells."""

    domain: BoxDomain
    shape: tuple

    def __post_init__(self):
        shape = tuple(int(n) for n in np.atleast_1d(self.shape))
        object.__setattr__(self, "shape", shape)
        if len(shape) != self.domain.dims or any(n < 1 for n in shape):
            raise InvalidDensityError(f"grid shape {shape} invalid for this domain")

    @property
    def n_cells(self):
        return int(np.prod(self.shape))

    @property
    def cell_volume(self):
        return self.domain.volume / self.n_cells

    @property
    def volumes(self):
        return np.full(self.n_cells, self.cell_volume)

    def boxes(self):
        """Cell bounds in row-major cell order."""
        axes = [
            np.linspace(0.0, L, n + 1)
            for L, n in zip(self.domain.lengths, self.shape)
        ]
        out = []
        for flat in range(self.n_cells):
            idx = np.unravel_index(flat, self.shape)
            out.append(tuple((axes[d][i], axes[d][i + 1]) for d, i in enumerate(idx)))
        return out

    def centers(self):
        return np.array([[0.5 * (lo + hi) for lo, hi in box] for box in self.boxes()])

    def cell_region(self, flat_index):
        return Region(self.domain, (self.boxes()[flat_index],))


def cell_grams(grid: CellGrid, basis: SpectralBasis) -> np.ndarray:
    """Stack of exact per-cell Gram matrices, shape (C, J, J)."""
    return np.stack([box_gram(basis, box) for box in grid.boxes()])


@dataclass(frozen=True)
class ActuatorDensity:
    """theta in [0,1]^C with mass alpha*|D|; beta = sqrt(theta)."""

    grid: CellGrid
    theta: np.ndarray
    alpha: float

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float).ravel()
        object.__setattr__(self, "theta", theta)
        if theta.shape != (self.grid.n_cells,):
            raise InvalidDensityError(
                f"theta has {theta.shape[0]} cells, grid has {self.grid.n_cells}"
            )
        if np.any(theta < -MASS_TOL) or np.any(theta > 1.0 + MASS_TOL):
            raise InvalidDensityError("theta must take values in [0, 1]")
        budget = self.alpha * self.grid.domain.volume
        if not 0.0 < self.alpha <= 1.0:
            raise InvalidBudgetError(f"budget fraction alpha={self.alpha} outside (0, 1]")
        mass = float(theta @ self.grid.volumes)
        if abs(mass - budget) > 1e-8 * max(1.0, budget):
            raise InvalidDensityError(
                f"theta mass {mass} misses budget {budget} (alpha={self.alpha})"
            )

    @property
    def beta(self):
        return np.sqrt(np.clip(self.theta, 0.0, 1.0))

    @classmethod
    def constant(cls, grid: CellGrid, alpha: float):
        return cls(grid, np.full(grid.n_cells, alpha), alpha)

    @classmethod
    def indicator(cls, grid: CellGrid, cells, alpha=None):
        """Bang-bang density supported on the given cell indices."""
        theta = np.zeros(grid.n_cells)
        theta[list(cells)] = 1.0
        frac = theta @ grid.volumes / grid.domain.volume
        return cls(grid, theta, frac if alpha is None else alpha)


@dataclass(frozen=True)
class MultiplierMatrix:
    """Modal matrix of multiplication by beta: B[i,j] = (beta e_i, e_j)."""

    density: ActuatorDensity
    entries: np.ndarray


def multiplier_matrix(density: ActuatorDensity, basis: SpectralBasis) -> MultiplierMatrix:
    grams = cell_grams(density.grid, basis)
    B = np.einsum("c,cjl->jl", density.beta, grams)
    return MultiplierMatrix(density, 0.5 * (B + B.T))


def theta_weight(density: ActuatorDensity, basis: SpectralBasis) -> np.ndarray:
    """Modal matrix of the theta-weighted inner product (theta e_i, e_j).

    This is the exact modal representation of ||beta v||^2 for v in the
    basis span, and it is linear in theta - the property the actuator game
    machinery relies on.
    """
    grams = cell_grams(density.grid, basis)
    M = np.einsum("c,cjl->jl", density.theta, grams)
    return 0.5 * (M + M.T)
