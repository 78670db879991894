"""Dirichlet eigenbasis on box domains and exact Gram matrices.

On a box (0,L1)x...x(0,Ld) the Laplacian eigenpairs are closed form:

    e_j(x) = prod_i sqrt(2/L_i) sin(j_i pi x_i / L_i),
    lam_j  = sum_i (j_i pi / L_i)^2,

and every integral of e_i e_j over an axis-aligned sub-box has an explicit
sine antiderivative, so Gram matrices over box-union regions carry no
quadrature error.  That removes one whole error source from the solvers
built on top.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateObservationError, InvalidConfigError, InvalidRegionError

_GEOM_TOL = 1e-12


@dataclass(frozen=True)
class BoxDomain:
    """Axis-aligned box (0,L1)x...x(0,Ld), d in {1,2}."""

    lengths: tuple

    def __post_init__(self):
        lengths = tuple(float(x) for x in self.lengths)
        object.__setattr__(self, "lengths", lengths)
        if len(lengths) not in (1, 2):
            raise InvalidConfigError(f"domain must be 1D or 2D, got {len(lengths)} axes")
        if any(L <= 0.0 for L in lengths):
            raise InvalidConfigError(f"domain lengths must be positive, got {lengths}")

    @property
    def dims(self):
        return len(self.lengths)

    @property
    def volume(self):
        return float(np.prod(self.lengths))


@dataclass(frozen=True)
class Region:
    """Finite union of pairwise-disjoint axis-aligned boxes inside a domain.

    Boxes are ((lo, hi),) in 1D and ((xlo, xhi), (ylo, yhi)) in 2D.
    """

    domain: BoxDomain
    boxes: tuple

    def __post_init__(self):
        norm = []
        for box in self.boxes:
            box = tuple((float(a), float(b)) for a, b in box)
            if len(box) != self.domain.dims:
                raise InvalidRegionError(f"box {box} has wrong dimension for the domain")
            for axis, (lo, hi) in enumerate(box):
                L = self.domain.lengths[axis]
                if not (-_GEOM_TOL <= lo < hi <= L + _GEOM_TOL):
                    raise InvalidRegionError(
                        f"box interval ({lo}, {hi}) escapes domain axis of length {L}"
                    )
            norm.append(box)
        if not norm:
            raise InvalidRegionError("region needs at least one box")
        for i in range(len(norm)):
            for j in range(i + 1, len(norm)):
                if _boxes_overlap(norm[i], norm[j]):
                    raise InvalidRegionError(f"boxes {norm[i]} and {norm[j]} overlap")
        object.__setattr__(self, "boxes", tuple(norm))

    @property
    def measure(self):
        return float(sum(np.prod([hi - lo for lo, hi in box]) for box in self.boxes))


def _boxes_overlap(a, b):
    # Positive-measure overlap requires overlap on every axis.
    for (alo, ahi), (blo, bhi) in zip(a, b):
        if min(ahi, bhi) - max(alo, blo) <= _GEOM_TOL:
            return False
    return True


def full_region(domain: BoxDomain) -> Region:
    return Region(domain, (tuple((0.0, L) for L in domain.lengths),))


@dataclass(frozen=True)
class SpectralBasis:
    """The ``count`` lowest Dirichlet modes, eigenvalues sorted ascending.

    Ties are broken by lexicographic multi-index order so mode numbering is
    deterministic across runs.
    """

    domain: BoxDomain
    modes: tuple
    eigenvalues: np.ndarray

    @property
    def count(self):
        return len(self.modes)


def build_basis(domain: BoxDomain, count: int) -> SpectralBasis:
    """Enumerate multi-indices, keep the ``count`` smallest eigenvalues."""
    if count < 1:
        raise InvalidConfigError(f"mode count must be >= 1, got {count}")
    d = domain.dims
    bound = max(2, int(np.ceil(count ** (1.0 / d))) + 2)
    while True:
        axes = [np.arange(1, bound + 1) for _ in range(d)]
        grids = np.meshgrid(*axes, indexing="ij")
        idx = np.stack([g.ravel() for g in grids], axis=1)
        lam = np.zeros(len(idx))
        for ax in range(d):
            lam += (idx[:, ax] * np.pi / domain.lengths[ax]) ** 2
        order = sorted(range(len(idx)), key=lambda i: (lam[i], tuple(idx[i])))
        if len(order) < count:
            bound *= 2
            continue
        # The enumeration box is big enough once the count-th eigenvalue is
        # below anything that could enter from outside the box.
        boundary = min(
            ((bound + 1) * np.pi / domain.lengths[ax]) ** 2
            + sum(
                (np.pi / domain.lengths[other]) ** 2 for other in range(d) if other != ax
            )
            for ax in range(d)
        )
        if lam[order[count - 1]] >= boundary:
            if bound > 4096:
                raise InvalidConfigError("mode enumeration bound exhausted")
            bound *= 2
            continue
        chosen = order[:count]
        modes = tuple(tuple(int(v) for v in idx[i]) for i in chosen)
        return SpectralBasis(domain, modes, np.array([lam[i] for i in chosen]))


def _sine_overlap(i, j, L, lo, hi):
    """integral_lo^hi sin(i pi x / L) sin(j pi x / L) dx, closed form."""
    w = np.pi / L
    if i == j:
        term = lambda x: 0.5 * x - np.sin(2.0 * i * w * x) / (4.0 * i * w)
    else:
        term = lambda x: 0.5 * (
            np.sin((i - j) * w * x) / ((i - j) * w) - np.sin((i + j) * w * x) / ((i + j) * w)
        )
    return term(hi) - term(lo)


@dataclass(frozen=True)
class GramMatrix:
    """entries[i, j] = integral over the region of e_i e_j."""

    region: Region
    entries: np.ndarray


def box_gram(basis: SpectralBasis, box) -> np.ndarray:
    """Exact Gram of the basis over one axis-aligned box."""
    dom = basis.domain
    J = basis.count
    out = np.ones((J, J))
    for ax in range(dom.dims):
        L = dom.lengths[ax]
        lo, hi = box[ax]
        idx = [m[ax] for m in basis.modes]
        uniq = sorted(set(idx))
        table = {}
        for a in uniq:
            for b in uniq:
                if (b, a) in table:
                    table[(a, b)] = table[(b, a)]
                else:
                    table[(a, b)] = (2.0 / L) * _sine_overlap(a, b, L, lo, hi)
        fac = np.array([[table[(idx[i], idx[j])] for j in range(J)] for i in range(J)])
        out *= fac
    return 0.5 * (out + out.T)


def gram(basis: SpectralBasis, region: Region) -> GramMatrix:
    if region.domain != basis.domain:
        raise InvalidRegionError("region and basis live on different domains")
    entries = np.zeros((basis.count, basis.count))
    for box in region.boxes:
        entries += box_gram(basis, box)
    return GramMatrix(region, entries)


def spectral_project(coeffs, basis: SpectralBasis, lam_cutoff):
    """Split modal coefficients at the eigenvalue cutoff: (low, high)."""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape[-1] != basis.count:
        raise InvalidConfigError(
            f"coefficient vector has {coeffs.shape[-1]} entries, basis has {basis.count}"
        )
    keep = basis.eigenvalues <= lam_cutoff
    low = np.where(keep, coeffs, 0.0)
    return low, coeffs - low


def spectral_inequality_constant(basis: SpectralBasis, region: Region, lam_cutoff) -> float:
    """Sharp constant sup ||P_lam eta||^2 / ||P_lam eta||_G^2 = 1/mu_min.

    mu_min is the smallest eigenvalue of the Gram matrix truncated to the
    modes below the cutoff; the region sees every low mode iff it is
    positive.
    """
    keep = np.flatnonzero(basis.eigenvalues <= lam_cutoff)
    if keep.size == 0:
        raise InvalidConfigError(f"no modes below cutoff {lam_cutoff}")
    sub = gram(basis, region).entries[np.ix_(keep, keep)]
    mu = np.linalg.eigvalsh(sub)
    mu_min = float(mu[0])
    if mu_min <= 1e-14:
        raise DegenerateObservationError(
            f"truncated Gram is singular (mu_min={mu_min:.3e}); "
            "region too small for this resolution",
            mu_min=mu_min,
        )
    return 1.0 / mu_min


def spectral_certificate(basis: SpectralBasis, region: Region, lam_grid):
    """Finite-lambda certificate rows (lam, ratio, log(ratio)/sqrt(lam)).

    The reported sup of the last column is a measured stand-in for the
    growth constant in the spectral inequality; it is not asserted a priori.
    """
    rows = []
    for lam in lam_grid:
        ratio = spectral_inequality_constant(basis, region, lam)
        rows.append((float(lam), ratio, float(np.log(ratio) / np.sqrt(lam))))
    return rows
