"""Binary-tree model of the Brownian filtration and adapted fields.

The driving noise is discretized by Bernoulli increments +/-sqrt(dt), one
branch per step, on a non-recombining tree: node (k, p) with level k in
0..K and path index p in 0..2^k-1.  Children of (k, p) are (k+1, 2p)
(down move) and (k+1, 2p+1) (up move), each with conditional probability
1/2.  Adaptedness of a process is structural: storing one value per node
is exactly F_t-measurability on this filtration, and conditional
expectations are finite pair averages, so every martingale identity used
by the dual solvers holds without sampling error.

Fields may also be stored in collapsed form (one value per level), which
represents deterministic processes.  Solvers exploit this when the noise
coefficient vanishes; it is what makes large step counts affordable for
deterministic oracles.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfigError

#: trees above this level count cannot be materialized node-by-node
MAX_MATERIALIZED_LEVELS = 16


@dataclass(frozen=True)
class FiltrationTree:
    """Time grid 0..T in K steps plus the binary path structure."""

    steps: int
    horizon: float

    def __post_init__(self):
        if self.steps < 1:
            raise InvalidConfigError(f"need at least one time step, got {self.steps}")
        if self.horizon <= 0:
            raise InvalidConfigError(f"horizon must be positive, got {self.horizon}")

    @property
    def dt(self):
        return self.horizon / self.steps

    @property
    def n_leaves(self):
        return 2 ** self.steps

    def times(self):
        return np.linspace(0.0, self.horizon, self.steps + 1)

    def level_size(self, k):
        return 2 ** k

    def check_materializable(self):
        if self.steps > MAX_MATERIALIZED_LEVELS:
            raise InvalidConfigError(
                f"K={self.steps} exceeds the materializable tree depth "
                f"({MAX_MATERIALIZED_LEVELS}); use a zero noise coefficient "
                "so fields collapse to deterministic storage"
            )


class AdaptedField:
    """Per-node modal vectors, one (n_k, J) array per level.

    n_k is 2^k for a full field or 1 for a collapsed (deterministic) one.
    Mixed layouts are not allowed.
    """

    def __init__(self, tree: FiltrationTree, levels):
        self.tree = tree
        self.levels = [np.asarray(v, dtype=float) for v in levels]
        if not self.levels:
            raise InvalidConfigError("adapted field needs at least the root level")
        J = self.levels[0].shape[-1]
        self.collapsed = all(v.shape[0] == 1 for v in self.levels)
        for k, v in enumerate(self.levels):
            want = 1 if self.collapsed else tree.level_size(k)
            if v.shape != (want, J):
                raise InvalidConfigError(
                    f"level {k} has shape {v.shape}, expected ({want}, {J})"
                )

    @property
    def depth(self):
        return len(self.levels) - 1

    @property
    def n_modes(self):
        return self.levels[0].shape[-1]

    def level(self, k):
        return self.levels[k]

    def scaled(self, c):
        return AdaptedField(self.tree, [c * v for v in self.levels])

    def __add__(self, other):
        return AdaptedField(
            self.tree, [a + b for a, b in zip(self.levels, other.levels)]
        )


@dataclass(frozen=True)
class TerminalData:
    """Terminal condition eta: per-leaf modal vectors (or (1, J) collapsed)."""

    tree: FiltrationTree
    values: np.ndarray

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.values, dtype=float))
        object.__setattr__(self, "values", v)
        if v.shape[0] not in (1, self.tree.n_leaves):
            raise InvalidConfigError(
                f"terminal data has {v.shape[0]} rows, tree has {self.tree.n_leaves} leaves"
            )

    @property
    def collapsed(self):
        return self.values.shape[0] == 1

    @property
    def n_modes(self):
        return self.values.shape[-1]


@dataclass(frozen=True)
class NoiseCoefficient:
    """Deterministic piecewise-constant noise coefficient a(t), one value per step."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        object.__setattr__(self, "values", v)
        if not np.all(np.isfinite(v)):
            raise InvalidConfigError("noise coefficient must be finite")

    @classmethod
    def zero(cls, steps):
        return cls(np.zeros(steps))

    @classmethod
    def constant(cls, value, steps):
        return cls(np.full(steps, float(value)))

    @property
    def tau(self):
        """Squared sup norm of a, the growth rate entering the decay bound."""
        return float(np.max(self.values**2)) if self.values.size else 0.0

    @property
    def is_zero(self):
        return bool(np.all(self.values == 0.0))

    def for_tree(self, tree: FiltrationTree):
        if self.values.size != tree.steps:
            raise InvalidConfigError(
                f"noise has {self.values.size} steps, tree has {tree.steps}"
            )
        return self.values


@dataclass(frozen=True)
class TimeWindow:
    """Union of disjoint subintervals of [0, T] on which observation/control acts."""

    intervals: tuple

    def __post_init__(self):
        iv = sorted((float(a), float(b)) for a, b in self.intervals)
        for a, b in iv:
            if b - a <= 0:
                raise InvalidConfigError(f"window interval ({a}, {b}) has no length")
        for (a0, b0), (a1, b1) in zip(iv, iv[1:]):
            if a1 < b0 - 1e-12:
                raise InvalidConfigError("window intervals overlap")
        object.__setattr__(self, "intervals", tuple(iv))

    @classmethod
    def full(cls, horizon):
        return cls(((0.0, float(horizon)),))

    @property
    def measure(self):
        return float(sum(b - a for a, b in self.intervals))

    def contains(self, t):
        return any(a - 1e-12 <= t < b - 1e-12 or np.isclose(t, a) for a, b in self.intervals)

    def step_mask(self, tree: FiltrationTree):
        """Active steps by the left endpoints t_0..t_{K-1} of the time grid."""
        times = tree.times()[:-1]
        return np.array([self.contains(t) for t in times], dtype=bool)

    def intersect_measure(self, lo, hi):
        """Measure of the window intersected with (lo, hi)."""
        if hi < lo:
            lo, hi = hi, lo
        return float(
            sum(max(0.0, min(b, hi) - max(a, lo)) for a, b in self.intervals)
        )


def increment_sums(tree: FiltrationTree, k):
    """Accumulated Brownian values W_{t_k} for every node of level k."""
    tree.check_materializable()
    p = np.arange(2 ** k, dtype=np.uint64)
    ups = np.zeros(2 ** k, dtype=np.int64)
    for bit in range(k):
        ups += ((p >> np.uint64(bit)) & np.uint64(1)).astype(np.int64)
    return np.sqrt(tree.dt) * (2 * ups - k)


def conditional_expectation(field: AdaptedField, k: int) -> AdaptedField:
    """E[. | F_{t_k}] of the field's deepest level, truncated at level k.

    Every returned level j <= k carries the conditional expectation at that
    level, so the tower property holds exactly by construction.
    """
    if k > field.depth:
        raise InvalidConfigError(f"level {k} exceeds field depth {field.depth}")
    if field.collapsed:
        deepest = field.levels[field.depth]
        return AdaptedField(field.tree, [deepest.copy() for _ in range(k + 1)])
    current = field.levels[field.depth]
    for _ in range(field.depth, k, -1):
        current = 0.5 * (current[0::2] + current[1::2])
    out = [None] * (k + 1)
    out[k] = current.copy()
    for j in range(k - 1, -1, -1):
        current = 0.5 * (current[0::2] + current[1::2])
        out[j] = current
    return AdaptedField(field.tree, out)


def expected_norm_sq(field: AdaptedField, k: int, gram_entries) -> float:
    """E ||field(t_k)||_W^2 for a symmetric weight matrix W (Gram entries)."""
    if k > field.depth:
        raise InvalidConfigError(f"level {k} exceeds field depth {field.depth}")
    W = np.asarray(getattr(gram_entries, "entries", gram_entries), dtype=float)
    v = field.levels[k]
    if W.shape != (v.shape[1], v.shape[1]):
        raise InvalidConfigError(
            f"weight matrix is {W.shape}, field has {v.shape[1]} modes"
        )
    prob = 1.0 if field.collapsed else 2.0 ** (-k)
    return prob * float(np.einsum("pj,jl,pl->", v, W, v))


def sample_terminal(seed, spec, tree: FiltrationTree, n_modes: int) -> TerminalData:
    """Reproducible terminal data.

    spec:
      {"kind": "deterministic", "coeffs": [...]}          every leaf equal
      {"kind": "gaussian", "scale": s}                    iid N(0, s^2) per leaf/mode
      {"kind": "brownian", "mode": m, "scale": s}         eta = s * W_T * e_m
    """
    kind = spec.get("kind")
    if kind == "deterministic":
        coeffs = np.asarray(spec["coeffs"], dtype=float)
        if coeffs.shape != (n_modes,):
            raise InvalidConfigError(
                f"deterministic terminal data needs {n_modes} coefficients"
            )
        return TerminalData(tree, coeffs[None, :].copy())
    if kind == "gaussian":
        tree.check_materializable()
        rng = np.random.default_rng(seed)
        scale = float(spec.get("scale", 1.0))
        return TerminalData(
            tree, scale * rng.standard_normal((tree.n_leaves, n_modes))
        )
    if kind == "brownian":
        mode = int(spec.get("mode", 0))
        if not 0 <= mode < n_modes:
            raise InvalidConfigError(f"mode index {mode} out of range")
        w = increment_sums(tree, tree.steps)
        values = np.zeros((tree.n_leaves, n_modes))
        values[:, mode] = float(spec.get("scale", 1.0)) * w
        return TerminalData(tree, values)
    raise InvalidConfigError(f"unknown terminal sample kind {kind!r}")
