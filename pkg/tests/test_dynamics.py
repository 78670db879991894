import numpy as np
import pytest

from stochheat import (
    ActuatorDensity,
    AdaptedField,
    BoxDomain,
    CellGrid,
    FiltrationTree,
    NoiseCoefficient,
    TerminalData,
    adjoint_solve,
    build_basis,
    duality_identity,
    forward_solve,
    project_onto_theta,
    sample_terminal,
)
from stochheat.dynamics import brownian_lattice_adjoint, duality_terms
from stochheat.tree import increment_sums


def make_setup(K=5, J=4, L=np.pi, T=1.0):
    domain = BoxDomain((L,))
    return domain, build_basis(domain, J), FiltrationTree(K, T)


def unit_density(domain, cells=4):
    grid = CellGrid(domain, (cells,))
    return ActuatorDensity.constant(grid, 1.0)


def zero_control(tree, J, collapsed=True):
    rows = lambda k: 1 if collapsed else 2**k
    return AdaptedField(tree, [np.zeros((rows(k), J)) for k in range(tree.steps + 1)])


def test_forward_free_decay_first_mode():
    domain, basis, tree = make_setup(K=8, J=3)
    a = NoiseCoefficient.zero(8)
    y0 = np.array([1.0, 0.0, 0.0])
    traj = forward_solve(y0, None, unit_density(domain), a, tree, basis)
    dt = tree.dt
    assert traj.terminal[0, 0] == pytest.approx((1 + dt) ** -8, rel=1e-14)
    # converges toward e^{-T}
    assert abs(traj.terminal[0, 0] - np.exp(-1.0)) < 0.1


def test_forward_noise_has_zero_mean_effect():
    domain, basis, tree = make_setup()
    a = NoiseCoefficient([0.8, -1.2, 0.5, 2.0, -0.3])
    y0 = np.array([1.0, 0.5, 0.0, -0.2])
    free = forward_solve(y0, None, unit_density(domain), NoiseCoefficient.zero(5), tree, basis)
    noisy = forward_solve(y0, None, unit_density(domain), a, tree, basis)
    mean_noisy = np.mean(noisy.terminal, axis=0)
    assert np.allclose(mean_noisy, free.terminal[0], atol=1e-13)


def test_forward_zero_stays_zero():
    domain, basis, tree = make_setup()
    a = NoiseCoefficient([1.0] * 5)
    traj = forward_solve(np.zeros(4), zero_control(tree, 4), unit_density(domain), a, tree, basis)
    assert all(np.all(lv == 0.0) for lv in traj.y.levels)


def test_adjoint_deterministic_terminal_closed_form():
    domain, basis, tree = make_setup(K=6, J=3)
    a = NoiseCoefficient([0.7] * 6)  # martingale part vanishes regardless of a
    c = 2.5
    eta = sample_terminal(0, {"kind": "deterministic", "coeffs": [0.0, c, 0.0]}, tree, 3)
    adj = adjoint_solve(eta, a, tree, basis)
    dt = tree.dt
    lam2 = basis.eigenvalues[1]
    for k in range(7):
        want = (1 + dt * lam2) ** -(6 - k) * c
        assert adj.z.levels[k][0, 1] == pytest.approx(want, rel=1e-14)
    for d in adj.Zproc.levels:
        assert np.all(d == 0.0)


def test_adjoint_linearity():
    domain, basis, tree = make_setup()
    rng = np.random.default_rng(3)
    a = NoiseCoefficient(rng.uniform(-1, 1, 5))
    e1 = TerminalData(tree, rng.standard_normal((32, 4)))
    e2 = TerminalData(tree, rng.standard_normal((32, 4)))
    both = TerminalData(tree, e1.values + e2.values)
    z1 = adjoint_solve(e1, a, tree, basis).z
    z2 = adjoint_solve(e2, a, tree, basis).z
    z12 = adjoint_solve(both, a, tree, basis).z
    for k in range(6):
        assert np.allclose(z12.levels[k], z1.levels[k] + z2.levels[k], atol=1e-12)


def test_martingale_part_reconstructs_increments():
    domain, basis, tree = make_setup()
    rng = np.random.default_rng(5)
    a = NoiseCoefficient(rng.uniform(-2, 2, 5))
    eta = TerminalData(tree, rng.standard_normal((32, 4)))
    adj = adjoint_solve(eta, a, tree, basis)
    sq = np.sqrt(tree.dt)
    for k in range(tree.steps):
        z_next = adj.z.levels[k + 1]
        m = 0.5 * (z_next[1::2] + z_next[0::2])
        scale = np.max(np.abs(z_next)) + 1e-300
        # z_{k+1} - E_k[z_{k+1}] = (+-sqrt(dt)) Z_k up to round-off
        assert np.max(np.abs(z_next[1::2] - m - sq * adj.Zproc.levels[k])) < 1e-14 * scale
        assert np.max(np.abs(z_next[0::2] - m + sq * adj.Zproc.levels[k])) < 1e-14 * scale


def test_brownian_terminal_matches_closed_form_and_lattice():
    domain, basis, tree = make_setup(K=8, J=1)
    a = NoiseCoefficient([1.0] * 4 + [0.5] * 4)
    eta = sample_terminal(0, {"kind": "brownian", "mode": 0}, tree, 1)
    adj = adjoint_solve(eta, a, tree, basis)
    lattice = brownian_lattice_adjoint(tree, basis.eigenvalues[0], a)
    dt = tree.dt
    a_vals = a.for_tree(tree)
    worst = 0.0
    for k in range(tree.steps + 1):
        w = increment_sums(tree, k)
        ups = np.round((w / np.sqrt(dt) + k) / 2).astype(int)
        # tree values equal the lattice reduction exactly
        assert np.allclose(adj.z.levels[k][:, 0], lattice[k][ups], atol=1e-13)
        tail = np.sum(a_vals[k:]) * dt
        exact = np.exp(-basis.eigenvalues[0] * (1.0 - k * dt)) * (w + tail)
        worst = max(worst, np.max(np.abs(adj.z.levels[k][:, 0] - exact)))
    assert worst < 0.2  # O(dt) at K = 8; the convergence rate test is in acceptance


def test_adjoint_consistency_rate_deterministic():
    # max-node error vs the continuum formula halves as K doubles
    errs = []
    for K in (4, 8, 16):
        domain, basis, tree = make_setup(K=K, J=2)
        a = NoiseCoefficient.zero(K)
        eta = sample_terminal(0, {"kind": "deterministic", "coeffs": [1.0, 0.0]}, tree, 2)
        adj = adjoint_solve(eta, a, tree, basis)
        times = tree.times()
        err = max(
            abs(adj.z.levels[k][0, 0] - np.exp(-(1.0 - times[k])))
            for k in range(K + 1)
        )
        errs.append(err)
    for a_, b_ in zip(errs, errs[1:]):
        assert 1.7 <= a_ / b_ <= 2.3


def test_duality_reduces_for_zero_control():
    domain, basis, tree = make_setup()
    a = NoiseCoefficient.zero(5)
    density = unit_density(domain)
    eta = sample_terminal(0, {"kind": "deterministic", "coeffs": [1.0, -2.0, 0.5, 0.0]}, tree, 4)
    y0 = np.array([0.3, 0.1, -0.7, 0.2])
    pairing, initial, terminal = duality_terms(
        y0, zero_control(tree, 4), density, a, eta, tree, basis
    )
    assert pairing == 0.0
    assert initial == pytest.approx(terminal, rel=1e-14)


def test_duality_scaling_in_control():
    domain, basis, tree = make_setup()
    rng = np.random.default_rng(11)
    a = NoiseCoefficient(rng.uniform(-1, 1, 5))
    grid = CellGrid(domain, (4,))
    density = project_onto_theta(rng.uniform(0, 1, 4), 0.5, grid)
    control = AdaptedField(tree, [rng.standard_normal((2**k, 4)) for k in range(6)])
    eta = TerminalData(tree, rng.standard_normal((32, 4)))
    y0 = rng.standard_normal(4)
    p1, _, _ = duality_terms(y0, control, density, a, eta, tree, basis)
    p3, _, _ = duality_terms(y0, control.scaled(3.0), density, a, eta, tree, basis)
    assert p3 == pytest.approx(3.0 * p1, rel=1e-12)


def test_duality_identity_random_tuples():
    domain, basis, tree = make_setup(K=6, J=4)
    grid = CellGrid(domain, (4,))
    rng = np.random.default_rng(17)
    for _ in range(25):
        a = NoiseCoefficient(rng.uniform(-2, 2, 6))
        density = project_onto_theta(rng.uniform(0, 1, 4), 0.5, grid)
        control = AdaptedField(tree, [rng.standard_normal((2**k, 4)) for k in range(7)])
        eta = TerminalData(tree, rng.standard_normal((64, 4)))
        y0 = rng.standard_normal(4)
        terms = duality_terms(y0, control, density, a, eta, tree, basis)
        scale = sum(abs(t) for t in terms)
        gap = duality_identity(y0, control, density, a, eta, tree, basis)
        assert gap <= 1e-12 * scale


def test_corrupted_adjoint_breaks_duality():
    domain, basis, tree = make_setup()
    rng = np.random.default_rng(23)
    a = NoiseCoefficient.zero(5)
    density = unit_density(domain)
    control = AdaptedField(tree, [rng.standard_normal((2**k, 4)) for k in range(6)])
    eta = TerminalData(tree, rng.standard_normal((32, 4)))
    y0 = rng.standard_normal(4)
    terms = duality_terms(y0, control, density, a, eta, tree, basis)
    scale = sum(abs(t) for t in terms)
    gap = duality_identity(y0, control, density, a, eta, tree, basis, corruption=1.01)
    assert gap > 1e-6 * scale


def test_mode_decoupling_with_identity_multiplier():
    domain, basis, tree = make_setup()
    a = NoiseCoefficient([0.9] * 5)
    density = unit_density(domain)  # theta = 1 everywhere -> B = identity
    rng = np.random.default_rng(29)
    levels = [np.zeros((2**k, 4)) for k in range(6)]
    for k in range(1, 6):
        levels[k][:, 0] = rng.standard_normal(2**k)
    control = AdaptedField(tree, levels)
    y0 = np.array([1.0, 0.0, 0.0, 0.0])
    traj = forward_solve(y0, control, density, a, tree, basis)
    for lv in traj.y.levels:
        assert np.max(np.abs(lv[:, 1:])) < 1e-14 * max(np.max(np.abs(lv)), 1.0)
