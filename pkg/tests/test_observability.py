import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochheat import (
    ActuatorDensity,
    BoxDomain,
    CellGrid,
    FiltrationTree,
    InvalidConfigError,
    NoiseCoefficient,
    Region,
    TerminalData,
    TimeWindow,
    build_basis,
    build_telescoping,
    check_decay,
    check_interpolation,
    full_region,
    l1_observability_constant,
    l2_observability_constant,
    level_set_bound,
    project_onto_theta,
    sample_terminal,
)


def setup(K=5, J=4):
    domain = BoxDomain((np.pi,))
    return domain, build_basis(domain, J), FiltrationTree(K, 1.0)


# ---------------------------------------------------------------- decay
def test_decay_pure_high_mode_strict_margin():
    domain, basis, tree = setup(K=8, J=4)
    a = NoiseCoefficient.zero(8)
    eta = sample_terminal(0, {"kind": "deterministic", "coeffs": [0, 0, 0, 1.0]}, tree, 4)
    lam_j = basis.eigenvalues[3]
    assert check_decay(eta, lam_j - 1.0, a, tree, basis) > 0.0


def test_decay_low_frequency_terminal():
    domain, basis, tree = setup()
    a = NoiseCoefficient([1.5] * 5)
    eta = sample_terminal(0, {"kind": "deterministic", "coeffs": [2.0, 0, 0, 0]}, tree, 4)
    # cutoff above every eigenvalue: projection is zero, z = 0
    margin = check_decay(eta, basis.eigenvalues[-1] + 1.0, a, tree, basis)
    eta_energy = 4.0
    assert margin > 0.0
    assert margin <= eta_energy * np.max(
        (1.0 + a.values**2 * tree.dt).cumprod()
    ) * (1 + 1e-12)


def test_decay_lambda_zero_nonexpansive():
    domain, basis, tree = setup()
    rng = np.random.default_rng(0)
    a = NoiseCoefficient.zero(5)
    eta = TerminalData(tree, rng.standard_normal((32, 4)))
    assert check_decay(eta, 0.0, a, tree, basis) >= 0.0


def test_decay_margin_nonnegative_random():
    domain, basis, tree = setup(K=6, J=6)
    rng = np.random.default_rng(1)
    lam_max = basis.eigenvalues[-1]
    for _ in range(100):
        a = NoiseCoefficient(rng.uniform(-2, 2, 6))
        eta = TerminalData(tree, rng.standard_normal((64, 6)))
        lam = rng.uniform(0.0, lam_max)
        assert check_decay(eta, lam, a, tree, basis) >= -1e-12


# ---------------------------------------------------------- interpolation
def test_interpolation_full_domain_small_constant():
    domain, basis, tree = setup()
    a = NoiseCoefficient.zero(5)
    rng = np.random.default_rng(2)
    eta = TerminalData(tree, rng.standard_normal((32, 4)))
    k = check_interpolation(eta, full_region(domain), 2, a, tree, basis)
    assert 0.0 <= k <= 1.0


def test_interpolation_zero_terminal():
    domain, basis, tree = setup()
    a = NoiseCoefficient.zero(5)
    eta = TerminalData(tree, np.zeros((1, 4)))
    assert check_interpolation(eta, full_region(domain), 1, a, tree, basis) == 0.0


def test_interpolation_is_smallest_constant():
    domain, basis, tree = setup(K=6, J=4)
    a = NoiseCoefficient.zero(6)
    region = Region(domain, (((0.0, np.pi / 2),),))
    eta = sample_terminal(0, {"kind": "deterministic", "coeffs": [1.0, 0, 0, 0]}, tree, 4)
    t_index = 3
    k = check_interpolation(eta, region, t_index, a, tree, basis)
    from stochheat.dynamics import backward_sweep, level_energies
    from stochheat.spectral import gram

    z_levels, _ = backward_sweep(tree, basis, eta.values, a)
    A = level_energies(z_levels, np.eye(4), tree)[t_index]
    R = np.sqrt(level_energies(z_levels, gram(basis, region).entries, tree)[t_index]) * np.sqrt(1.0)
    gap = 1.0 - tree.times()[t_index]
    # holds at k, fails just below
    assert k * np.exp(k / gap) * R >= A * (1 - 1e-9)
    k_low = 0.999 * k
    assert k_low * np.exp(k_low / gap) * R < A


def test_interpolation_requires_interior_time():
    domain, basis, tree = setup()
    a = NoiseCoefficient.zero(5)
    eta = TerminalData(tree, np.ones((1, 4)))
    with pytest.raises(InvalidConfigError):
        check_interpolation(eta, full_region(domain), tree.steps, a, tree, basis)


# ------------------------------------------------------------------- c_l2
def scalar_l2_closed_form(K, T=1.0, lam=1.0):
    dt = T / K
    S = 1.0 / (1.0 + dt * lam)
    return S ** (2 * K) / (dt * np.sum(S ** (2 * np.arange(K))))


def test_l2_scalar_closed_form_K16():
    domain = BoxDomain((np.pi,))
    basis = build_basis(domain, 1)
    tree = FiltrationTree(16, 1.0)
    a = NoiseCoefficient.zero(16)
    c = l2_observability_constant(full_region(domain), TimeWindow.full(1.0), a, tree, basis)
    assert c == pytest.approx(scalar_l2_closed_form(16), rel=1e-12)


def test_l2_weight_scaling():
    domain, basis, tree = setup()
    a = NoiseCoefficient([0.8] * 5)
    win = TimeWindow.full(1.0)
    W = np.diag([1.0, 0.5, 0.25, 2.0])
    c1 = l2_observability_constant(W, win, a, tree, basis)
    c4 = l2_observability_constant(4.0 * W, win, a, tree, basis)
    assert c4 == pytest.approx(c1 / 4.0, rel=1e-12)


def test_l2_monotone_in_region_and_window():
    domain, basis, tree = setup(K=4, J=3)
    a = NoiseCoefficient([1.0] * 4)
    win = TimeWindow.full(1.0)
    small = Region(domain, (((0.5, 1.5),),))
    big = Region(domain, (((0.5, 1.5),), ((2.0, 3.0),)))
    assert l2_observability_constant(big, win, a, tree, basis) <= l2_observability_constant(
        small, win, a, tree, basis
    ) * (1 + 1e-10)
    part = TimeWindow(((0.5, 1.0),))
    assert l2_observability_constant(
        full_region(domain), win, a, tree, basis
    ) <= l2_observability_constant(full_region(domain), part, a, tree, basis) * (1 + 1e-10)


def test_l2_power_iteration_matches_dense():
    domain, basis, tree = setup(K=4, J=4)  # eta-dim 64
    a = NoiseCoefficient([0.7, -1.1, 0.4, 1.3])
    win = TimeWindow(((0.25, 1.0),))
    region = Region(domain, (((0.3, 2.2),),))
    dense = l2_observability_constant(region, win, a, tree, basis, method="dense")
    power = l2_observability_constant(region, win, a, tree, basis, method="cg", tol=1e-10)
    assert power == pytest.approx(dense, rel=1e-6)


# ------------------------------------------------------------------- c_l1
def test_l1_scalar_sampling_is_exact():
    domain = BoxDomain((np.pi,))
    basis = build_basis(domain, 1)
    tree = FiltrationTree(8, 1.0)
    a = NoiseCoefficient.zero(8)
    win = TimeWindow.full(1.0)
    c = l1_observability_constant(
        full_region(domain), win, a, tree, basis, restarts=2, seed=0, ascent_steps=5
    )
    # collapsed scalar case: ratio is the same for every nonzero eta
    dt = tree.dt
    S = 1.0 / (1.0 + dt)
    z = S ** (8 - np.arange(9))
    denom = np.sum(dt * np.abs(z[1:])) ** 2
    assert c == pytest.approx(z[0] ** 2 / denom, rel=1e-12)


def test_l1_monotone_under_region_inclusion_sampling():
    domain, basis, tree = setup(K=4, J=3)
    a = NoiseCoefficient([0.9] * 4)
    win = TimeWindow.full(1.0)
    small = Region(domain, (((0.4, 1.2),),))
    big = Region(domain, (((0.4, 1.2),), ((1.8, 2.6),)))
    # pure sampling with shared seed: pointwise-monotone ratios
    kw = dict(restarts=0, seed=123, ascent_steps=0, samples=64)
    c_small = l1_observability_constant(small, win, a, tree, basis, **kw)
    c_big = l1_observability_constant(big, win, a, tree, basis, **kw)
    assert c_big <= c_small * (1 + 1e-12)


# ------------------------------------------------------------ telescoping
def test_telescoping_example_values():
    seq = build_telescoping(0.0, 0.5, 0.5, length=8)
    assert seq.ratio == pytest.approx(2.0 / 3.0)
    assert seq.ell[0] == pytest.approx(0.5)
    assert seq.ell[1] == pytest.approx(1.0 / 3.0)
    assert seq.ell[2] == pytest.approx(2.0 / 9.0)


def test_telescoping_gap_ratio_exact():
    seq = build_telescoping(0.1, 0.9, 1.7, length=20)
    gaps = seq.gaps
    for g0, g1 in zip(gaps, gaps[1:]):
        assert g1 / g0 == pytest.approx(seq.ratio, rel=1e-13)
    # decreasing toward the anchor
    assert np.all(np.diff(seq.ell) < 0)
    assert seq.ell[-1] > seq.anchor


def test_telescoping_tau_sits_inside_gap():
    seq = build_telescoping(0.0, 0.5, 0.5, length=10)
    gaps = seq.gaps
    assert np.all(seq.tau > seq.ell[1:])
    assert np.all(seq.tau < seq.ell[:-1])
    assert np.allclose(seq.ell[:-1] - seq.tau, (5.0 / 6.0) * gaps, rtol=1e-13)


def test_telescoping_full_window_density():
    # for E = [0, T] the one-third density requirement holds trivially
    seq = build_telescoping(0.05, 0.6, 1.0, length=12)
    window = TimeWindow.full(1.0)
    for lo, hi, gap in zip(seq.ell[1:], seq.ell[:-1], seq.gaps):
        assert window.intersect_measure(lo, hi) >= gap / 3.0 - 1e-15


def test_telescoping_invalid_anchor():
    with pytest.raises(InvalidConfigError):
        build_telescoping(0.7, 0.5, 1.0)


# ---------------------------------------------------------- level sets
def test_level_set_indicator_density():
    domain = BoxDomain((np.pi,))
    grid = CellGrid(domain, (8,))
    dens = ActuatorDensity.indicator(grid, [1, 4])
    alpha = dens.alpha
    measure, bound, ok = level_set_bound(dens, alpha)
    assert ok
    assert measure == pytest.approx(alpha * domain.volume)


def test_level_set_constant_density():
    domain = BoxDomain((np.pi,))
    grid = CellGrid(domain, (8,))
    dens = ActuatorDensity.constant(grid, 0.3)
    measure, bound, ok = level_set_bound(dens, 0.3)
    assert ok and measure == pytest.approx(domain.volume)


@settings(max_examples=60, deadline=None)
@given(
    raw=st.lists(st.floats(0.0, 1.0), min_size=8, max_size=8),
    alpha=st.floats(0.05, 0.95),
)
def test_level_set_bound_random_densities(raw, alpha):
    domain = BoxDomain((np.pi,))
    grid = CellGrid(domain, (8,))
    dens = project_onto_theta(np.array(raw), alpha, grid)
    _, _, ok = level_set_bound(dens, alpha)
    assert ok
