import numpy as np
import pytest

from stochheat import (
    AdaptedField,
    FiltrationTree,
    InvalidConfigError,
    NoiseCoefficient,
    TimeWindow,
    conditional_expectation,
    expected_norm_sq,
    sample_terminal,
)
from stochheat.tree import increment_sums


def brownian_field(tree):
    """Accumulated-increment field W_{t_k} on mode 0."""
    levels = []
    for k in range(tree.steps + 1):
        w = increment_sums(tree, k)
        levels.append(w[:, None])
    return AdaptedField(tree, levels)


def test_tree_shape():
    tree = FiltrationTree(4, 2.0)
    assert tree.n_leaves == 16
    assert tree.dt == 0.5
    assert np.allclose(tree.times(), [0, 0.5, 1.0, 1.5, 2.0])


def test_conditional_expectation_constant():
    tree = FiltrationTree(3, 1.0)
    field = AdaptedField(tree, [np.full((2**k, 2), 3.5) for k in range(4)])
    out = conditional_expectation(field, 1)
    assert np.allclose(out.levels[1], 3.5)


def test_conditional_expectation_martingale_mean():
    tree = FiltrationTree(1, 1.0)
    field = AdaptedField(tree, [np.zeros((1, 1)), np.array([[-1.0], [1.0]])])
    out = conditional_expectation(field, 0)
    assert out.levels[0][0, 0] == 0.0


def test_tower_property_exact():
    rng = np.random.default_rng(0)
    tree = FiltrationTree(4, 1.0)
    field = AdaptedField(tree, [rng.standard_normal((2**k, 3)) for k in range(5)])
    once = conditional_expectation(field, 1)
    twice = conditional_expectation(conditional_expectation(field, 2), 1)
    assert np.array_equal(once.levels[1], twice.levels[1])


def test_increment_field_is_martingale():
    tree = FiltrationTree(5, 1.0)
    field = brownian_field(tree)
    for k in range(tree.steps):
        ce = conditional_expectation(field, k)
        assert np.allclose(ce.levels[k], field.levels[k], atol=1e-14)


def test_brownian_second_moment_exact():
    tree = FiltrationTree(7, 1.3)
    w = increment_sums(tree, tree.steps)
    assert abs(np.mean(w**2) - tree.horizon) < 1e-12


def test_expected_norm_sq_basic():
    tree = FiltrationTree(3, 1.0)
    v = np.array([1.0, 2.0])
    field = AdaptedField(tree, [np.tile(v, (2**k, 1)) for k in range(4)])
    eye = np.eye(2)
    assert expected_norm_sq(field, 3, eye) == pytest.approx(5.0)
    scaled = field.scaled(3.0)
    assert expected_norm_sq(scaled, 3, eye) == pytest.approx(45.0)
    zero = field.scaled(0.0)
    assert expected_norm_sq(zero, 2, eye) == 0.0


def test_sample_terminal_deterministic_and_brownian():
    tree = FiltrationTree(1, 1.0)
    det = sample_terminal(0, {"kind": "deterministic", "coeffs": [2.0, 0.0]}, tree, 2)
    assert det.collapsed and np.array_equal(det.values, [[2.0, 0.0]])
    bro = sample_terminal(0, {"kind": "brownian", "mode": 0}, tree, 2)
    assert sorted(bro.values[:, 0]) == pytest.approx([-1.0, 1.0])
    assert np.all(bro.values[:, 1] == 0.0)


def test_sample_terminal_seed_determinism():
    tree = FiltrationTree(6, 1.0)
    one = sample_terminal(42, {"kind": "gaussian"}, tree, 3)
    two = sample_terminal(42, {"kind": "gaussian"}, tree, 3)
    assert np.array_equal(one.values, two.values)
    with pytest.raises(InvalidConfigError):
        sample_terminal(0, {"kind": "cauchy"}, tree, 3)


def test_gaussian_norm_concentrates():
    tree = FiltrationTree(10, 1.0)
    J = 4
    eta = sample_terminal(7, {"kind": "gaussian"}, tree, J)
    field = AdaptedField(
        tree, [np.zeros((2**k, J)) for k in range(tree.steps)] + [eta.values]
    )
    mean = expected_norm_sq(field, tree.steps, np.eye(J))
    stderr = np.sqrt(2.0 * J / tree.n_leaves)
    assert abs(mean - J) <= 5.0 * stderr


def test_window_mask_uses_left_endpoints():
    tree = FiltrationTree(4, 1.0)
    window = TimeWindow(((0.5, 1.0),))
    # steps start at t = 0, .25, .5, .75; the last two are inside
    assert list(window.step_mask(tree)) == [False, False, True, True]
    assert window.measure == 0.5
    assert window.intersect_measure(0.4, 0.6) == pytest.approx(0.1)


def test_window_validation():
    with pytest.raises(InvalidConfigError):
        TimeWindow(((0.5, 0.5),))
    with pytest.raises(InvalidConfigError):
        TimeWindow(((0.0, 0.6), (0.5, 1.0)))


def test_noise_tau():
    a = NoiseCoefficient([0.5, -2.0, 1.0])
    assert a.tau == 4.0
    assert not a.is_zero
    assert NoiseCoefficient.zero(3).is_zero


def test_adapted_field_shape_checks():
    tree = FiltrationTree(2, 1.0)
    with pytest.raises(InvalidConfigError):
        AdaptedField(tree, [np.zeros((1, 2)), np.zeros((3, 2))])
