import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochheat import (
    BoxDomain,
    DegenerateObservationError,
    InvalidConfigError,
    InvalidRegionError,
    Region,
    build_basis,
    full_region,
    gram,
    spectral_inequality_constant,
    spectral_project,
)
from stochheat.spectral import spectral_certificate


def test_eigenvalues_1d_pi():
    basis = build_basis(BoxDomain((np.pi,)), 3)
    assert np.allclose(basis.eigenvalues, [1.0, 4.0, 9.0])


def test_eigenvalues_1d_unit():
    basis = build_basis(BoxDomain((1.0,)), 2)
    assert np.allclose(basis.eigenvalues, [np.pi**2, 4 * np.pi**2])


def test_eigenvalues_2d_square():
    basis = build_basis(BoxDomain((np.pi, np.pi)), 4)
    assert np.allclose(basis.eigenvalues, [2.0, 5.0, 5.0, 8.0])
    # lexicographic tie break: (1,2) before (2,1)
    assert basis.modes[1] == (1, 2)
    assert basis.modes[2] == (2, 1)


@pytest.mark.parametrize("lengths,count", [((np.pi,), 64), ((1.7,), 33), ((np.pi, 2.0), 36)])
def test_orthonormality_full_domain(lengths, count):
    domain = BoxDomain(lengths)
    basis = build_basis(domain, count)
    entries = gram(basis, full_region(domain)).entries
    assert np.max(np.abs(entries - np.eye(count))) < 1e-12


def test_gram_half_interval_first_mode():
    # (2/pi) * integral_0^{pi/2} sin^2 x dx = 1/2
    domain = BoxDomain((np.pi,))
    basis = build_basis(domain, 1)
    entries = gram(basis, Region(domain, (((0.0, np.pi / 2),),))).entries
    assert abs(entries[0, 0] - 0.5) < 1e-14


@settings(max_examples=40, deadline=None)
@given(
    cut=st.floats(0.3, 2.8),
    lo=st.floats(0.0, 0.25),
    hi=st.floats(2.9, np.pi),
)
def test_gram_additive_over_disjoint_boxes(cut, lo, hi):
    domain = BoxDomain((np.pi,))
    basis = build_basis(domain, 6)
    left = Region(domain, (((lo, cut),),))
    right = Region(domain, (((cut, hi),),))
    union = Region(domain, (((lo, cut),), ((cut, hi),)))
    total = gram(basis, left).entries + gram(basis, right).entries
    assert np.max(np.abs(total - gram(basis, union).entries)) < 1e-14


def test_gram_2d_tensor_product():
    domain = BoxDomain((np.pi, 2.0))
    basis = build_basis(domain, 5)
    box = ((0.3, 1.1), (0.5, 1.7))
    entries = gram(basis, Region(domain, (box,))).entries
    bx = build_basis(BoxDomain((np.pi,)), max(m[0] for m in basis.modes))
    by = build_basis(BoxDomain((2.0,)), max(m[1] for m in basis.modes))
    gx = gram(bx, Region(BoxDomain((np.pi,)), ((box[0],),))).entries
    gy = gram(by, Region(BoxDomain((2.0,)), ((box[1],),))).entries
    for i, mi in enumerate(basis.modes):
        for j, mj in enumerate(basis.modes):
            want = gx[mi[0] - 1, mj[0] - 1] * gy[mi[1] - 1, mj[1] - 1]
            assert abs(entries[i, j] - want) < 1e-13


def test_spectral_project_partition_and_orthogonality():
    basis = build_basis(BoxDomain((np.pi,)), 3)
    coeffs = np.array([1.0, 1.0, 1.0])
    low, high = spectral_project(coeffs, basis, 5.0)
    assert np.array_equal(low, [1.0, 1.0, 0.0])
    assert np.array_equal(high, [0.0, 0.0, 1.0])
    assert np.array_equal(low + high, coeffs)
    assert low @ high == 0.0
    low, high = spectral_project(coeffs, basis, 0.5)
    assert np.array_equal(low, np.zeros(3)) and np.array_equal(high, coeffs)
    low, high = spectral_project(coeffs, basis, 9.0)
    assert np.array_equal(low, coeffs) and np.array_equal(high, np.zeros(3))


def test_spectral_constant_full_domain_is_one():
    domain = BoxDomain((np.pi,))
    basis = build_basis(domain, 8)
    assert abs(spectral_inequality_constant(basis, full_region(domain), 100.0) - 1.0) < 1e-10


def test_spectral_constant_half_domain_single_mode():
    domain = BoxDomain((np.pi,))
    basis = build_basis(domain, 4)
    region = Region(domain, (((0.0, np.pi / 2),),))
    assert abs(spectral_inequality_constant(basis, region, 2.0) - 2.0) < 1e-12


def test_spectral_constant_monotone_in_region():
    domain = BoxDomain((np.pi,))
    basis = build_basis(domain, 8)
    small = Region(domain, (((0.4, 1.8),),))
    big = Region(domain, (((0.4, 1.8),), ((2.0, 2.8),)))
    for lam in (1.0, 10.0, 40.0, 64.0):
        assert spectral_inequality_constant(basis, big, lam) <= spectral_inequality_constant(
            basis, small, lam
        ) * (1 + 1e-12)


def test_spectral_certificate_reports_finite_bound():
    domain = BoxDomain((np.pi,))
    basis = build_basis(domain, 10)
    region = Region(domain, (((0.4, 1.5),),))
    rows = spectral_certificate(basis, region, basis.eigenvalues)
    bound = max(r[2] for r in rows)
    assert np.isfinite(bound) and bound > 0.0


def test_degenerate_region_raises_with_diagnostic():
    domain = BoxDomain((np.pi,))
    basis = build_basis(domain, 24)
    region = Region(domain, (((1.0, 1.0 + 1e-9),),))
    with pytest.raises(DegenerateObservationError) as err:
        spectral_inequality_constant(basis, region, basis.eigenvalues[-1])
    assert err.value.mu_min is not None


def test_invalid_configs_rejected():
    with pytest.raises(InvalidConfigError):
        build_basis(BoxDomain((np.pi,)), 0)
    with pytest.raises(InvalidConfigError):
        BoxDomain((0.0,))
    with pytest.raises(InvalidConfigError):
        BoxDomain((1.0, 1.0, 1.0))
    domain = BoxDomain((np.pi,))
    with pytest.raises(InvalidRegionError):
        Region(domain, (((0.0, 4.0),),))  # escapes the domain
    with pytest.raises(InvalidRegionError):
        Region(domain, (((0.0, 2.0),), ((1.0, 3.0),)))  # overlap
    with pytest.raises(InvalidConfigError):
        spectral_inequality_constant(build_basis(domain, 2), full_region(domain), 0.5)
