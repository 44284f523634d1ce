import numpy as np
import pytest
from hypothesis import given, strategies as st

from hlcurrents.currents import (HORIZONTAL, CoefficientForm, GridSpec, ddc, slice_mass,
                                 smooth_vertical, vertical_line, w_bump)
from hlcurrents.discs import (StructuralDiscSpec, disc_slice, domain_chain_bound, h_inverse, h_map,
                              hyperbolic_distance, kobayashi_chain_bound, reconstruct_potential_from_slices,
                              subharmonicity_check, swap_coordinates)
from hlcurrents.domain_maps import Bidisk

cst = st.complex_numbers(max_magnitude=2, allow_nan=False, allow_infinity=False)


@pytest.fixture(scope="module")
def spec():
    D = Bidisk()
    return StructuralDiscSpec(smooth_vertical(0.4, D, 1.0, 20))


@given(cst, cst, cst, cst, cst)
def test_h_map_round_trip(a, b, theta, z, w):
    if abs(theta) < 1e-3:
        return
    x = np.array([z, w])
    np.testing.assert_allclose(h_inverse(a, b, theta, h_map(a, b, theta, x)), x, atol=1e-9)


def test_h_map_endpoints():
    x = np.array([[0.3 + 0.1j, -0.2j], [1.0, 2.0]])
    np.testing.assert_allclose(h_map(0.5, 0.2j, 1.0, x), x)
    y = h_map(0.5, 0.2j, 0.0, x)
    np.testing.assert_allclose(y[:, 0], 0.5)
    np.testing.assert_allclose(y[:, 1], x[:, 1] - 0.2j)


def test_spec_rejects_horizontal_base(D):
    S = swap_coordinates(smooth_vertical(0.0, D, 1.0, 16))
    with pytest.raises(ValueError):
        StructuralDiscSpec(S)


def test_spec_rejects_kernel_outside_core(D):
    from hlcurrents.currents import SmoothingKernel
    with pytest.raises(ValueError):
        StructuralDiscSpec(smooth_vertical(0.0, D, 1.0, 16), center=(2.6, 0.0), kernel=SmoothingKernel(0.3))


def test_disc_slice_at_one_is_base(spec):
    U = disc_slice(spec, 1.0)
    assert np.abs(U.values - spec.base.values).max() < 1e-9


def test_disc_slice_at_zero_is_w_independent(spec):
    U = disc_slice(spec, 0.0)
    v = np.asarray(U.values)
    assert np.abs(v - v[:, :, :1, :1]).max() == 0.0
    assert slice_mass(U).mass == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("theta", [0.5, 0.3 + 0.2j])
def test_disc_slice_keeps_unit_mass(spec, theta):
    assert slice_mass(disc_slice(spec, theta)).mass == pytest.approx(1.0, abs=1e-4)


def test_disc_slice_rejects_theta_outside_domain(spec):
    with pytest.raises(ValueError):
        disc_slice(spec, 2.0)


def test_disc_pairing_is_subharmonic(spec):
    g = spec.grid
    chi = np.broadcast_to(w_bump(g, 1.5), g.shape)
    phi = CoefficientForm(np.zeros(g.shape), chi, np.zeros(g.shape, complex), g, HORIZONTAL)
    (rep,) = subharmonicity_check(spec, [phi], centers=[0.5], radii=[0.2], points=4)
    scale = max(abs(v) for v in rep.center_values.values())
    assert rep.worst_violation <= 1e-3 * scale


def test_hyperbolic_distance_properties():
    assert hyperbolic_distance(0.3, 0.3) == 0.0
    assert hyperbolic_distance(0.1j, 0.5) == pytest.approx(hyperbolic_distance(0.5, 0.1j))
    assert hyperbolic_distance(0.0, 0.5) == pytest.approx(np.arctanh(0.5))


def test_domain_chain_bound_dominates_direct_distance():
    b = domain_chain_bound(0.0, 1.0)
    assert np.isfinite(b) and b > 0
    assert domain_chain_bound(0.0, 0.5) < b


def test_chain_bound_of_identical_currents_is_zero(D):
    R = vertical_line(0.0, D, 16)
    rep = kobayashi_chain_bound(R, R)
    assert all(v == 0.0 for v in rep.bounds.values())


def test_ring_family_bound_matches_closed_form():
    rep = kobayashi_chain_bound(None, None, A_values=(2, 4), slice_grid=129)
    for A in (2, 4):
        assert rep.bounds[A] == pytest.approx(rep.analytic[A], rel=1e-3)
    assert rep.bounds[4] < rep.bounds[2]


def test_reconstruction_recovers_line_potential(D):
    R = vertical_line(0.0, D, 24)
    res = reconstruct_potential_from_slices(lambda t: R, [(1.0, 0.9 + 0.3j, 0.0)])
    assert res.values[0] == pytest.approx(np.log(abs(0.9 + 0.3j)), abs=5e-3)
    assert res.monotone
