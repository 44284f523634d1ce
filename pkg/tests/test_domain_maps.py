import numpy as np
import pytest
from hypothesis import given, strategies as st

from hlcurrents.domain_maps import (Bidisk, DegreeAmbiguityError, HenonLikeMap, HorizontalLikeError,
                                    MapSequence, check_horizontal_like, compose, count_vertical_preimages,
                                    dynamical_degree, eval_forward, eval_inverse, generic_parameters)

finite = st.floats(-2, 2, allow_nan=False)
points = st.tuples(finite, finite, finite, finite).map(lambda t: np.array([t[0] + 1j * t[1], t[2] + 1j * t[3]]))


def test_forward_fixed_point_and_substitution():
    g = HenonLikeMap([0, 0, 1], 1)
    np.testing.assert_array_equal(eval_forward(g, [0, 0]), [0, 0])
    np.testing.assert_array_equal(eval_forward(g, [1, 0]), [1, 1])


def test_inverse_examples():
    g = HenonLikeMap([0, 0, 1], 1)
    np.testing.assert_array_equal(eval_inverse(g, [0, 0]), [0, 0])
    np.testing.assert_array_equal(eval_inverse(g, [1, 1]), [1, 0])


def test_round_trip_on_random_points(rng):
    g = HenonLikeMap([-1, 0, 1], 0.3)
    x = rng.normal(size=(1000, 2)) + 1j * rng.normal(size=(1000, 2))
    y = eval_inverse(g, eval_forward(g, x))
    assert np.max(np.abs(y - x) / np.maximum(np.abs(x), 1)) < 1e-12


@given(points)
def test_round_trip_property(x):
    g = HenonLikeMap([-2, 0, 1], 0.1)
    y = eval_forward(g, eval_inverse(g, x))
    assert np.allclose(y, x, rtol=1e-12, atol=1e-12)


def test_standard_map_is_horizontal_like(f, D):
    rep = check_horizontal_like(f, D, 256)
    assert rep.passed
    assert rep.vertical_margin > 0 and rep.horizontal_margin > 0


def test_dominant_twist_fails():
    g = HenonLikeMap([0, 0, 1], 5)
    rep = check_horizontal_like(g, Bidisk(1.0, 1.0), 256)
    assert not rep.passed
    assert rep.offending_point is not None
    with pytest.raises(HorizontalLikeError):
        HenonLikeMap([0, 0, 1], 5, bidisk=Bidisk(1.0, 1.0))


def test_linear_polynomial_rejected():
    with pytest.raises(ValueError):
        HenonLikeMap([0, 1], 0.1)
    with pytest.raises(ValueError):
        HenonLikeMap([0, 0, 1], 0)


def test_boundary_samples_precondition(f, D):
    with pytest.raises(ValueError):
        check_horizontal_like(f, D, 50)


def test_bidisk_fraction_ordering():
    with pytest.raises(ValueError):
        Bidisk(3, 3, 0.95, 0.8, 0.9)
    with pytest.raises(ValueError):
        Bidisk(-1, 3)
    D = Bidisk()
    assert D.m_inner < D.m_star < D.m_radius


def _quadratic_root_count(c, a, b, twist, radius):
    # ζ² + c + twist·b = a
    r = np.roots([1, 0, c + twist * b - a])
    return int((np.abs(r) < radius).sum())


def test_degree_quadratic(D):
    g = HenonLikeMap([-1.0, 0, 1], 0.1)
    assert dynamical_degree(g, D, trials=30) == 2
    for a, b in generic_parameters(D, 5, seed=2):
        assert count_vertical_preimages(g, D, a, b).count == _quadratic_root_count(-1.0, a, b, 0.1, D.m_radius)


def test_degree_cubic():
    D3 = Bidisk(3.0, 3.0)
    g = HenonLikeMap([0, 0, 0, 1], 0.1)
    assert dynamical_degree(g, D3, trials=30) == 3


def test_degree_multiplicative(D):
    for coeffs in ([0, 0, 1], [-2, 0, 1], [-1, 0, 1]):
        g = HenonLikeMap(coeffs, 0.1)
        d1 = dynamical_degree(g, D, trials=20)
        d2 = dynamical_degree([g, g], D, trials=20)
        assert d2 == d1**2 == 4


def test_degree_ambiguity_reported(D, monkeypatch):
    import hlcurrents.domain_maps as dm
    counts = iter([2, 3] * 50)
    monkeypatch.setattr(dm, "degree_counts", lambda *a, **k: [next(counts) for _ in range(100)])
    with pytest.raises(DegreeAmbiguityError):
        dm.dynamical_degree(HenonLikeMap([-2, 0, 1], 0.1), D)


def test_compose_empty_prefix_is_identity():
    x = np.array([[0.3 + 0.1j, -0.2j]])
    c = compose([], x)
    np.testing.assert_array_equal(c.point, x)
    np.testing.assert_array_equal(c.jacobian[0], np.eye(2))


def test_compose_single_step_matches_forward_and_fd(f):
    x = np.array([0.4 - 0.3j, 0.7 + 0.2j])
    c = compose([f], x[None, :])
    np.testing.assert_allclose(c.point[0], eval_forward(f, x))
    h = 1e-7
    J = np.empty((2, 2), dtype=complex)
    for k in range(2):
        e = np.zeros(2, dtype=complex)
        e[k] = h
        J[:, k] = (eval_forward(f, x + e) - eval_forward(f, x - e)) / (2 * h)
    np.testing.assert_allclose(c.jacobian[0], J, atol=1e-6)


def test_compose_jacobian_is_product(f, rng):
    maps = [f, HenonLikeMap([-1, 0, 1], 0.2), f]
    x = 0.5 * (rng.normal(size=(20, 2)) + 1j * rng.normal(size=(20, 2)))
    c = compose(maps, x)
    pts = x.copy()
    J = np.broadcast_to(np.eye(2, dtype=complex), (20, 2, 2)).copy()
    for g in maps:
        J = g.jacobian(pts[:, 0], pts[:, 1]) @ J
        pts = np.stack(g.forward(pts[:, 0], pts[:, 1]), axis=-1)
    assert np.max(np.abs(c.jacobian - J) / np.abs(J).max()) < 1e-9


def test_escape_flag_and_doubling(f):
    x = np.array([[5.0 + 0j, 0j]])
    r = f.escape_radius(Bidisk())
    c = compose([f] * 6, x, escape_radius=r)
    assert c.escaped[0] and c.escape_index[0] >= 1
    z = 5.0 + 0j
    w = 0j
    logs = []
    for _ in range(4):
        z, w = f.forward(z, w)
        logs.append(np.log(abs(z)))
    ratios = np.array(logs[1:]) / np.array(logs[:-1])
    assert np.all(np.abs(ratios - 2) < 0.1)


def test_map_sequence_checks_members(D):
    with pytest.raises(HorizontalLikeError):
        MapSequence([HenonLikeMap([0, 0, 1], 5)], Bidisk(1.0, 1.0))
    seq = MapSequence.constant(HenonLikeMap([-2, 0, 1], 0.1), 3, D)
    assert len(seq) == 3 and seq.degrees == [2, 2, 2]


def test_generic_parameters_seeded(D):
    p1 = generic_parameters(D, 4, seed=9)
    p2 = generic_parameters(D, 4, seed=9)
    assert p1 == p2
    assert all(abs(a) < D.m_inner and abs(b) < D.n_inner for a, b in p1)
