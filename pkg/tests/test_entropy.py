import warnings

import numpy as np
import pytest

from hlcurrents.entropy import (bowen_ball_masses, bowen_measure_entropy, forward_orbits,
                                graph_volume_samples, lov_estimate, lov_volumes,
                                point_mass_entropy, separated_count, separated_entropy)
from hlcurrents.equilibrium import mu_points, saddle_point_mass

from oracles import GRAPH_VOLUME_STANDARD, graph_volume_standard


@pytest.fixture(scope="module")
def cloud(f):
    return mu_points(f, 0.1, 0.2j, 5)


@pytest.fixture(scope="module")
def orbits(f, cloud):
    return forward_orbits(f, cloud.shifted(3).points, 4)


def test_oracle_volume_is_frozen():
    assert graph_volume_standard() == pytest.approx(GRAPH_VOLUME_STANDARD, rel=1e-6)


def test_two_stage_graph_volume_matches_oracle(f):
    logs, rel = lov_volumes(f, 2, 200_000)
    assert np.exp(logs[1]) == pytest.approx(GRAPH_VOLUME_STANDARD, rel=2e-2)
    assert rel[1] < 1e-2
    # one stage is the volume of D_* itself
    assert np.exp(logs[0]) == pytest.approx((np.pi * 2.4**2) ** 2, rel=1e-12)


def test_large_epsilon_gives_one_set(orbits):
    assert separated_count(orbits, 4, 100.0) == 1


def test_separated_count_decreases_with_epsilon(orbits):
    counts = [separated_count(orbits, 4, e) for e in (0.2, 0.5, 1.0)]
    assert counts[0] > counts[1] > counts[2] >= 1


def test_separated_count_grows_with_n(orbits):
    counts = [separated_count(orbits, n, 0.5) for n in (1, 2, 3, 4)]
    assert all(a <= b for a, b in zip(counts, counts[1:]))


def test_separated_entropy_rejects_unknown_metric(f, cloud):
    with pytest.raises(ValueError):
        separated_entropy(f, cloud.measure, 4, 0.3, metric="sideways")


def test_point_mass_has_zero_rate(f):
    assert point_mass_entropy(saddle_point_mass(f).points[0], f, 6, 0.3) == pytest.approx(0.0, abs=1e-12)


def test_bowen_masses_shrink(f, cloud):
    masses, counts = bowen_ball_masses(cloud.shifted(3), f, 3, 0.5, centers=20)
    assert (np.diff(masses, axis=1) <= 1e-15).all()
    assert (counts[:, 0] >= 1).all()


def test_bowen_needs_enough_atoms(f, cloud):
    with pytest.raises(ValueError):
        bowen_measure_entropy(cloud.measure, f, 4, 0.3)


def test_long_graph_products_do_not_overflow(f):
    p = saddle_point_mass(f).points[0]
    z = np.array([p[0], 0.1 + 0j])
    w = np.array([p[1], 0.2j])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        out = graph_volume_samples(f, 12, z, w, 2.4, 2.4)
    assert np.isfinite(out[0]) and out[0] > 0
    assert out[1] == -np.inf


def test_lov_rate_near_log_degree(f):
    est = lov_estimate(f, 6, 100_000)
    assert abs(est.rate - np.log(2)) <= max(est.band, 0.05 * np.log(2))
    assert "high variance" not in est.flags
