import numpy as np
import pytest

from hlcurrents.currents import (HORIZONTAL, VERTICAL, GridSpec, PotentialField, ddc,
                                 smooth_horizontal, smooth_vertical)
from hlcurrents.domain_maps import Bidisk
from hlcurrents.intersection import wedge_regularized, wedge_smooth

from oracles import WEDGE_UNIT_BIDISK, wedge_unit_bidisk_symbolic


def _norm2(grid, orientation):
    return PotentialField.from_function(lambda z, w: np.abs(z) ** 2 + np.abs(w) ** 2, grid, orientation)


def test_symbolic_oracle_is_frozen():
    assert wedge_unit_bidisk_symbolic() == pytest.approx(WEDGE_UNIT_BIDISK, abs=1e-12)


def test_wedge_of_reference_forms_on_unit_bidisk():
    g = GridSpec(Bidisk(1.25, 1.25), 32)
    res = wedge_smooth(ddc(_norm2(g, VERTICAL)), ddc(_norm2(g, HORIZONTAL)), region=g.region_weights(1, 1))
    assert res.mass == pytest.approx(WEDGE_UNIT_BIDISK, rel=1e-3)
    assert res.negative_cells == 0


def test_wedge_with_zero_form_vanishes(grid24):
    R = ddc(_norm2(grid24, VERTICAL))
    S = ddc(PotentialField(np.zeros(grid24.shape), grid24, HORIZONTAL))
    assert wedge_smooth(R, S).mass == 0.0


def test_wedge_is_bilinear(D, grid24):
    R1 = ddc(smooth_vertical(0.2, D, 1.0, 24))
    R2 = ddc(smooth_vertical(-0.5j, D, 1.3, 24))
    S = ddc(smooth_horizontal(0.1, D, 1.0, 24))
    lhs = wedge_smooth(R1 + R2.scaled(2.0), S).density
    rhs = wedge_smooth(R1, S).density + 2 * wedge_smooth(R2, S).density
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_wedge_rejects_equal_orientations(grid24):
    R = ddc(_norm2(grid24, VERTICAL))
    with pytest.raises(ValueError):
        wedge_smooth(R, R)


def test_smoothed_lines_meet_in_unit_mass(D):
    a, b = 0.3 - 0.2j, -0.4j
    res = wedge_smooth(ddc(smooth_vertical(a, D, 1.0, 32)), ddc(smooth_horizontal(b, D, 1.0, 32)))
    assert res.mass == pytest.approx(1.0, abs=5e-3)
    # degree-1 exponents are ordered (w, z)
    np.testing.assert_allclose(res.moments(1), [b, a], atol=5e-3)


def test_regularized_wedge_schedule(D):
    R = smooth_vertical(0.1, D, 1.0, 24)
    S = smooth_horizontal(0.0, D, 1.0, 24)
    res = wedge_regularized(R, S, schedule=(0.4, 0.2), route="R")
    assert len(res.stages) == 2
    assert res.mass == pytest.approx(1.0, abs=1e-2)
    assert res.stages[1]["distance"] is not None


def test_regularized_wedge_rejects_unknown_route(D):
    R = smooth_vertical(0.1, D, 1.0, 24)
    S = smooth_horizontal(0.0, D, 1.0, 24)
    with pytest.raises(ValueError):
        wedge_regularized(R, S, route="neither")
