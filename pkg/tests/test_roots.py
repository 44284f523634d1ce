import numpy as np
from hypothesis import given, strategies as st

from hlcurrents.roots import isolate_roots, winding_numbers


def _poly(roots):
    c = np.poly(roots)
    dc = np.polyder(c)
    return lambda z: (np.polyval(c, z), np.polyval(dc, z), np.ones(np.shape(z), dtype=bool))


def test_winding_counts_enclosed_roots():
    g = _poly([0.1 + 0.1j, -0.5, 2.5])
    w, resolved = winding_numbers(g, np.array([0.0]), np.array([0.0]), np.array([1.0]))
    assert resolved[0] and w[0] == 2


def test_isolates_known_roots():
    roots = np.array([0.3 + 0.2j, -0.7 - 0.1j, 1.1j, -1.4 + 0.9j])
    rep = isolate_roots(_poly(roots), 0.01, 2.0)
    assert rep.count == 4
    found = np.sort_complex(rep.roots)
    np.testing.assert_allclose(found, np.sort_complex(roots), atol=1e-10)


def test_double_root_multiplicity():
    rep = isolate_roots(_poly([0.25, 0.25, -1.0 + 0.5j]), 0.013, 2.0)
    assert rep.count == 3


@given(st.lists(st.tuples(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5)), min_size=1, max_size=5))
def test_count_matches_dense_solver(pairs):
    roots = np.array([complex(a, b) for a, b in pairs])
    # keep roots apart so the dense oracle is well conditioned
    if len(roots) > 1:
        d = np.abs(roots[:, None] - roots[None, :]) + np.eye(len(roots))
        if d.min() < 0.05:
            return
    rep = isolate_roots(_poly(roots), 0.0123, 2.0)
    assert rep.count == len(roots)
