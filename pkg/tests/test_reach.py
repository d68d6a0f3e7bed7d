import numpy as np
import pytest
from hypothesis import given, strategies as st

from rtakit.dynamics import Box
from rtakit.reach import (DecompositionFunction, Hyperrectangle, OrderInversionError,
                          build_embedding, corner_array, corners,
                          disturbed_di_backup_decomposition, disturbed_di_backup_field, lse,
                          lse_h, mm_example_decomposition, mm_example_field,
                          monte_carlo_endpoints, psi, reach_overapprox, reach_tube,
                          scalar_decay_decomposition, validate_decomposition)
from rtakit.sets import di_stopped_set, halfspace

HALF = Hyperrectangle(np.array([-0.5, -0.5]), np.array([0.5, 0.5]))


def test_corners():
    assert [c.tolist() for c in corners([0.0], [1.0])] == [[0.0], [1.0]]
    assert np.array_equal(corner_array([2.0, 3.0], [2.0, 3.0]), np.tile([2.0, 3.0], (4, 1)))
    pts = {tuple(c) for c in HALF.corners()}
    assert pts == {(-0.5, -0.5), (0.5, -0.5), (-0.5, 0.5), (0.5, 0.5)}
    with pytest.raises(ValueError):
        corner_array(np.zeros(13), np.ones(13))


def test_embedding_examples():
    E = build_embedding(mm_example_decomposition())
    assert np.array_equal(E(np.array([0.0, 1.0, 0.0, 1.0])), [3, 0, 3, 0])
    assert E(np.array([0.0, -1.0, 0.0, 1.0]))[0] == 2.0


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_embedding_diagonal_is_field(a, b):
    x = np.array([a, b])
    E = build_embedding(mm_example_decomposition())
    z = E(np.concatenate([x, x]))
    assert np.allclose(z[:2], mm_example_field(x)) and np.allclose(z[2:], mm_example_field(x))


def test_embedding_dimension_check():
    with pytest.raises(ValueError):
        build_embedding(disturbed_di_backup_decomposition(), None)


def test_scalar_decay_closed_form():
    R = reach_overapprox(scalar_decay_decomposition(), None, Box([1.0], [2.0]), 1.0, 0.01)
    assert np.allclose([R.lower[0], R.upper[0]], [np.exp(-1), 2 * np.exp(-1)], atol=1e-6)


def test_zero_time_is_identity():
    R = reach_overapprox(mm_example_decomposition(), None, HALF, 0.0)
    assert np.array_equal(R.lower, HALF.lower) and np.array_equal(R.upper, HALF.upper)


def test_degenerate_rect_tracks_flow():
    x0 = np.array([0.2, -0.1])
    tube = reach_tube(mm_example_decomposition(), None, Hyperrectangle.degenerate(x0), 1.0, 0.01)
    assert np.allclose(tube.states[:, :2], tube.states[:, 2:], atol=1e-12)


@pytest.mark.parametrize("t", [0.25, 0.5, 1.0])
def test_mm_example_containment(t):
    R = reach_overapprox(mm_example_decomposition(), None, HALF, t)
    pts = monte_carlo_endpoints(mm_example_field, HALF, None, t, 1000, seed=1)
    assert np.all(pts >= R.lower - 1e-9) and np.all(pts <= R.upper + 1e-9)


@pytest.mark.parametrize("t", [0.25, 0.5, 1.0])
def test_disturbed_di_containment(t):
    w = Box([-0.2], [0.2])
    rect = Hyperrectangle(np.array([-1.0, 0.4]), np.array([-0.8, 0.6]))
    d = disturbed_di_backup_decomposition(-1.0)
    R = reach_overapprox(d, w, rect, t)
    pts = monte_carlo_endpoints(disturbed_di_backup_field(-1.0), rect, w, t, 1000, seed=2)
    assert np.all(pts >= R.lower - 1e-9) and np.all(pts <= R.upper + 1e-9)
    tube = reach_tube(d, w, rect, t, 0.01)
    assert np.all(tube.states[:, :2] <= tube.states[:, 2:])


def test_validators_pass_for_shipped_decompositions():
    box = Box(-3 * np.ones(2), 3 * np.ones(2))
    rep = validate_decomposition(mm_example_decomposition(), lambda x, w: mm_example_field(x),
                                 box, None, 500)
    assert rep.ok
    rep = validate_decomposition(disturbed_di_backup_decomposition(), disturbed_di_backup_field(),
                                 box, Box([-0.2], [0.2]), 500)
    assert rep.ok


def test_validator_catches_bad_decomposition():
    # d = F for mm_example is not mixed monotone: d1 decreases in x2 for x2 < 0
    bad = DecompositionFunction(lambda x, w, xh, wh: mm_example_field(x), 2, 0, "bad")
    rep = validate_decomposition(bad, lambda x, w: mm_example_field(x),
                                 Box(-3 * np.ones(2), 3 * np.ones(2)), None, 200)
    assert not rep.ok


def test_order_inversion_is_reported():
    # not a decomposition: the gap upper - lower rotates and turns negative near t = pi/4
    wrong = DecompositionFunction(lambda x, w, xh, wh: np.array([-xh[1], xh[0]]), 2, 0, "wrong")
    with pytest.raises(OrderInversionError, match="order inversion"):
        reach_overapprox(wrong, None, Box([0.0, 0.0], [1.0, 1.0]), 3.0)
    bad = Hyperrectangle(np.array([0.0, 0.0]), np.array([1.0, 1.0]))
    assert reach_tube(wrong, None, bad, 0.5, 0.01).diagnostic == ""


def test_lse_examples():
    assert lse([0.7]) == 0.7
    assert lse([1.0, 1.0], 1.0) == pytest.approx(1 - np.log(2))
    with pytest.raises(ValueError):
        lse([])
    with pytest.raises(ValueError):
        lse([1.0], 0.0)
    with pytest.raises(ValueError):
        lse([np.inf])


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=40), st.floats(0.01, 1e4))
def test_lse_bounds(values, p):
    s = np.array(values)
    v = lse(s, p)
    assert v <= s.min() + 1e-12 * max(1.0, abs(s.min()))
    assert v >= s.min() - np.log(s.size) / p - 1e-9 * max(1.0, abs(s.min()))


def test_lse_h_examples():
    h = lambda z: float(2.0 - z[0] - z[1])  # noqa: E731
    x = np.array([0.3, 0.4])
    assert lse_h(h, Hyperrectangle.degenerate(x), 1e3) == pytest.approx(h(x) - 2 * np.log(2) / 1e3)
    rect = Box([0.0], [1.0])
    lin = lambda z: float(z[0])  # noqa: E731
    assert abs(lse_h(lin, rect, 1e4) - 0.0) < 1e-6
    assert lse_h(lin, rect, 10.0) < 0.0


def test_psi_degenerate_and_p_migration():
    hb = di_stopped_set()
    d = disturbed_di_backup_decomposition()
    x = np.array([-2.0, -0.5])
    zero = Box([0.0], [0.0])
    r = psi(hb, d, zero, x, 0.0, 0.1, 1e3)
    assert r.value == pytest.approx(hb.margin(x) - 2 * np.log(2) / 1e3, abs=1e-12)
    for p in (10.0, 100.0, 1e3):
        a = psi(hb, d, Box([-0.1], [0.1]), x, 3.0, 0.1, p).value
        b = psi(hb, d, Box([-0.1], [0.1]), x, 3.0, 0.1, 2 * p).value
        assert b >= a - 2 * np.log(2) / p - 1e-12


def test_psi_positive_deep_in_backup_set():
    r = psi(di_stopped_set(), disturbed_di_backup_decomposition(), Box([-0.01], [0.01]),
            np.array([-5.0, -1.0]), 3.0, 0.1)
    assert r.value > 0


def test_path_guard_caps_psi():
    hb, d = di_stopped_set(), disturbed_di_backup_decomposition()
    x = np.array([-0.3, 1.0])  # stops beyond the wall
    free = psi(hb, d, Box([-0.1], [0.1]), x, 3.0, 0.1)
    guarded = psi(hb, d, Box([-0.1], [0.1]), x, 3.0, 0.1, path=halfspace([-1.0, 0.0]))
    assert free.value > 0 > guarded.value
