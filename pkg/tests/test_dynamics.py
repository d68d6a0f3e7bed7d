import numpy as np
import pytest
from hypothesis import given, strategies as st

from rtakit.dynamics import (Box, closed_loop_jacobian, constant_backup, discretize,
                             eval_dynamics, eval_nondet, linear_feedback, make_plant,
                             numeric_jacobian, rigid_body_backup, saturate)
from rtakit.integration import rk4_step

finite = st.floats(-5, 5, allow_nan=False)


def test_double_integrator_field():
    di = make_plant("double_integrator")
    assert np.allclose(eval_dynamics(di, [-2, 3], 0.5), [3, 0.5])


def test_rigid_body_field_at_rest():
    rb = make_plant("rigid_body")
    assert np.allclose(eval_dynamics(rb, [0, 0, 0], [0.2, 0, 0]), [0.2 / 12, 0, 0])


def test_two_cart_field():
    tc = make_plant("two_cart")
    assert np.allclose(eval_dynamics(tc, [0, 1, 0, 0], [0, 0]), [1, -0.1, 0, 0])


def test_shape_mismatch_is_rejected():
    di = make_plant("double_integrator")
    with pytest.raises(ValueError):
        eval_dynamics(di, [0, 0, 0], 1.0)
    with pytest.raises(ValueError):
        eval_dynamics(di, [0, 0], [1.0, 2.0])


def test_disturbed_double_integrator():
    ddi = make_plant("double_integrator", {"w_max": 1.0})
    assert np.allclose(eval_nondet(ddi, [0, 0], 1.0, -1.0), [0, 0])
    assert np.allclose(eval_nondet(ddi, [0, 0], 1.0, 0.3), [0, 1.3])
    with pytest.raises(ValueError):
        eval_nondet(ddi, [0, 0], 1.0, [0.1, 0.2])


@given(finite, finite, finite)
def test_zero_disturbance_matches_deterministic(x1, x2, u):
    ddi = make_plant("double_integrator", {"w_max": 0.2})
    det = ddi.deterministic()
    assert np.array_equal(eval_nondet(ddi, [x1, x2], u, 0.0), eval_dynamics(det, [x1, x2], u))


def test_exact_zoh_double_integrator():
    d = discretize(make_plant("double_integrator"), 0.1, "exact-zoh-linear")
    x = d([-3.0, 0.0], [1.0])
    assert np.allclose(x, [-2.995, 0.1], atol=1e-15)
    # independent fine RK4 reference
    di = make_plant("double_integrator")
    ref = np.array([-3.0, 0.0])
    for _ in range(100):
        ref = rk4_step(lambda s: eval_dynamics(di, s, [1.0]), ref, 0.001)
    assert np.allclose(x, ref, atol=1e-12)


def test_exact_zoh_matches_expm_for_msd():
    msd = make_plant("mass_spring_damper")
    d = discretize(msd, 0.1, "exact-zoh-linear")
    fine = discretize(msd, 0.1, "rk4", substeps=200)
    x, u = np.array([0.3, -0.2]), np.array([0.7])
    assert np.allclose(d(x, u), fine(x, u), atol=1e-12)


def test_exact_zoh_rejected_for_nonlinear():
    with pytest.raises(ValueError):
        discretize(make_plant("unicycle"), 0.1, "exact-zoh-linear")
    with pytest.raises(ValueError):
        discretize(make_plant("double_integrator"), 0.1, "euler")


def test_rk4_two_half_steps_close_to_full_step():
    uni = make_plant("unicycle")
    one = discretize(uni, 0.1, "rk4", substeps=1)
    two = discretize(uni, 0.1, "rk4", substeps=2)
    x, u = np.array([1.0, 0.3]), np.array([0.5])
    assert np.max(np.abs(one(x, u) - two(x, u))) < 1e-6


def test_catalog_dimensions():
    di = make_plant("double_integrator")
    assert (di.n, di.m) == (2, 1)
    assert np.array_equal(di.u_box.lower, [-1]) and np.array_equal(di.u_box.upper, [1])
    cwh = make_plant("cwh")
    assert (cwh.n, cwh.m) == (5, 2)
    assert np.allclose(cwh.u_box.upper, [0.5, 0.5])
    assert cwh.params["mass"] == 50 and cwh.params["n_cwh"] == 0.001027
    rb = make_plant("rigid_body")
    assert (rb.n, rb.m) == (3, 3)
    assert np.allclose(rb.u_box.lower, -1)


def test_make_plant_rejects_bad_names_and_params():
    with pytest.raises(ValueError):
        make_plant("segway")
    with pytest.raises(ValueError):
        make_plant("double_integrator", {"mass": 2})
    with pytest.raises(ValueError):
        make_plant("rigid_body", {"J1": -1})


def test_saturation_examples():
    box = Box.symmetric(1.0)
    assert saturate([2.0], box)[0] == 1.0
    assert saturate([0.0], box, "tanh")[0] == 0.0
    assert saturate([1.0], box, "rational")[0] == pytest.approx(1 / np.sqrt(2))
    with pytest.raises(ValueError):
        saturate([0.0], box, "cubic")


@given(st.floats(-1e3, 1e3, allow_nan=False), st.sampled_from(["hard", "tanh", "rational"]))
def test_saturation_stays_in_box(u, mode):
    box = Box([-0.5], [2.0])
    out = saturate([u], box, mode)
    assert box.contains(out)


def test_closed_loop_jacobians():
    msd = make_plant("mass_spring_damper")
    ub = constant_backup(msd, [0.0])
    assert np.array_equal(closed_loop_jacobian(msd, ub, [0.4, 0.1]), [[0, 1], [-1, -1]])
    di = make_plant("double_integrator")
    assert np.array_equal(closed_loop_jacobian(di, constant_backup(di, [-1.0]), [1, 2]),
                          [[0, 1], [0, 0]])
    rb = make_plant("rigid_body")
    law = rigid_body_backup(rb)
    assert np.allclose(closed_loop_jacobian(rb, law, np.zeros(3)), -np.eye(3), atol=1e-12)


def test_rigid_body_analytic_jacobian_matches_differences():
    rb = make_plant("rigid_body")
    law = rigid_body_backup(rb)
    rng = np.random.default_rng(3)
    for _ in range(10):
        x = rng.uniform(-1, 1, 3)
        fd = numeric_jacobian(lambda s: eval_dynamics(rb, s, law(s)), x)
        assert np.allclose(law.jacobian(x), fd, atol=1e-6)


def test_linear_feedback_jacobian():
    di = make_plant("double_integrator")
    K = np.array([[-1.0, -2.0]])
    law = linear_feedback(di, K)
    assert np.allclose(closed_loop_jacobian(di, law, [0.3, 0.1]), [[0, 1], [-1, -2]])
