from dataclasses import replace

import numpy as np
import pytest

from rtakit.dynamics import Box, ContinuousAffinePlant, make_plant
from rtakit.harness import (TOL_SAFETY, ScenarioConfig, compare_filters, run_closed_loop,
                            safe_volume_estimate)
from rtakit.scenarios import Primary, build_scenario
from rtakit.sets import halfspace


def test_baseline_crosses_wall():
    res = run_closed_loop(build_scenario("double_integrator", "none", duration=3.0))
    assert res.summary.violated
    x1 = res.states[:, 0]
    k = int(np.argmax(x1 > 0))
    # kinematics oracle: x1 = -1.75 + t^2 / 2 crosses zero at sqrt(3.5)
    assert res.times[k - 1] < np.sqrt(3.5) <= res.times[k - 1] + 0.1
    assert res.summary.activation_steps == 0 and res.summary.control_deviation == 0


def test_rbsf_run_is_safe_and_intervenes():
    res = run_closed_loop(build_scenario("double_integrator", "rbsf"))
    assert res.summary.min_constraint_margin >= -TOL_SAFETY
    assert res.summary.activation_steps > 0
    assert len(res.states) == len(res.times) + 1 == 301


def test_backup_as_primary_never_deviates():
    cfg = build_scenario("double_integrator", "rbsf", duration=5.0,
                         primary=Primary("constant", (-1.0,)))
    res = run_closed_loop(cfg)
    assert res.summary.control_deviation == 0.0
    assert np.array_equal(res.u_act, res.u_des)


@pytest.mark.parametrize("variant", ["rbsf", "sbsf", "easif", "iasif"])
def test_deviation_zero_iff_inputs_match(variant):
    res = run_closed_loop(build_scenario("double_integrator", variant, duration=10.0))
    same = bool(np.all(np.abs(res.u_act - res.u_des) <= 1e-12))
    assert (res.summary.control_deviation == 0.0) == same


def test_runs_are_deterministic():
    cfg = build_scenario("disturbed_double_integrator", "rasif", duration=5.0, seed=4)
    a, b = run_closed_loop(cfg), run_closed_loop(cfg)
    assert a.states.tobytes() == b.states.tobytes()
    assert a.u_act.tobytes() == b.u_act.tobytes()
    c = run_closed_loop(replace(cfg, seed=5))
    assert c.states.tobytes() != a.states.tobytes()


def test_exact_zoh_matches_rk4_for_double_integrator():
    cfg = build_scenario("double_integrator", "rbsf", duration=5.0)
    a = run_closed_loop(cfg)
    b = run_closed_loop(replace(cfg, integrator="rk4"))
    assert np.allclose(a.states, b.states, atol=1e-12)
    with pytest.raises(ValueError):
        replace(cfg, integrator="euler")


def test_blowup_truncates():
    p = ContinuousAffinePlant("cubic", 1, 1, lambda x: x ** 3, lambda x: np.ones((1, 1)),
                              Box.symmetric(1.0))
    cfg = ScenarioConfig("blowup", p, lambda t, x: np.zeros(1), halfspace([1.0], 100.0), [5.0],
                         duration=10.0)
    with np.errstate(over="ignore", invalid="ignore"):
        res = run_closed_loop(cfg)
    assert res.truncated and res.diagnostic
    assert len(res.times) < cfg.n_steps


def test_first_intervention_metrics():
    res = run_closed_loop(build_scenario("double_integrator", "rbsf"))
    s = res.summary
    assert s.first_intervention_time == pytest.approx(1.3)
    assert s.first_intervention_margin is not None and s.first_intervention_margin >= 0
    assert s.activation_seconds == pytest.approx(s.activation_steps / 10)
    assert s.max_control_jump == 2.0


def test_scenario_config_validation():
    di = make_plant("double_integrator")
    with pytest.raises(ValueError):
        ScenarioConfig("x", di, lambda t, x: [0.0], halfspace([-1.0, 0.0]), [0.0])
    with pytest.raises(ValueError):
        ScenarioConfig("x", di, lambda t, x: [0.0], halfspace([-1.0, 0.0]), [0.0, 0.0], rate=0)


def test_safe_volume_trivial_boxes():
    cfg = build_scenario("double_integrator", "rbsf")
    inside = Box([-4.0, -1.0], [-3.0, -0.5])
    assert safe_volume_estimate(cfg, inside, 20, horizon=3.0) == 1.0
    crashed = Box([0.5, 0.0], [1.0, 1.0])
    assert safe_volume_estimate(cfg, crashed, 20, horizon=3.0) == 0.0


def test_compare_filters_helpers():
    base = build_scenario("double_integrator", "none")
    fcs = {v: build_scenario("double_integrator", v).filter for v in ("rbsf", "sbsf", "easif")}
    cmp = compare_filters(base, fcs)
    assert set(cmp.reports) == {"rbsf", "sbsf", "easif"}
    assert all(not r.violated for r in cmp.reports.values())
    assert cmp.activation_offset("rbsf", "sbsf") <= 2
    assert cmp.intervenes_no_later("easif", "rbsf")
    assert not cmp.intervenes_no_later("rbsf", "easif")
