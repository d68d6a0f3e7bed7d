import json

import numpy as np
import pytest

from rtakit.cli import EXIT_OK, EXIT_UNSAFE, EXIT_USAGE, main, parse_csv
from rtakit.harness import run_closed_loop
from rtakit.scenarios import (ScenarioError, available_filters, build_scenario, get_scenario,
                              scenario_ids)


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_scenario_registry():
    ids = scenario_ids()
    assert len(ids) == 8 and ids == sorted(ids)
    for sid in ids:
        sc = get_scenario(sid)
        assert sc.default_filter in available_filters(sid)
        assert set(sc.filters) <= set(available_filters(sid))
    with pytest.raises(ScenarioError):
        get_scenario("moon_landing")
    with pytest.raises(ScenarioError):
        build_scenario("two_cart", "rbsf")


def test_run_double_integrator_rbsf(capsys):
    code, out, _ = run(capsys, "run", "--scenario", "double_integrator", "--filter", "rbsf")
    assert code == EXIT_OK
    assert out.splitlines()[0] == "t,x0,x1,ud0,ua0,intervened,margin,mode"


def test_run_baseline_exits_unsafe(capsys):
    code, _, err = run(capsys, "run", "--scenario", "double_integrator", "--filter", "none")
    assert code == EXIT_UNSAFE and "safety violation" in err


@pytest.mark.parametrize("argv", [
    ["run", "--scenario", "nope"],
    ["run", "--scenario", "double_integrator", "--filter", "magic"],
    ["run", "--scenario", "two_cart", "--filter", "rbsf"],
    ["run", "--scenario", "double_integrator", "--param", "u_max"],
    ["run", "--scenario", "double_integrator", "--param", "mass=2"],
    ["run"],
    ["list-scenarios", "--bogus"],
    ["validate", "--inject-fault", "typo"],
    ["frobnicate"],
])
def test_usage_errors_exit_one(capsys, argv):
    with pytest.raises(SystemExit) as exc:
        raise SystemExit(main(argv))
    assert exc.value.code == EXIT_USAGE


def test_unknown_scenario_lists_valid_names(capsys):
    code, _, err = run(capsys, "run", "--scenario", "nope")
    assert code == EXIT_USAGE and "double_integrator" in err


def test_list_scenarios(capsys):
    code, out, _ = run(capsys, "list-scenarios")
    assert code == EXIT_OK and out.split() == scenario_ids()
    code, out, _ = run(capsys, "list-scenarios", "--json")
    doc = json.loads(out)
    assert [d["id"] for d in doc] == scenario_ids()
    assert set(doc[0]) == {"id", "plant", "default_filter"}


def test_csv_round_trip(capsys, tmp_path):
    path = tmp_path / "di.csv"
    code, _, _ = run(capsys, "run", "--scenario", "double_integrator", "--filter", "easif",
                     "--duration", "5", "--out", str(path))
    assert code == EXIT_OK
    header, rows, summary = parse_csv(path.read_text())
    res = run_closed_loop(build_scenario("double_integrator", "easif", duration=5.0))
    assert len(rows) == len(res.times)
    got = np.array([r[1:3] for r in rows])
    assert np.array_equal(got, res.states[:-1])
    assert np.array_equal(np.array([r[4] for r in rows]), res.u_act[:, 0])
    assert summary["filter"] == "easif" and summary["violated"] == "false"


def test_json_output(capsys):
    code, out, _ = run(capsys, "run", "--scenario", "two_cart", "--format", "json",
                       "--duration", "2")
    doc = json.loads(out)
    assert code == EXIT_OK
    assert doc["columns"][:5] == ["t", "x0", "x1", "x2", "x3"]
    assert len(doc["records"]) == 20 and doc["summary"]["filter"] == "iasif"


def test_identical_flags_give_identical_bytes(capsys):
    argv = ["run", "--scenario", "disturbed_double_integrator", "--duration", "3", "--seed", "7"]
    _, a, _ = run(capsys, *argv)
    _, b, _ = run(capsys, *argv)
    _, c, _ = run(capsys, *argv[:-1], "8")
    assert a == b and a != c


def test_seed_from_environment(capsys, monkeypatch):
    argv = ["run", "--scenario", "disturbed_double_integrator", "--duration", "2"]
    monkeypatch.setenv("RTAKIT_SEED", "7")
    _, env, _ = run(capsys, *argv)
    _, flag, _ = run(capsys, *argv, "--seed", "7")
    assert env == flag
    monkeypatch.setenv("RTAKIT_SEED", "x")
    code, _, _ = run(capsys, *argv)
    assert code == EXIT_USAGE


def test_config_file(capsys, tmp_path):
    cfg = {"scenario": "double_integrator", "x0": [-3.0, 0.0], "duration": 4,
           "filter": {"kind": "easif", "alpha": {"kind": "linear", "gain": 2.0}},
           "primary": {"kind": "constant", "value": [0.5]}}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    code, out, _ = run(capsys, "run", "--config", str(path))
    assert code == EXIT_OK
    lines = out.splitlines()
    assert lines[1].startswith("0,-3,0,0.5,")
    assert "# filter=easif" in lines
    path.write_text(json.dumps({**cfg, "colour": "red"}))
    assert run(capsys, "run", "--config", str(path))[0] == EXIT_USAGE


def test_param_override(capsys):
    code, out, _ = run(capsys, "run", "--scenario", "double_integrator", "--filter", "none",
                       "--param", "u_max=0.5", "--duration", "2")
    ud = [float(line.split(",")[4]) for line in out.splitlines()[1:] if not line.startswith("#")]
    assert max(ud) == 0.5


def test_validate_scenario(capsys):
    code, out, _ = run(capsys, "validate", "--scenario", "double_integrator")
    assert code == EXIT_OK
    assert "qp-oracle" in out and "FAIL" not in out


def test_validate_catches_injected_fault(capsys):
    code, out, _ = run(capsys, "validate", "--scenario", "double_integrator",
                       "--inject-fault", "barrier-sign")
    assert code == EXIT_UNSAFE
    assert "safety/easif" in out and "FAIL" in out


def test_validate_mm_reach_demo_runs_containment(capsys):
    code, out, _ = run(capsys, "validate", "--scenario", "mm_reach_demo")
    assert code == EXIT_OK and "containment" in out


@pytest.mark.slow
def test_validate_all_passes(capsys):
    code, out, _ = run(capsys, "validate", "--all")
    assert code == EXIT_OK, out
