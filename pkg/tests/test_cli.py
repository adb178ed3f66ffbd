import json

import pytest

from sgk import cli, kfun


def export(tmp_path, name="example1"):
    out = tmp_path / name
    assert cli.main(["export-spec", name, "--out", str(out), "--quiet"]) == 0
    return json.loads((out / "spec.json").read_text())


def write(tmp_path, spec, name="spec.json"):
    tmp_path.mkdir(parents=True, exist_ok=True)
    p = tmp_path / name
    p.write_text(json.dumps(spec))
    return str(p)


def run(tmp_path, command, spec, *extra):
    out = tmp_path / f"out_{command}"
    code = cli.main([command, "--spec", write(tmp_path, spec), "--out", str(out), "--quiet", *extra])
    report = out / "report.json"
    return code, (json.loads(report.read_text()) if report.exists() else None), out


def small(spec, n=2000):
    spec = dict(spec)
    spec["sample_space"] = {**spec["sample_space"], "n_samples": n}
    return spec


# -- export ------------------------------------------------------------------

def test_export_spec_validates(tmp_path):
    spec = export(tmp_path)
    assert spec["version"] == 1 and spec["scenario"] == "example1"
    cli.load_spec(write(tmp_path, spec))


def test_export_unknown_scenario(tmp_path, capsys):
    assert cli.main(["export-spec", "nope", "--quiet"]) == 2
    assert "unknown scenario" in capsys.readouterr().err


def test_every_scenario_exports(tmp_path):
    for name in ("example1", "polar", "oscillator", "incremental", "observer"):
        cli.load_spec(write(tmp_path, export(tmp_path, name), f"{name}.json"))


# -- check-smallgain ---------------------------------------------------------

def test_smallgain_example(tmp_path):
    code, rep, _ = run(tmp_path, "check-smallgain", export(tmp_path))
    assert code == 0
    assert rep["report"]["verdict"] is True
    assert rep["report"]["details"]["cycles"][0]["cycle"] == [0, 1]
    assert rep["report"]["details"]["cycles"][0]["margin"] > 0


def test_smallgain_self_loop(tmp_path):
    one = kfun.identity().to_dict()
    spec = {"version": 1, "network": {"l": 1, "gains": [[one]]}}
    code, rep, _ = run(tmp_path, "check-smallgain", spec)
    assert code == 1 and rep["report"]["witness"]["cycle"] == [0]


def test_malformed_spec(tmp_path, capsys):
    spec = {"version": 1, "network": {"l": 1, "gains": [[{"breakpoints": [[0, 0]], "tail_slope": -1}]]}}
    code, rep, _ = run(tmp_path, "check-smallgain", spec)
    assert code == 2 and rep is None
    assert "tail_slope" in capsys.readouterr().err


def test_unknown_field_rejected(tmp_path):
    spec = export(tmp_path)
    spec["extra"] = 1
    assert run(tmp_path, "check-smallgain", spec)[0] == 2


def test_wrong_version_rejected(tmp_path):
    spec = export(tmp_path)
    spec["version"] = 2
    assert run(tmp_path, "check-smallgain", spec)[0] == 2


def test_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert cli.main(["check-smallgain", "--spec", str(p), "--quiet"]) == 2


def test_missing_file(tmp_path):
    assert cli.main(["check-smallgain", "--spec", str(tmp_path / "none.json"), "--quiet"]) == 2


def test_decreasing_pl_rejected(tmp_path):
    bad = {"breakpoints": [[0, 0], [1, 1], [2, 0.5]], "tail_slope": 1}
    spec = {"version": 1, "network": {"l": 1, "gains": [[bad]]}}
    assert run(tmp_path, "check-smallgain", spec)[0] == 2


# -- certify -----------------------------------------------------------------

def test_certify_example(tmp_path):
    code, rep, _ = run(tmp_path, "certify", export(tmp_path))
    assert code == 0
    assert rep["check"] == "max" and rep["report"]["samples"] == 10000


def test_certify_broken_rate(tmp_path):
    spec = export(tmp_path)
    spec["certificate"]["alpha"] = kfun.linear(0.25).to_dict()
    code, rep, _ = run(tmp_path, "certify", spec)
    assert code == 1
    assert rep["report"]["witness"]["reverified"] is True


def test_certify_missing_certificate(tmp_path):
    spec = export(tmp_path)
    del spec["certificate"]
    assert run(tmp_path, "certify", spec)[0] == 2


def test_certify_other_checks(tmp_path):
    base = small(export(tmp_path))
    for check in ("sandwich", "iss", "k_bound"):
        spec = {**base, "params": {"check": check, "K": 20}}
        code, rep, _ = run(tmp_path, "certify", spec)
        assert code == 0, check
        assert rep["check"] == check


def test_certify_form_mismatch(tmp_path):
    spec = {**export(tmp_path), "params": {"check": "dissipative"}}
    assert run(tmp_path, "certify", spec)[0] == 2


def test_certify_deterministic_across_workers(tmp_path):
    spec = export(tmp_path)
    spec["certificate"]["alpha"] = kfun.linear(0.25).to_dict()
    a = run(tmp_path / "a", "certify", spec, "--workers", "1")[2] / "report.json"
    b = run(tmp_path / "b", "certify", spec, "--workers", "4")[2] / "report.json"
    assert a.read_bytes() == b.read_bytes()


def test_seed_flag_changes_samples(tmp_path):
    spec = small(export(tmp_path))
    _, ra, _ = run(tmp_path / "a", "certify", spec, "--seed", "1")
    _, rb, _ = run(tmp_path / "b", "certify", spec, "--seed", "2")
    assert ra["report"]["details"]["seed"] == 1 and rb["report"]["details"]["seed"] == 2


# -- compose / decompose -----------------------------------------------------

def test_compose_example(tmp_path):
    code, rep, _ = run(tmp_path, "compose", small(export(tmp_path)))
    assert code == 0
    assert rep["certificate"]["form"] == "max"
    assert all(r["verdict"] for r in rep["self_check"].values())


def test_compose_infeasible_network(tmp_path):
    spec = small(export(tmp_path))
    spec["network"]["gains"] = [[None, kfun.linear(2.0).to_dict()], [kfun.linear(0.6).to_dict(), None]]
    code, rep, _ = run(tmp_path, "compose", spec)
    assert code == 1 and rep["report"]["verdict"] is False


def test_compose_needs_estimates(tmp_path):
    assert run(tmp_path, "compose", export(tmp_path, "polar"))[0] == 2


def test_decompose_roundtrip(tmp_path):
    spec = {**small(export(tmp_path)), "params": {"roundtrip": True}}
    code, rep, _ = run(tmp_path, "decompose", spec)
    assert code == 0
    assert rep["decomposition"]["Mhat"] == 1
    assert all(r["verdict"] for r in rep["self_check"].values())
    assert "recomposed" in rep


def test_decompose_zero_cap(tmp_path):
    spec = {**small(export(tmp_path)), "params": {"M_cap": 0}}
    code, rep, _ = run(tmp_path, "decompose", spec)
    assert code == 1 and rep["error"] == "NoValidMhat"


# -- simulate ----------------------------------------------------------------

def test_simulate_polar(tmp_path):
    spec = {**export(tmp_path, "polar"), "params": {"K": 1000, "initial_states": [[1.0, 0.0]]}}
    code, rep, out = run(tmp_path, "simulate", spec)
    assert code == 0
    r = rep["runs"][0]
    assert r["omega_last"] < 1e-3 < r["omega_first"]
    assert r["window_max_nonincreasing"]
    lines = (out / "trajectory_0.csv").read_text().strip().split("\n")
    assert lines[0] == "k,x_1,x_2,omega" and len(lines) == 1002


def test_simulate_zero_steps(tmp_path):
    spec = {**export(tmp_path, "polar"), "params": {"K": 0, "initial_states": [[1.0, 0.0]]}}
    code, _, out = run(tmp_path, "simulate", spec)
    assert code == 0
    assert len((out / "trajectory_0.csv").read_text().strip().split("\n")) == 2


def test_simulate_observer(tmp_path):
    spec = {**export(tmp_path, "observer"), "params": {"K": 50, "runs": 3}}
    code, rep, out = run(tmp_path, "simulate", spec)
    assert code == 0 and len(rep["runs"]) == 3
    for r in rep["runs"]:
        assert r["omega_first"] > 0 and r["omega_last"] < 1e-6 * r["omega_first"]
        assert r["nonincreasing"]
    assert (out / "trajectory_2.csv").exists()


def test_simulate_example_has_no_iss_violations(tmp_path):
    spec = {**export(tmp_path), "params": {"K": 200, "runs": 5}}
    code, rep, _ = run(tmp_path, "simulate", spec)
    assert code == 0
    assert all(r["iss_violations"] == 0 for r in rep["runs"])


def test_simulate_bad_initial_state(tmp_path):
    spec = {**export(tmp_path, "polar"), "params": {"initial_states": [[1.0]]}}
    assert run(tmp_path, "simulate", spec)[0] == 2


def test_stdout_is_json(tmp_path, capsys):
    p = write(tmp_path, export(tmp_path))
    assert cli.main(["check-smallgain", "--spec", p]) == 0
    assert json.loads(capsys.readouterr().out)["command"] == "check-smallgain"


def test_module_entry_point(tmp_path):
    import subprocess
    import sys
    p = write(tmp_path, export(tmp_path))
    res = subprocess.run([sys.executable, "-m", "sgk", "check-smallgain", "--spec", p, "--quiet"])
    assert res.returncode == 0


@pytest.mark.parametrize("argv", [[], ["bogus"], ["certify"]])
def test_usage_errors(argv):
    with pytest.raises(SystemExit) as err:
        cli.main(argv)
    assert err.value.code == 2
