import json
import math

import numpy as np
import pytest

from l1margin import cli
from l1margin.scenario_file import (PROFILE_ENV, ScenarioError, bundled_path, load_scenario,
                                    parse_scenario)

ARM_TEXT = open(bundled_path(), encoding="utf-8").read()


def _line_of(text, needle):
    return next(i for i, ln in enumerate(text.splitlines(), 1) if needle in ln)


# ---------------------------------------------------------------------------
# scenario files
# ---------------------------------------------------------------------------


def test_bundled_scenario_profiles(monkeypatch):
    monkeypatch.delenv(PROFILE_ENV, raising=False)
    sf = load_scenario(bundled_path())
    assert sf.name == "robotarm" and sf.profile == "desk"
    sc = sf.build()
    assert sc.h == 1e-5 and sc.cfg.gamma_c == 1e4 and sc.cfg.k == 60
    assert sc.r.phase == pytest.approx(math.pi / 2) and sc.sigma.frequency == pytest.approx(math.pi)
    assert sc.cfg.sets.d_sigma == pytest.approx(math.pi)
    full = load_scenario(bundled_path(), "full").build()
    assert full.h == 1e-6 and full.cfg.gamma_c == 5e5


def test_profile_env_and_priority(monkeypatch):
    monkeypatch.setenv(PROFILE_ENV, "full")
    assert load_scenario(bundled_path()).profile == "full"
    assert load_scenario(bundled_path(), "desk").profile == "desk"
    monkeypatch.setenv(PROFILE_ENV, "nope")
    with pytest.raises(ScenarioError, match="nope"):
        load_scenario(bundled_path())


def test_build_overrides():
    sc = parse_scenario(ARM_TEXT, "arm", "desk").build(tau=0.02, gain=2.0, gamma_c=50.0, t_end=1.0)
    assert (sc.tau, sc.gain, sc.cfg.gamma_c, sc.t_end) == (0.02, 2.0, 50.0, 1.0)


def test_unknown_key_reports_line():
    text = ARM_TEXT.replace("  delta0: 10\n", "  delta0: 10\n  bogus: 3\n")
    line = _line_of(text, "bogus")
    with pytest.raises(ScenarioError, match=rf"arm:{line}: key 'sets.bogus'"):
        parse_scenario(text, "arm")


def test_bad_value_reports_line():
    text = ARM_TEXT.replace("  k: 60", "  k: sixty")
    line = _line_of(text, "k: sixty")
    with pytest.raises(ScenarioError, match=rf"arm:{line}: key 'controller.k'"):
        parse_scenario(text, "arm")


@pytest.mark.parametrize("expr", ["__import__('os')", "pi ** 1e9", "abs(-1)"])
def test_arithmetic_is_restricted(expr):
    text = ARM_TEXT.replace("phase_rad: pi/2", f'phase_rad: "{expr}"')
    with pytest.raises(ScenarioError):
        parse_scenario(text, "arm").build()


def test_malformed_yaml_and_empty():
    with pytest.raises(ScenarioError, match="malformed"):
        parse_scenario("plant: [1, 2\n", "bad")
    with pytest.raises(ScenarioError, match="empty"):
        parse_scenario("", "bad")


def test_inconsistent_truth_rejected():
    text = ARM_TEXT.replace("theta: [2, 2]", "theta: [20, 2]")
    with pytest.raises(ScenarioError, match="outside"):
        parse_scenario(text, "arm").build()


def test_resolved_round_trip():
    sf = parse_scenario(ARM_TEXT, "arm", "full")
    doc = sf.resolved()
    assert set(doc["profiles"]) == {"full"}
    again = parse_scenario(json.dumps(doc), "again", "full").build()
    assert again.h == 1e-6 and np.all(again.true_theta == [2, 2])


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------


def run(*argv):
    return cli.main([str(a) for a in argv])


def _kv(path):
    out = {}
    for ln in path.read_text().splitlines():
        key, _, val = ln.partition(" = ")
        out[key] = val
    return out


def test_simulate_deterministic_and_replayable(tmp_path):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert run("simulate", "robotarm", "--tau", 0.02, "--t-end", 1, "--decimate", 10, "--out", a) == 0
    assert run("simulate", "robotarm", "--tau", 0.02, "--t-end", 1, "--decimate", 10, "--out", b) == 0
    assert (a / "trace.csv").read_bytes() == (b / "trace.csv").read_bytes()
    man = json.loads((a / "manifest.json").read_text())
    assert man["arguments"]["tau"] == 0.02 and man["profile"] == "desk"
    assert run("simulate", a / "manifest.json", "--out", c) == 0
    for name in ("trace.csv", "verdict.txt"):
        assert (c / name).read_bytes() == (a / name).read_bytes()
    assert json.loads((c / "manifest.json").read_text())["outputs"] == man["outputs"]
    lines = (a / "trace.csv").read_text().splitlines()
    assert len(lines) == 1 + 10001
    assert _kv(a / "verdict.txt")["classification"] == "stable"


def test_simulate_large_delay_diverges(tmp_path):
    assert run("simulate", "robotarm", "--tau", 1.0, "--t-end", 3, "--decimate", 100,
               "--out", tmp_path) == 2
    assert _kv(tmp_path / "verdict.txt")["classification"] == "diverged"


def test_margins_command(tmp_path, capsys):
    assert run("margins", "robotarm", "--out", tmp_path) == 0
    kv = _kv(tmp_path / "margins.txt")
    assert float(kv["phase_margin_deg"]) == pytest.approx(88.1, abs=0.5)
    assert float(kv["delay_margin_s"]) == pytest.approx(
        float(kv["phase_margin_rad"]) / float(kv["crossover_rad_s"]), rel=1e-11)
    assert float(kv["l1_condition_value_at_true_omega"]) < 1
    assert "phase_margin_deg" in capsys.readouterr().out


def test_margins_sweep_writes_vertices(tmp_path):
    assert run("margins", "robotarm", "--sweep", "--density", 3, "--out", tmp_path) == 0
    rows = (tmp_path / "vertices.csv").read_text().splitlines()
    assert rows[0] == "theta_1,theta_2,omega,pm_rad,omega_c,delay_margin_s"
    assert len(rows) == 1 + 9 * 7


def _bode(path):
    data = np.loadtxt(path / "bode.csv", delimiter=",", skiprows=1)
    return data[:, 0], data[:, 1], data[:, 2]


def test_bode_crossover_and_continuity(tmp_path):
    assert run("bode", "robotarm", "--points", 600, "--out", tmp_path) == 0
    w, mag, ph = _bode(tmp_path)
    wc = np.interp(0.0, -mag, w)
    assert wc == pytest.approx(60.0, rel=0.02)
    assert np.abs(np.diff(ph)).max() < 10
    assert -180 < ph[-1] <= 180


def test_bode_pure_integrator_slope(tmp_path):
    assert run("bode", "robotarm", "--theta", "0,0", "--points", 200, "--out", tmp_path) == 0
    w, mag, ph = _bode(tmp_path)
    slope = np.diff(mag) / np.diff(np.log10(w))
    assert np.allclose(slope, -20.0, atol=1e-6)
    assert np.allclose(ph, -90.0, atol=1e-9)
    assert run("bode", "robotarm", "--theta", "1", "--out", tmp_path) == 1


@pytest.mark.parametrize("num,den,want", [("2", "2,1", 1.0), ("1", "3,1", 1 / 3),
                                          ("1,1", "2,1", 1.5)])
def test_l1gain_command(capsys, num, den, want):
    assert run("l1gain", "--num", num, "--den", den) == 0
    assert float(capsys.readouterr().out) == pytest.approx(want, rel=1e-6)


def test_l1gain_rejects_improper_and_unstable(capsys):
    assert run("l1gain", "--num", "0,0,1", "--den", "1,1") == 1
    assert run("l1gain", "--num", "1", "--den=-1,1") == 1
    assert "error" in capsys.readouterr().err


def test_verify_passes_and_catches_corruption(tmp_path):
    assert run("verify", "robotarm", "--t-end", 1, "--out", tmp_path / "ok") == 0
    kv = _kv(tmp_path / "ok" / "verify.txt")
    assert kv["result"] == "PASS"
    assert run("verify", "robotarm", "--t-end", 1, "--corrupt-trace", "--out", tmp_path / "bad") == 2
    assert _kv(tmp_path / "bad" / "verify.txt")["result"] == "FAIL"


def test_input_errors_exit_one(tmp_path, capsys):
    bad = tmp_path / "bad.scenario"
    bad.write_text(ARM_TEXT.replace("  b: [0, 1]", "  b: [0, 1]\n  extra: 1"))
    assert run("simulate", bad, "--out", tmp_path / "o") == 1
    err = capsys.readouterr().err
    assert f"bad.scenario:{_line_of(bad.read_text(), 'extra')}:" in err
    assert run("simulate", tmp_path / "missing.scenario", "--out", tmp_path / "o") == 1
    assert run("margins", "robotarm", "--out", tmp_path / "m") == 0
    assert run("simulate", tmp_path / "m" / "manifest.json", "--out", tmp_path / "o") == 1
