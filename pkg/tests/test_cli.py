import json
import subprocess
import sys

import pytest

from demix import cli
from demix.experiments import DEFAULT_SEED


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def _values(text):
    return dict(line.split(" = ", 1) for line in text.splitlines() if " = " in line)


def test_predict_sign_vector(capsys):
    code, out, _ = run(capsys, "predict", "--d", "200", "--sign", "--m", "200", "--eta", "0.01")
    vals = _values(out)
    assert code == 0
    assert float(vals["Delta"]) == 100 and float(vals["sigma"]) == 10
    assert float(vals["lambda*"]) == pytest.approx(49.06, abs=0.01)
    assert vals["verdict"] == "STABLE_WHP"


def test_predict_writes_json(capsys, tmp_path):
    out = tmp_path / "p.json"
    code, _, _ = run(capsys, "predict", "--d", "200", "--sign", "--m", "25", "--out", str(out))
    assert code == 0 and json.loads(out.read_text())["verdict"] == "FAIL_WHP"


def test_sdim_cross_check(capsys):
    code, out, _ = run(capsys, "sdim", "--l1", "--k", "10", "--d", "100", "--mc-trials", "2000")
    vals = _values(out)
    assert code == 0 and vals["agree"] == "True"
    assert float(vals["formula"]) == pytest.approx(32.87935054536301, abs=1e-6)


def test_solve_runs(capsys):
    code, out, _ = run(capsys, "solve", "--d", "40", "--l1", "2", "--sign", "--identity")
    vals = _values(out)
    assert code == 0 and vals["success"] == "True"


@pytest.mark.parametrize(
    "argv",
    [
        ["--bogus"],
        ["predict", "--d", "10"],
        ["predict", "--d", "10", "--sign", "--m", "11"],
        ["sdim", "--l1", "--d", "10"],
        ["nosuchcommand"],
        ["phase-grid"],
    ],
)
def test_usage_errors_exit_1(capsys, argv):
    code, _, err = run(capsys, *argv)
    assert code == 1 and err


def test_numerical_failure_exits_2(capsys, monkeypatch):
    from demix.errors import NonConvergenceError

    def boom(*a, **k):
        raise NonConvergenceError("stalled", diagnostics={"iterations": 3})

    monkeypatch.setattr(cli.solver, "solve_constrained", boom)
    code, _, err = run(capsys, "solve", "--d", "10", "--l1", "1", "--identity")
    assert code == 2 and "numerical failure" in err


def test_config_overlay_and_unknown_key(capsys, tmp_path):
    good = tmp_path / "good.json"
    good.write_text(json.dumps({"d": 200, "m": 25}))
    code, out, _ = run(capsys, "predict", "--config", str(good), "--sign")
    assert code == 0 and _values(out)["verdict"] == "FAIL_WHP"
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"d": 200, "measurements": 25}))
    code, _, err = run(capsys, "predict", "--config", str(bad), "--sign")
    assert code == 1 and "measurements" in err


def test_seed_precedence(monkeypatch):
    ns = cli.argparse.Namespace(seed=None)
    monkeypatch.delenv("DEMIX_SEED", raising=False)
    assert cli.root_seed(ns) == DEFAULT_SEED
    monkeypatch.setenv("DEMIX_SEED", "17")
    assert cli.root_seed(ns) == 17
    assert cli.root_seed(cli.argparse.Namespace(seed=3)) == 3
    monkeypatch.setenv("DEMIX_SEED", "x")
    with pytest.raises(cli.UsageError):
        cli.root_seed(ns)


def test_seeded_runs_repeat(capsys, monkeypatch):
    argv = ["solve", "--d", "30", "--l1", "3", "--m", "20", "--noise", "0.1"]
    monkeypatch.setenv("DEMIX_SEED", "11")
    a = run(capsys, *argv)[1]
    b = run(capsys, *argv, "--seed", "11")[1]
    c = run(capsys, *argv, "--seed", "12")[1]
    assert a == b and a != c


def test_phase_grid_tiny(capsys, tmp_path):
    cfg = tmp_path / "tiny.json"
    cfg.write_text(json.dumps({"name": "tiny", "d": 12, "experiment": "SPARSE_SPARSE_SIGN",
                               "k1_range": [1, 2], "k2_range": [1, 2], "m_values": [12]}))
    code, out, _ = run(capsys, "phase-grid", "--config", str(cfg), "--out", str(tmp_path / "o1"), "--trials", "1", "--threads", "1")
    assert code == 0 and "wall_clock" in out
    run(capsys, "phase-grid", "--config", str(cfg), "--out", str(tmp_path / "o2"), "--trials", "1", "--threads", "2")
    for name in ("tiny.csv", "tiny_m12.svg"):
        assert (tmp_path / "o1" / name).read_bytes() == (tmp_path / "o2" / name).read_bytes()
    rows = (tmp_path / "o1" / "tiny.csv").read_text().splitlines()
    assert len(rows) == 5 and rows[1].split(",")[5] == "1"


def test_phase_grid_bad_schema(capsys, tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"d": 12, "experiment": "SPARSE_SPARSE_SIGN", "k1_range": [1], "k2_range": [1], "typo": 1}))
    code, _, err = run(capsys, "phase-grid", "--config", str(cfg), "--out", str(tmp_path))
    assert code == 1 and "typo" in err


def test_small_geometry_commands(capsys):
    code, out, _ = run(capsys, "intrinsic-volumes", "--cone", "orthant", "--d", "3", "--trials", "10000")
    assert code == 0 and "v_" in out
    code, out, _ = run(capsys, "crofton", "--cones", "ray", "halfspace", "--d", "2", "--trials", "300")
    assert code == 0 and abs(float(_values(out)["formula"]) - 0.5) < 0.03
    code, out, _ = run(capsys, "kinematic-check", "--c", "orthant", "--D", "orthant", "--d", "3", "--k", "1", "--trials", "10", "--inner-trials", "100")
    assert code == 0


def test_console_script_entry_point():
    res = subprocess.run([sys.executable, "-m", "demix.cli", "predict", "--d", "60", "--delta", "30", "--m", "60"], capture_output=True, text=True)
    assert res.returncode == 0 and "verdict" in res.stdout
