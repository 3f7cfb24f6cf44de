import json
import subprocess
import sys

import numpy as np
import pytest

import helpers
from markovmask import io as mio
from markovmask.cli import main


@pytest.fixture
def files(tmp_path):
    mio.write_chain(helpers.c1(), tmp_path / "c1.json")
    mio.write_chain(helpers.c5(), tmp_path / "c5.json")
    mio.write_chain(helpers.c2(), tmp_path / "c2.json")
    (tmp_path / "steps.json").write_text('{"kind": "steps_to_absorption"}')
    (tmp_path / "loop.json").write_text(
        '{"kind": "steady_state_loop", "args": {"state": "a1"}}')
    (tmp_path / "into_t2.json").write_text(
        '{"kind": "arrivals", "args": {"state": "t2"}}')
    return tmp_path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_analyze_prints_value(files, capsys):
    code, out, _ = run(capsys, "analyze", files / "c1.json", files / "steps.json",
                       "--mu", "state:t1")
    assert code == 0
    assert out.strip() == "2"


def test_analyze_json_with_diagnostics(files, capsys):
    code, out, _ = run(capsys, "analyze", files / "c1.json", files / "steps.json",
                       "--mu", "state:t1", "--diagnostics", "--format", "json")
    assert code == 0
    doc = json.loads(out)
    res = doc["results"][0]
    assert res["value"] == pytest.approx(2.0)
    assert res["condition"]["kappa"] == pytest.approx(np.sqrt(3))
    assert doc["stability"]["applicable"] is True


def test_analyze_table_for_several_masks(files, capsys):
    code, out, _ = run(capsys, "analyze", files / "c5.json", files / "steps.json",
                       files / "into_t2.json", "--mu", "state:t1",
                       "--solver", "lu-nopivot")
    assert code == 0
    assert "steps.json" in out and "into_t2.json" in out


def test_steady(files, capsys):
    code, out, _ = run(capsys, "steady", files / "c2.json", files / "loop.json",
                       "--mu", "state:t1")
    assert code == 0
    assert float(out) == pytest.approx(0.3)


def test_classify(files, capsys):
    code, out, _ = run(capsys, "classify", files / "c5.json", "--format", "json")
    assert code == 0
    doc = json.loads(out)
    assert doc["t"] == 2
    assert [c["kind"] for c in doc["classes"]] == ["transient", "transient", "ergodic"]


def test_compare_on_c5(files, capsys):
    code, out, _ = run(capsys, "compare", files / "c5.json", files / "steps.json",
                       "--mu", "state:t1", "--paths", 100000, "--seed", 1)
    assert code == 0
    doc = json.loads(out)
    assert doc["exact"] == pytest.approx(3.0)
    assert abs(doc["z"]) < 4


def test_simulate_time_average(files, capsys):
    code, out, _ = run(capsys, "simulate", files / "c2.json", files / "loop.json",
                       "--mu", "state:t1", "--paths", 20000, "--time-average",
                       "--horizon", 50)
    assert code == 0
    doc = json.loads(out)
    assert abs(doc["mean"] - 0.3) < 4 * doc["stderr"]
    assert set(doc) == {"mean", "stderr", "n_paths", "seed", "truncations"}


def test_kron(files, capsys):
    out_path = files / "pair.json"
    code, out, _ = run(capsys, "kron", files / "c1.json", files / "c1.json",
                       "-o", out_path)
    assert code == 0
    chain = mio.parse_chain(out_path)
    np.testing.assert_allclose(chain.dense(), np.kron(helpers.C1, helpers.C1))


def test_validation_error_exit_code(files, capsys):
    (files / "bad.json").write_text(
        '{"states": ["a", "b"],\n "matrix": [[0.5, 0.0],\n [0.2, 1.0]]}')
    code, _, err = run(capsys, "analyze", files / "bad.json", files / "steps.json",
                       "--mu", "state:a")
    assert code == 2
    assert "error" in err.lower()


def test_schema_error_exit_code(files, capsys):
    (files / "bad.json").write_text('{"states": ["a"],\n "matrix": [[1.5]]}')
    code, _, err = run(capsys, "classify", files / "bad.json")
    assert code == 2
    assert "matrix[0][0]" in err


def test_missing_file_exit_code(files, capsys):
    code, _, _ = run(capsys, "classify", files / "nope.json")
    assert code == 2


def test_truncation_exit_code(files, capsys):
    code, _, err = run(capsys, "simulate", files / "c1.json", files / "steps.json",
                       "--mu", "state:t1", "--paths", 1000, "--max-steps", 1)
    assert code == 3
    assert "max_steps" in err


def test_example_then_analyze(tmp_path, capsys):
    out = tmp_path / "chutes"
    code, _, _ = run(capsys, "example", "chutes", "-o", out)
    assert code == 0
    code, value, _ = run(capsys, "analyze", out / "chain.json",
                         out / "masks" / "game_length.json", "--mu", out / "mu.json")
    assert code == 0
    assert float(value) == pytest.approx(39.598, abs=1e-3)


def test_example_report(capsys):
    code, out, _ = run(capsys, "example", "chutes", "--format", "json")
    assert code == 0
    doc = json.loads(out)
    got = {r["event"]: r for r in doc["results"]}
    assert got["game_length"]["reference"] == 39.598
    assert doc["states"] == 82


def test_module_entry_point(files):
    proc = subprocess.run([sys.executable, "-m", "markovmask", "analyze",
                           str(files / "c1.json"), str(files / "steps.json"),
                           "--mu", "state:t1"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.strip() == "2"
