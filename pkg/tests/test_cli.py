import io
import json
import subprocess
import sys

import pytest

from ocpfem.cli import RunConfig, main, parse_config
from ocpfem.errors import ConfigError


def run(argv):
    buf = io.StringIO()
    code = main(argv, out=buf)
    return code, buf.getvalue()


def data_rows(text):
    return [line for line in text.splitlines() if line and not line.startswith("#")][1:]


def test_empty_config_gives_defaults():
    assert parse_config("") == RunConfig()


def test_config_parsing():
    cfg = parse_config("schedule = 8,16,32\ncontrol = variational  # comment\n")
    assert cfg.schedule == (8, 16, 32) and cfg.control == "variational"
    assert parse_config("rho = h-squared").control == "h-squared"
    assert parse_config("gamma=0.5", {"gamma": "0.25"}).gamma == 0.25
    assert parse_config("layers = auto").layers is None


@pytest.mark.parametrize(
    "text, match",
    [
        ("gamma=0", r"gamma must be in \(0,1\], got 0"),
        ("gamma=2", "gamma"),
        ("colour=red", "unknown key"),
        ("gamma", "expected key=value"),
        ("schedule=8,x", "schedule"),
        ("tol=1", "tol"),
        ("command=lod-study\nfine_n=100", "multiple"),
    ],
)
def test_invalid_config_rejected(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text)


def test_config_errors_exit_2(tmp_path, capsys):
    assert run(["study", "--gamma", "0"])[0] == 2
    assert "gamma must be in (0,1], got 0" in capsys.readouterr().err
    bad = tmp_path / "bad.cfg"
    bad.write_text("not a config line\n")
    assert run(["study", "--config", str(bad)])[0] == 2
    assert run(["study", "--config", str(tmp_path / "missing.cfg")])[0] == 2
    assert run(["study", "--bogus", "1"])[0] == 2
    assert run(["frobnicate"])[0] == 2


def test_default_study(tmp_path):
    out = tmp_path / "study.csv"
    code, text = run(["study", "--output", str(out), "--json", str(tmp_path / "s.json")])
    assert code == 0
    csv_text = out.read_text()
    assert len(data_rows(csv_text)) == 4
    assert "# gamma = 1" in csv_text and "output" not in csv_text
    assert "fitted rates:" in text
    summary = json.loads((tmp_path / "s.json").read_text())
    assert summary["config"]["schedule"] == "8,16,32,64"


def test_study_is_deterministic(tmp_path):
    paths = [tmp_path / "a.csv", tmp_path / "b.csv"]
    for p in paths:
        assert run(["study", "--schedule", "4,8,16", "--output", str(p)])[0] == 0
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_flags_override_config_file(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("schedule = 4,8,16,32\ngamma = 0.5\n")
    out = tmp_path / "o.csv"
    assert run(["study", "--config", str(cfg), "--schedule", "4,8", "--output", str(out)])[0] == 0
    text = out.read_text()
    assert len(data_rows(text)) == 2
    assert "# gamma = 0.5" in text


def test_solver_failure_exit_1():
    code, text = run(["solve", "--gamma", "0.1", "--bound", "5", "--n", "16", "--max-iter", "1"])
    assert code == 1
    assert "residual history:" in text


def test_study_failure_reports_levels():
    code, text = run(["study", "--gamma", "0.1", "--bound", "5", "--schedule", "8,16", "--max-iter", "1"])
    assert code == 1
    assert "failed" in text and "residual history:" in text


def test_solve_writes_fields(tmp_path):
    code, text = run(["solve", "--n", "4", "--fields", str(tmp_path / "f")])
    assert code == 0
    assert json.loads(text)["iterations"] >= 1
    state = (tmp_path / "f" / "state.csv").read_text().splitlines()
    header = [line for line in state if not line.startswith("#")]
    assert header[0] == "vertex_index,x,y,value" and len(header) == 26
    control = (tmp_path / "f" / "control.csv").read_text()
    assert "point_index,x,y,value" in control


def test_check_theorems_small():
    code, text = run(["check-theorems", "--schedule", "4,8,16"])
    assert code == 0
    assert "FAIL" not in text and text.count("PASS") == 8


def test_dump_mesh():
    code, text = run(["dump-mesh", "--n", "1"])
    assert code == 0
    verts, cells = text.split("\n\n")
    assert len(verts.splitlines()) == 4 and len(cells.strip().splitlines()) == 2


def test_lod_study_small(tmp_path):
    code, text = run(["lod-study", "--coarse-n", "2,4", "--fine-n", "16", "--period", "0.25",
                      "--contrast", "10", "--basis-output", str(tmp_path / "basis.csv")])
    assert code == 0
    assert "source energy rate" in text
    assert "psi_" in (tmp_path / "basis.csv").read_text()


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "ocpfem", "dump-mesh", "--n", "1"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert len(proc.stdout.split("\n\n")[0].splitlines()) == 4
