import csv
import hashlib
import json
import subprocess
import sys
from pathlib import Path

import pytest

from annulus_bubble_lab.cli import Pipeline, emit_manifest, main
from annulus_bubble_lab.config import OUT_ENV, load_config

QUICK = Path(__file__).resolve().parents[1] / "configs" / "quick.ini"


def write_ini(tmp_path, text):
    p = tmp_path / "run.ini"
    p.write_text(text)
    return str(p)


def test_b_not_above_a_exits_2(tmp_path, capsys):
    cfg = write_ini(tmp_path, "[geometry]\na = 2.0\nb = 1.0\n")
    assert main(["radial", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "0 < a < b" in capsys.readouterr().err


@pytest.mark.parametrize("text", ["[geometry]\nradius = 1\n", "[bogus]\nx = 1\n",
                                  "[ansatz]\nk_list = 16, 8\n", "[verify]\nquad_tol = -1\n",
                                  "[geometry]\na = one\n"])
def test_bad_config_exits_2(tmp_path, text):
    cfg = write_ini(tmp_path, text)
    assert main(["radial", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_bad_command_and_missing_file(tmp_path):
    assert main(["explode"]) == 2
    assert main(["radial", "--config", str(tmp_path / "none.ini")]) == 2


def test_numerical_failure_exits_3(tmp_path, capsys):
    cfg = write_ini(tmp_path, "[radial]\ntol = 1e-300\n")
    out = tmp_path / "o"
    assert main(["radial", "--config", cfg, "--out", str(out)]) == 3
    assert "radial" in capsys.readouterr().err
    man = json.loads((out / "manifest.json").read_text())
    assert man["stages"][0]["status"] == "failed"


def test_empty_manifest(tmp_path):
    pipe = Pipeline(load_config(None, str(tmp_path)), tmp_path)
    man = json.loads(emit_manifest(pipe, "radial").read_text())
    assert man["schema"] == "1"
    assert man["stages"] == [] and man["files"] == []


def test_radial_manifest_consistent(tmp_path):
    out = tmp_path / "o"
    assert main(["radial", "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    with open(out / "radial_summary.csv") as fh:
        summary = {row["key"]: float(row["value"]) for row in csv.DictReader(fh)}
    assert man["scalars"]["r0"] == summary["r0"]
    for f in man["files"]:
        assert hashlib.sha256((out / f["path"]).read_bytes()).hexdigest() == f["sha256"]
    with open(out / "radial.csv") as fh:
        assert next(csv.reader(fh)) == ["r", "u", "du"]


def test_hash_stability_and_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "env"))
    assert main(["radial"]) == 0
    first = (tmp_path / "env" / "manifest.json").read_bytes()
    assert main(["radial", "--out", str(tmp_path / "flag")]) == 0
    assert (tmp_path / "flag" / "manifest.json").read_bytes() == first


def test_console_script_subprocess(tmp_path):
    out = tmp_path / "o"
    res = subprocess.run([sys.executable, "-m", "annulus_bubble_lab.cli", "landscape",
                          "--config", str(QUICK), "--out", str(out)],
                         capture_output=True, text=True, timeout=300)
    assert res.returncode == 0, res.stderr
    man = json.loads((out / "manifest.json").read_text())
    assert [s["name"] for s in man["stages"]] == ["radial", "landscape"]
    assert abs(man["scalars"]["ell0"] - 0.37282968853) < 1e-8
    assert (out / "landscape.dat").read_text().startswith("ell r F\n")
