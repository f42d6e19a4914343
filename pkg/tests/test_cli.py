"""Exit codes, artifact layout, and byte-identical reruns of the CLI."""

import json
from pathlib import Path

import pytest

from fraclab.cli import main


def run(*argv):
    return main(list(argv))


def artifacts(out):
    out = Path(out)
    stem = out.with_suffix("")
    return {"json": out, "csv": stem.with_suffix(".csv"),
            "png": stem.with_suffix(".png"),
            "manifest": Path(str(stem) + ".manifest.json")}


def test_whitney_command_artifacts(tmp_path):
    out = tmp_path / "w.json"
    assert run("whitney", "--preset", "l-shape", "--j", "4",
               "--jmax", "5", "--out", str(out)) == 0
    art = artifacts(out)
    for key in ("json", "png", "manifest"):
        assert art[key].exists(), key
    payload = json.loads(art["json"].read_text())
    assert "manifest" in payload and "counts" in payload
    man = json.loads(art["manifest"].read_text())
    assert man["command"] == "whitney"
    assert "wall_time_s" in man


def test_rerun_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir(); b.mkdir()
    args = ["conditions", "--preset", "unit-cube", "--j", "4", "--jmax", "5",
            "--cond", "sharpe", "--p", "2", "--q", "1", "--delta", "0.5"]
    assert run(*args, "--out", str(a / "c.json")) == 0
    assert run("--jobs", "4", *args, "--out", str(b / "c.json")) == 0
    for ext in ("json", "csv", "png"):
        fa = artifacts(a / "c.json")[ext]
        fb = artifacts(b / "c.json")[ext]
        assert fa.read_bytes() == fb.read_bytes(), ext
    # side manifests differ only in wall time
    ma = json.loads(artifacts(a / "c.json")["manifest"].read_text())
    mb = json.loads(artifacts(b / "c.json")["manifest"].read_text())
    ma.pop("wall_time_s"); mb.pop("wall_time_s")
    assert ma == mb


def test_domain_then_whitney_from_file(tmp_path):
    dom = tmp_path / "d.json"
    assert run("domain", "--preset", "unit-cube", "--j", "4",
               "--out", str(dom)) == 0
    out = tmp_path / "w.json"
    assert run("whitney", "--domain", str(dom), "--jmax", "5",
               "--out", str(out)) == 0
    # input digest is recorded in the side manifest
    man = json.loads((tmp_path / "w.manifest.json").read_text())
    assert str(dom) in man["inputs"]


def test_sharpness_command(tmp_path):
    out = tmp_path / "exp"
    assert run("sharpness", "--m-max", "2", "--seed", "3",
               "--samples", "2048", "--q", "1", "--p", "2",
               "--delta", "0.5", "--out", str(out)) == 0
    assert (out / "experiment.csv").exists()
    assert (out / "manifest.json").exists()
    assert (out / "ratio.png").exists()
    man = json.loads((out / "manifest.json").read_text())
    assert man["seed"] == 3 and man["m_max"] == 2


def test_error_exit_codes(tmp_path, capsys):
    assert run("domain", "--preset", "no-such-preset",
               "--out", str(tmp_path / "x.json")) == 2
    assert "error" in capsys.readouterr().err
    # missing required --seed
    assert run("sharpness", "--out", str(tmp_path / "y")) == 2
    # missing input file
    assert run("whitney", "--domain", str(tmp_path / "absent.json"),
               "--jmax", "4", "--out", str(tmp_path / "w.json")) == 2


def test_version_and_help(capsys):
    assert run("--version") == 0
    assert run("--help") == 0
    capsys.readouterr()
