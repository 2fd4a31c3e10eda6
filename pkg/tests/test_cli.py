import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from assets import build_workspace, run
from hsipost import io
from hsipost.cli import main
from hsipost.core import HSICube, SpectralResponse, WavelengthGrid


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    return build_workspace(tmp_path_factory.mktemp("ws"))


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_forward_srf_identity(tmp_path, rng):
    grid = WavelengthGrid([450.0, 550.0, 650.0])
    cube = HSICube(rng.uniform(size=(3, 5, 4)).astype(np.float32).astype(float), grid)
    io.write_cube(cube, tmp_path / "c.hsc")
    io.write_srf(SpectralResponse(np.eye(3), grid), tmp_path / "q.csv")
    run("forward", "--op", "srf", "--cube", tmp_path / "c.hsc", "--srf", tmp_path / "q.csv",
        "--out", tmp_path / "y.hsc")
    assert np.array_equal(io.read_array(tmp_path / "y.hsc"), cube.data)


def test_forward_all_kinds(ws, tmp_path):
    for kind, extra in [("srf", []), ("optics", ["--psf", ws / "psf.hsc"]), ("cassi", ["--mask", ws / "mask.hsc"])]:
        run("forward", "--op", kind, "--cube", ws / "gt.hsc", "--srf", ws / "srf.csv", *extra,
            "--sigma-y", 0.01, "--seed", 3, "--out", tmp_path / f"{kind}.hsc")
    assert io.read_array(tmp_path / "cassi.hsc").shape == (1, 12, 12 + 30)
    assert io.read_array(tmp_path / "optics.hsc").shape == (3, 12, 12)


def test_sample_then_metrics(ws, tmp_path, capsys):
    run("forward", "--op", "srf", "--cube", ws / "gt.hsc", "--srf", ws / "srf.csv", "--sigma-y", 0.01,
        "--seed", 1, "--out", tmp_path / "y.hsc")
    run("sample", "--config", ws / "run.ini", "--measurement", tmp_path / "y.hsc", "--prior", ws / "prior",
        "--out-dir", tmp_path / "ens")
    members, meta = io.read_ensemble(tmp_path / "ens")
    assert members.shape == (6, 31, 12, 12)
    assert members.min() >= 0 and members.max() <= 1
    assert meta["operator"]["kind"] == "srf" and len(meta["seeds"]) == 6
    assert np.allclose(io.read_array(tmp_path / "ens" / "mean.hsc"), members.mean(0), atol=1e-6)
    run("metrics", "--ref", ws / "gt.hsc", "--ensemble-dir", tmp_path / "ens", "--out", tmp_path / "r.csv")
    rows = _rows(tmp_path / "r.csv")
    assert len(rows) == 1
    assert set(rows[0]) >= {"psnr", "sam", "picp", "bcm_rate", "mean_std", "nll"}
    assert 0 <= float(rows[0]["picp"]) <= 1

    # a degenerate sweep reproduces the sample + metrics run
    run("sweep", "--config", ws / "run.ini", "--grid", "sigma_y=0.001;nu=1;lambda=0.1",
        "--measurement", tmp_path / "y.hsc", "--prior", ws / "prior", "--ref", ws / "gt.hsc",
        "--out", tmp_path / "s.csv")
    sweep = _rows(tmp_path / "s.csv")
    assert len(sweep) == 1
    for key in rows[0]:
        assert sweep[0][key] == rows[0][key], key


def test_sweep_grid_product(ws, tmp_path):
    run("forward", "--op", "srf", "--cube", ws / "gt.hsc", "--srf", ws / "srf.csv", "--out", tmp_path / "y.hsc")
    run("sweep", "--config", ws / "run.ini", "--grid", "sigma_y=0.001,0.1;lambda=0.01,0.1,1",
        "--measurement", tmp_path / "y.hsc", "--prior", ws / "prior", "--ref", ws / "gt.hsc",
        "--out", tmp_path / "s.csv")
    rows = _rows(tmp_path / "s.csv")
    assert [(r["sigma_y"], r["lambda"]) for r in rows] == [
        ("0.001", "0.01"), ("0.001", "0.1"), ("0.001", "1.0"), ("0.1", "0.01"), ("0.1", "0.1"), ("0.1", "1.0")]


def test_cassi_config_sampling(ws, tmp_path):
    ini = (ws / "run.ini").read_text().replace("kind = srf", "kind = cassi")
    (ws / "cassi.ini").write_text(ini)
    run("forward", "--op", "cassi", "--cube", ws / "gt.hsc", "--mask", ws / "mask.hsc", "--out", tmp_path / "y.hsc")
    run("sample", "--config", ws / "cassi.ini", "--measurement", tmp_path / "y.hsc", "--prior", ws / "prior",
        "--out-dir", tmp_path / "ens")
    assert io.read_ensemble(tmp_path / "ens")[0].shape[0] == 6


def test_metamer_commands(ws, tmp_path, capsys):
    io.write_labels(np.repeat([[1] * 6 + [2] * 6], 12, axis=0), tmp_path / "lab.pgm")
    run("metamer", "black", "--cube", ws / "gt.hsc", "--labels", tmp_path / "lab.pgm", "--srf", ws / "srf.csv",
        "--seed", 1, "--out", tmp_path / "b.hsc")
    line = capsys.readouterr().out.strip().splitlines()[-1]
    fields = dict(kv.split("=") for kv in line.split())
    assert float(fields["rgb_psnr_pre_clip"]) > 100
    assert "out_of_gamut" in fields
    run("metamer", "pu", "--cube", ws / "gt.hsc", "--srf", ws / "srf.csv", "--m", 8, "--seed", 1,
        "--out", tmp_path / "p.hsc")
    fields = dict(kv.split("=") for kv in capsys.readouterr().out.split())
    assert float(fields["rgb_psnr_post_clip"]) > 70
    out = io.read_cube(tmp_path / "p.hsc").data
    assert out.min() >= 0 and out.max() <= 1


def _error(capsys, argv):
    code = main([str(a) for a in argv])
    err = capsys.readouterr().err.strip()
    assert code != 0
    assert len(err.splitlines()) == 1
    return code, json.loads(err)


def test_errors_are_single_json_lines(ws, tmp_path, capsys):
    code, e = _error(capsys, ["forward", "--op", "nope"])
    assert code == 2 and e["error"] == "UsageError"
    code, e = _error(capsys, ["forward", "--op", "srf", "--cube", tmp_path / "missing.hsc",
                              "--srf", ws / "srf.csv", "--out", tmp_path / "y.hsc"])
    assert e["error"] == "FileNotFoundError"
    (tmp_path / "bad.hsc").write_bytes(b"HSC1\x01\x00")
    code, e = _error(capsys, ["forward", "--op", "srf", "--cube", tmp_path / "bad.hsc",
                              "--srf", ws / "srf.csv", "--out", tmp_path / "y.hsc"])
    assert e["error"] == "FormatError" and "byte offset" in e["message"]
    (tmp_path / "bad.ini").write_text("[sampler]\nwhatever = 3\n")
    code, e = _error(capsys, ["sample", "--config", tmp_path / "bad.ini", "--measurement", tmp_path / "y.hsc",
                              "--prior", ws / "prior", "--out-dir", tmp_path / "e"])
    assert e["error"] == "ConfigurationError"
    code, e = _error(capsys, ["mask-gen", "--rows", 4, "--cols", 4, "--density", 1.5, "--out", tmp_path / "m.hsc"])
    assert e["error"] == "ConfigurationError"
    code, e = _error(capsys, [])
    assert e["error"] == "UsageError"


def test_console_script_entry(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "hsipost.cli", "mask-gen", "--rows", "3", "--cols", "3",
                           "--out", str(tmp_path / "m.hsc")], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("rows=3")
    proc = subprocess.run([sys.executable, "-m", "hsipost.cli", "bogus"], capture_output=True, text=True)
    assert proc.returncode == 2 and json.loads(proc.stderr)["error"] == "UsageError"
