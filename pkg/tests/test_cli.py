import hashlib
import json
import math
import subprocess
import sys

import pytest

from mvlab.cli import main
from mvlab.measures import Dirac, Empirical

THETA_DW = 27 * (9 + math.sqrt(17)) / 128
DW = {"preset": "SymmetricDoubleWell", "theta": THETA_DW, "sigma2": 0.3}


def _put(path, obj):
    path.write_text(json.dumps(obj))
    return str(path), hashlib.sha256(path.read_bytes()).hexdigest()


def test_invariant(tmp_path, capsys):
    model, digest = _put(tmp_path / "m.json", DW)
    assert main(["--out-dir", str(tmp_path / "out"), "invariant", model]) == 0
    csv_lines = (tmp_path / "out" / "catalog.csv").read_text().splitlines()
    assert csv_lines[0] == f"# spec_sha256: {digest}"
    assert json.loads((tmp_path / "out" / "catalog.json").read_text())["count"] == 3
    assert "3 invariant measure(s)" in capsys.readouterr().out


def test_sweep(tmp_path):
    spec, digest = _put(tmp_path / "s.json", {"model": DW, "theta_grid": [3.0], "sigma2_grid": [0.3, 4.0],
                                              "outputs": {"csv": "phase.csv"}})
    assert main(["--out-dir", str(tmp_path), "sweep", spec]) == 0
    lines = (tmp_path / "phase.csv").read_text().splitlines()
    assert lines[0] == f"# spec_sha256: {digest}"
    assert lines[1] == "theta,sigma2,count"
    assert [int(l.split(",")[2]) for l in lines[2:]] == [3, 1]


def test_simulate_and_seed_override(tmp_path):
    obj = {"model": DW, "init": {"type": "dirac", "point": 1.2},
           "sim": {"n_particles": 200, "t_final": 0.2, "record_stride": 50, "seed": 1}}
    spec, digest = _put(tmp_path / "s.json", obj)
    assert main(["--out-dir", str(tmp_path / "a"), "simulate", spec]) == 0
    assert main(["--out-dir", str(tmp_path / "b"), "simulate", spec]) == 0
    assert main(["--seed", "2", "--out-dir", str(tmp_path / "c"), "simulate", spec]) == 0
    a = (tmp_path / "a" / "trajectory.csv").read_text()
    assert a == (tmp_path / "b" / "trajectory.csv").read_text()
    assert a != (tmp_path / "c" / "trajectory.csv").read_text()
    lines = a.splitlines()
    assert lines[0] == f"# spec_sha256: {digest}"
    assert lines[1] == "t,mean,m2,w2_root0,w2_root1,w2_root2"
    assert len(lines) == 2 + 5


def test_simulate_frozen_mean(tmp_path):
    obj = {"model": DW, "mean_path": 0.5, "catalog_refs": False,
           "sim": {"n_particles": 100, "t_final": 0.1, "record_stride": 100}}
    spec, _ = _put(tmp_path / "s.json", obj)
    assert main(["--out-dir", str(tmp_path), "simulate", spec]) == 0
    assert (tmp_path / "trajectory.csv").read_text().splitlines()[1] == "t,mean,m2"


def test_basin_small_spec(tmp_path):
    obj = {"model": DW, "inits": [{"type": "dirac", "point": 1.2}, {"type": "dirac", "point": -1.2}],
           "sim": {"n_particles": 1000, "t_final": 4.0, "record_stride": 1000}}
    spec, digest = _put(tmp_path / "b.json", obj)
    code = main(["--out-dir", str(tmp_path), "basin", spec])
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["spec_sha256"] == digest
    assert code == (0 if report["passed"] else 2)
    assert (tmp_path / "basin.csv").read_text().startswith(f"# spec_sha256: {digest}\n")


def test_ball_spec_control_exit_zero(tmp_path):
    obj = {"kind": "BallInvariance", "model": DW, "ball": {"a": 0.0, "r": 0.6, "n_inits": 2, "claimed": False},
           "sim": {"n_particles": 300, "t_final": 1.0, "record_stride": 100}}
    spec, _ = _put(tmp_path / "b.json", obj)
    assert main(["--out-dir", str(tmp_path), "basin", spec]) == 0


def test_certify_exit_codes(tmp_path):
    good, _ = _put(tmp_path / "good.json", DW)
    assert main(["--out-dir", str(tmp_path), "certify", good]) == 0
    reports = json.loads((tmp_path / "certify.json").read_text())
    assert len(reports) == 2 and all(r["all_passed"] for r in reports)
    bad, _ = _put(tmp_path / "bad.json", {**DW, "theta": 1.0})
    assert main(["--out-dir", str(tmp_path), "certify", bad]) == 2


def test_certify_custom_certificate(tmp_path, capsys):
    from mvlab.dissipativity import preset_certificates

    model, _ = _put(tmp_path / "m.json", DW)
    cert = preset_certificates("SymmetricDoubleWell", THETA_DW, math.sqrt(0.3))[1]
    c, _ = _put(tmp_path / "c.json", cert.to_json())
    assert main(["--out-dir", str(tmp_path), "certify", model, "--cert", c]) == 0
    custom, _ = _put(tmp_path / "custom.json", {"vprime": [[None, None, [0.0, -1.0, 0.0, 1.0]]], "theta": 3.0, "sigma": 0.5})
    assert main(["--out-dir", str(tmp_path), "certify", custom]) == 1
    assert "--cert" in capsys.readouterr().err


def test_order(tmp_path, capsys):
    a, _ = _put(tmp_path / "a.json", Dirac(0.0).to_json())
    b, _ = _put(tmp_path / "b.json", Empirical([0.5, 1.0]).to_json())
    assert main(["--out-dir", str(tmp_path), "order", a, b]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["relation"] == "LeqStrict"
    assert json.loads((tmp_path / "order.json").read_text()) == out


def test_runtime_errors_exit_one(tmp_path, capsys):
    assert main(["invariant", str(tmp_path / "missing.json")]) == 1
    assert "error" in capsys.readouterr().err
    bad, _ = _put(tmp_path / "bad.json", {"preset": "NoSuchWell", "theta": 1.0, "sigma2": 1.0})
    assert main(["invariant", bad]) == 1


def test_usage_error():
    with pytest.raises(SystemExit) as err:
        main(["frobnicate"])
    assert err.value.code == 2


def test_module_entry_point(tmp_path):
    model, _ = _put(tmp_path / "m.json", DW)
    proc = subprocess.run([sys.executable, "-m", "mvlab", "--out-dir", str(tmp_path), "invariant", model],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
