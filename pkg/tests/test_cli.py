from __future__ import annotations

import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from brwlab.cli import RESULT_COLUMNS, main
from brwlab.config import parse_config
from brwlab.kernel import box_graph, nearest_neighbor_kernel
from brwlab.spectral import expected_occupancy_vector


def _write(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return str(p)


def _rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def test_spectral_sweep_plotdata(tmp_path):
    out = tmp_path / "o"
    assert main(["spectral-sweep", "--config", _write(tmp_path, {}), "--out", str(out)]) == 0
    rows = _rows(out / "plotdata.csv")
    assert [int(r["m"]) for r in rows] == list(range(1, 9))
    vals = [float(r["lambda_s_box"]) for r in rows]
    assert all(b <= a for a, b in zip(vals, vals[1:]))
    res = _rows(out / "results.csv")
    assert list(res[0]) == RESULT_COLUMNS
    raw = (out / "results.csv").read_bytes()
    assert raw.endswith(b"\r\n") and b"\r\n" in raw.split(b"\r\n", 1)[0] + b"\r\n"
    man = json.loads((out / "manifest.json").read_text())
    assert man["experiment"] == "spectral-sweep" and man["config"]["m_list"] == list(range(1, 9))
    assert "code_version" in man and "seed" in man


def test_unknown_key_rejected(tmp_path, capsys):
    cfg = _write(tmp_path, {"profile": {"kind": "brw", "lam": 1.0}, "lamda": 1.0})
    assert main(["survive", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "lamda" in err and "Extra inputs are not permitted" in err
    assert not (tmp_path / "o").exists()


def test_field_level_diagnostics(tmp_path, capsys):
    cfg = _write(tmp_path, {"T": -1, "profile": {"kind": "ktype", "lam": 1.0}})
    assert main(["survive", "--config", cfg]) == 2
    err = capsys.readouterr().err
    assert "T:" in err and "needs k" in err


def test_wrong_experiment_and_bad_json(tmp_path):
    assert main(["survive", "--config", _write(tmp_path, {"experiment": "bisect"})]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["survive", "--config", str(bad)]) == 2
    assert main(["survive", "--config", _write(tmp_path, [1, 2])]) == 2


def test_seed_range():
    with pytest.raises(Exception):
        parse_config("survive", {"seed": 2**64})
    assert parse_config("survive", {"seed": 2**64 - 1}).seed == 2**64 - 1


def test_survive_byte_identical(tmp_path):
    cfg = _write(tmp_path, {"graph": {"kind": "box", "m": 6}, "trials": 50, "T": 5.0,
                            "profile": {"kind": "ktype", "lam": 2.0, "k": 2}})
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["survive", "--config", cfg, "--seed", "7", "--out", str(a)]) == 0
    assert main(["survive", "--config", cfg, "--seed", "7", "--out", str(b), "--threads", "3"]) == 0
    assert (a / "results.csv").read_bytes() == (b / "results.csv").read_bytes()
    c = tmp_path / "c"
    assert main(["survive", "--config", cfg, "--seed", "8", "--out", str(c)]) == 0
    assert (a / "results.csv").read_bytes() != (c / "results.csv").read_bytes()


def test_default_output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("BRWLAB_OUT", str(tmp_path / "root"))
    cfg = _write(tmp_path, {"m_list": [1, 2]})
    assert main(["spectral-sweep", "--config", cfg]) == 0
    made = list((tmp_path / "root").iterdir())
    assert len(made) == 1 and made[0].name.startswith("spectral-sweep-")
    assert sorted(p.name for p in made[0].iterdir()) == ["manifest.json", "plotdata.csv", "results.csv"]


def test_outputs_stay_in_directory(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    cfg = _write(tmp_path, {"rows": 20, "trials": 5})
    assert main(["oriented-perc", "--config", cfg, "--out", "only"]) == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == ["cfg.json", "only"]


def test_oracle_check_passes(tmp_path):
    out = tmp_path / "o"
    cfg = _write(tmp_path, {"trials": 20000})
    assert main(["oracle-check", "--config", cfg, "--out", str(out)]) == 0
    res = _rows(out / "results.csv")
    assert len(res) == 4 and all(r["status"] == "pass" for r in res)
    assert len(_rows(out / "plotdata.csv")) == 12


def test_oracle_check_zero_rate_is_exact(tmp_path):
    g = box_graph(nearest_neighbor_kernel(1, 1.0), None, 1)
    for t in (0.5, 1.0, 3.0):
        v = expected_occupancy_vector(g, 0.0, g.origin, t)
        want = np.zeros(3)
        want[g.origin] = math.exp(-t)
        assert np.allclose(v, want, rtol=1e-12, atol=0)
    out = tmp_path / "o"
    cfg = _write(tmp_path, {"lam_list": [0.0], "t_list": [1.0], "trials": 5000})
    assert main(["oracle-check", "--config", cfg, "--out", str(out)]) == 0
    plot = _rows(out / "plotdata.csv")
    off = [r for r in plot if int(r["vertex"]) != g.origin]
    assert all(float(r["mc_mean"]) == 0.0 and float(r["series"]) == 0.0 for r in off)
    assert all(r["status"] == "pass" for r in plot)


def test_oracle_check_low_power(tmp_path):
    out = tmp_path / "o"
    assert main(["oracle-check", "--config", _write(tmp_path, {"trials": 10}), "--out", str(out)]) == 0
    res = _rows(out / "results.csv")
    assert {r["status"] for r in res} == {"low-power"}
    man = json.loads((out / "manifest.json").read_text())
    assert man["details"]["low_power"] and man["details"]["failed_cells"] == 0


def test_oracle_check_graph_too_large(tmp_path, capsys):
    cfg = _write(tmp_path, {"graph": {"kind": "box", "m": 150}, "trials": 10})
    assert main(["oracle-check", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert "GraphTooLargeError" in err and "301" in err


def test_replay_check(tmp_path, capsys):
    out = tmp_path / "o"
    cfg = _write(tmp_path, {"eps_list": [0.0, 0.2], "rows": 20, "trials": 10})
    assert main(["oriented-perc", "--config", cfg, "--seed", "3", "--out", str(out)]) == 0
    assert main(["replay", str(out / "manifest.json"), "--check"]) == 0
    assert "replay identical" in capsys.readouterr().out
    assert (out / "replay" / "results.csv").exists()
    (out / "results.csv").write_text("tampered\r\n")
    assert main(["replay", str(out / "manifest.json"), "--check", "--out", str(tmp_path / "r2")]) == 1


def test_inconclusive_flag(tmp_path, capsys):
    # four trials and no doublings: no Wilson interval can clear theta = 0.5
    out = tmp_path / "o"
    cfg = _write(tmp_path, {"graph": {"kind": "box", "m": 3}, "lam_range": [0.0, 6.0], "tol": 2.0,
                            "trials": 4, "max_doublings": 0, "T": 4.0, "theta": 0.5,
                            "max_population": 10000})
    assert main(["bisect", "--config", cfg, "--out", str(out)]) == 0
    assert "inconclusive" in capsys.readouterr().out
    man = json.loads((out / "manifest.json").read_text())
    assert man["inconclusive"] is True
    assert _rows(out / "results.csv")[0]["status"] == "inconclusive"


def test_console_script(tmp_path):
    cfg = _write(tmp_path, {"m_list": [1]})
    r = subprocess.run([sys.executable, "-m", "brwlab.cli", "spectral-sweep", "--config", cfg,
                        "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    r = subprocess.run([sys.executable, "-m", "brwlab.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "oracle-check" in r.stdout
