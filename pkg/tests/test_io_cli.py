import json
import math
import subprocess
import sys
from fractions import Fraction

import numpy as np
import pytest

from pwflow import io
from pwflow.cli import ExperimentConfig, ConfigError, build_config, build_parser, main
from pwflow.game import GameMatrix, shapley_matrix


@pytest.fixture
def B_json(tmp_path):
    path = tmp_path / "B.json"
    io.write_json(path, shapley_matrix(Fraction(618, 1000), exact=True).to_json())
    return path


@pytest.fixture
def I3_json(tmp_path):
    path = tmp_path / "I3.json"
    io.write_json(path, GameMatrix(np.eye(3, dtype=int).tolist()).to_json())
    return path


def _run(capsys, argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr().out.strip().splitlines()
    return code, (json.loads(out[-1]) if out else None)


# -- io -------------------------------------------------------------------------

def test_json_is_schema_tagged(tmp_path):
    io.write_json(tmp_path / "a.json", {"x": Fraction(1, 3)})
    data = io.read_json(tmp_path / "a.json")
    assert data["schema"] == "pwflow/v1" and data["x"] == "1/3"


def test_foreign_schema_rejected(tmp_path):
    (tmp_path / "b.json").write_text('{"schema": "other/v9"}')
    with pytest.raises(ValueError):
        io.read_json(tmp_path / "b.json")


def test_csv_roundtrip(tmp_path):
    io.write_csv(tmp_path / "c.csv", ["a", "b"], [[1, Fraction(1, 2)], [0.25, "x"]])
    header, rows = io.read_csv(tmp_path / "c.csv")
    assert header == ["a", "b"] and rows == [["1", "1/2"], ["0.25", "x"]]


def test_manifest_lists_every_file(tmp_path):
    (tmp_path / "x.csv").write_text("a\n1\n")
    (tmp_path / "sub").mkdir()
    (tmp_path / "sub" / "y.txt").write_text("hi")
    io.write_manifest(tmp_path, {"seed": 1})
    data = io.read_json(tmp_path / "manifest.json")
    assert set(data["outputs"]) == {"x.csv", "sub/y.txt"}
    assert io.check_manifest(tmp_path) == []
    (tmp_path / "x.csv").write_text("a\n2\n")
    assert io.check_manifest(tmp_path) == ["x.csv"]


def test_svg_output(tmp_path):
    io.svg_plot([np.array([[0, 0], [1, 1], [2, 0]])], tmp_path / "p.svg", kind="polyline")
    text = (tmp_path / "p.svg").read_text()
    assert text.startswith("<?xml") and 'version="1.1"' in text and "<polyline" in text


# -- config ---------------------------------------------------------------------

def test_flags_override_config(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"seed": 3, "rho": "1/2", "exact": True}))
    args = build_parser().parse_args(["nash", "--config", str(cfg_path), "--seed", "9"])
    cfg = build_config(args)
    assert cfg.seed == 9 and cfg.rho == "1/2" and cfg.exact


@pytest.mark.parametrize("bad", [{"eps_tie": 0}, {"segment_cap": -1}, {"kind": "gradient"},
                                 {"rho": "-1"}])
def test_invalid_config(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig(**bad).validate()


def test_unknown_config_key(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"colour": "red"}))
    assert main(["nash", "--config", str(cfg_path)]) == 3


# -- subcommands ----------------------------------------------------------------

def test_nash_on_B(capsys, B_json, tmp_path):
    code, res = _run(capsys, ["nash", "--matrix", B_json, "--exact", "--out", tmp_path / "o"])
    assert code == 0
    assert res["p_bar"] == ["1/3"] * 3 and res["q_bar"] == ["1/3"] * 3
    assert io.check_manifest(tmp_path / "o") == []


def test_transversality_identity(capsys, I3_json):
    code, res = _run(capsys, ["transversality", "--matrix", I3_json])
    assert code == 0 and res["assumption1_ok"] is False


def test_simulate_law_on_file(capsys, B_json, tmp_path):
    out = tmp_path / "sim"
    code, res = _run(capsys, ["simulate", "--matrix", B_json, "--kind", "best_response",
                              "--t", "10", "--start", "random", "--seed", "7", "--out", out])
    assert code == 0 and res["seed"] == 7
    header, rows = io.read_csv(out / "trajectory.csv")
    t = np.array([float(r[header.index("t")]) for r in rows])
    H = np.array([float(r[header.index("H")]) for r in rows])
    assert math.isclose(t[-1], 10.0)
    assert np.max(np.abs(H / H[0] - np.exp(-t))) <= 1e-8


def test_simulate_fictitious_play(capsys, B_json):
    code, res = _run(capsys, ["simulate", "--matrix", B_json, "--kind", "fictitious_play",
                              "--t", "3", "--seed", "1"])
    assert code == 0 and res["H_decay_residual"] <= 1e-8


def test_project(capsys, B_json):
    code, res = _run(capsys, ["project", "--matrix", B_json, "--exact", "--rho", "1/10",
                              "--point", "1/2,1/4,1/4;1/5,2/5,2/5"])
    assert code == 0 and res["rho"] == "1/10"


def test_section_and_return_map(capsys, tmp_path):
    code, res = _run(capsys, ["section", "--out", tmp_path / "s"])
    assert code == 0 and len(res["itinerary"]) == 6
    assert 0 < res["annulus_ratio"] < 1
    assert io.read_json(tmp_path / "s" / "manifest.json")["summary"]["annulus_ratio"] == res["annulus_ratio"]
    assert (tmp_path / "s" / "section.json").exists()
    code, res = _run(capsys, ["return-map", "--n", "5", "--point", "0.5,1.5",
                              "--out", tmp_path / "r"])
    assert code == 0
    header, rows = io.read_csv(tmp_path / "r" / "orbit.csv")
    assert len(rows) == 6


def test_modelmap_fixed_points(capsys, tmp_path):
    code, res = _run(capsys, ["modelmap", "--start", "0.3,0.1", "--n", "5",
                              "--fixed-points", "0.001,1", "--circle-images", "2",
                              "--samples", "100", "--out", tmp_path / "m"])
    assert code == 0 and res["fixed_points"] >= 10


def test_plot(capsys, tmp_path):
    io.write_csv(tmp_path / "d.csv", ["x", "y", "g"], [[0, 0, "a"], [1, 1, "a"], [2, 0, "b"]])
    code, res = _run(capsys, ["plot", "--csv", tmp_path / "d.csv", "--x", "x", "--y", "y",
                              "--group", "g", "--svg", tmp_path / "d.svg"])
    assert code == 0 and res["series"] == 2
    assert main(["plot", "--csv", str(tmp_path / "d.csv"), "--x", "nope", "--y", "y",
                 "--svg", str(tmp_path / "e.svg")]) == 3


# -- sweeps ---------------------------------------------------------------------

def test_beta_sweep_writes_three_scatters(capsys, tmp_path):
    out = tmp_path / "sw"
    code, res = _run(capsys, ["sweep", "--betas", "0.55,0.618,0.70", "--returns", "20",
                              "--workers", "3", "--out", out])
    assert code == 0 and res == {"failed": 0, "runs": 3}
    for b in ("0.55", "0.618", "0.70"):
        assert (out / f"scatter_beta_{b}.csv").exists()
    assert io.check_manifest(out) == []


def test_level_sweep_drift(capsys, tmp_path):
    out = tmp_path / "lv"
    code, res = _run(capsys, ["sweep", "--starts", "100", "--out", out])
    assert code == 0 and res["runs"] == 100 and res["failed"] == 0
    header, rows = io.read_csv(out / "summary.csv")
    drift = [float(r[header.index("H_drift")]) for r in rows]
    assert max(drift) <= 1e-10
    assert all(int(r[header.index("returns")]) > 0 for r in rows)


def test_empty_grid(capsys, tmp_path):
    out = tmp_path / "empty"
    code, res = _run(capsys, ["sweep", "--betas", "", "--out", out])
    assert code == 0 and res == {"failed": 0, "runs": 0}
    header, rows = io.read_csv(out / "summary.csv")
    assert rows == []


def test_sweep_all_failing_exits_4(capsys, tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"grid": {"type": "section", "betas": ["0.618"],
                                        "start": [100.0, 100.0]}}))
    code, res = _run(capsys, ["sweep", "--config", cfg, "--out", tmp_path / "bad"])
    assert code == 4 and res["failed"] == 1
    header, rows = io.read_csv(tmp_path / "bad" / "summary.csv")
    assert rows[0][1].startswith("error")


def test_rational_sweep_is_deterministic(capsys, tmp_path):
    digests = []
    for name in ("a", "b"):
        out = tmp_path / name
        code, _ = _run(capsys, ["sweep", "--exact", "--starts", "3", "--workers", "2",
                                "--out", out])
        assert code == 0
        digests.append(((out / "summary.csv").read_bytes(),
                        io.read_json(out / "manifest.json")["outputs"]))
    assert digests[0] == digests[1]


# -- exit codes -----------------------------------------------------------------

def test_unknown_subcommand_exits_2():
    proc = subprocess.run([sys.executable, "-m", "pwflow.cli", "frobnicate"],
                          capture_output=True, text=True)
    assert proc.returncode == 2


def test_invalid_config_exits_3(capsys, B_json):
    assert main(["simulate", "--matrix", str(B_json), "--eps-tie", "-1"]) == 3


def test_numerical_failure_exits_4(capsys, B_json, tmp_path):
    out = tmp_path / "err"
    code, res = _run(capsys, ["simulate", "--matrix", B_json, "--start", "1/3,1/3,1/3;1/3,1/3,1/3",
                              "--exact", "--out", out])
    assert code == 4 and res["error"] == "numerical failure"
    assert io.read_json(out / "error.json")["type"] == "FlowError"
