import json
import os

import numpy as np
import pytest

from fdtfit.cli import TARGETS, main
from fdtfit.simulate import Trajectory

OU = {"model": {"family": "linear", "C": [[-1, 1], [0, -2]], "D": [[1, 0], [0, 1]]},
      "sim": {"dt": 0.01, "n_steps": 200_000, "seed": 3}}


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def _manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_simulate_is_deterministic(tmp_path):
    cfg = _write(tmp_path, OU)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--config", cfg, "--out", str(a)]) == 0
    assert main(["simulate", "--config", cfg, "--out", str(b)]) == 0
    ma, mb = _manifest(a), _manifest(b)
    assert ma["outputs"] == mb["outputs"] and ma["outputs"]
    assert ma["seeds"] == {"sim": 3} and ma["exit_code"] == 0
    assert ma["materialized"]["sim"]["dt"] == 0.01
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "c"), "--seed", "4"]) == 0
    assert _manifest(tmp_path / "c")["outputs"] != ma["outputs"]


def test_triad_sidecar_records_sampling(tmp_path):
    cfg = _write(tmp_path, {"model": {"family": "triad"},
                            "sim": {"dt": 2e-4, "n_steps": 5000, "subsample_stride": 5,
                                    "seed": 11}})
    out = tmp_path / "o"
    assert main(["simulate", "--config", cfg, "--out", str(out)]) == 0
    tr = Trajectory.load(str(out / "traj_c000.npy"))
    assert tr.states.shape[1] == 3
    assert np.isclose(tr.dt_effective, 1e-3)
    side = json.loads((out / "traj_c000.json").read_text())
    text = json.dumps(side)
    assert "0.0002" in text and "11" in text


def test_missing_field_exits_2(tmp_path, capsys):
    cfg = _write(tmp_path, {"model": {"family": "linear", "C": [[-1]], "D": [[1]]},
                            "sim": {"dt": 0.1}})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "sim.n_steps" in capsys.readouterr().err


def test_bad_json_reports_position(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{"model": \n  [1, }')
    assert main(["simulate", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "bad.json:2:" in capsys.readouterr().err


def test_unknown_field_exits_2(tmp_path):
    cfg = dict(OU, sim=dict(OU["sim"], dtt=1))
    assert main(["simulate", "--config", _write(tmp_path, cfg), "--out",
                 str(tmp_path / "o")]) == 2


@pytest.fixture(scope="module")
def ou_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("ou")
    cfg = dict(OU, trajectories=["sim/traj_c*.npy"], curve="resp/curve.json",
               lags={"t_max": 1.0, "spacing": 0.05})
    (d / "cfg.json").write_text(json.dumps(cfg))
    assert main(["simulate", "--config", str(d / "cfg.json"), "--out", str(d / "sim")]) == 0
    assert main(["response", "--config", str(d / "cfg.json"), "--out", str(d / "resp")]) == 0
    return d


def test_response_writes_curve(ou_dir):
    doc = json.loads((ou_dir / "resp" / "curve.json").read_text())
    assert np.isclose(doc["times"][-1], 1.0)
    assert (ou_dir / "resp" / "curve.csv").exists()


def test_fit_pade_and_ls(ou_dir):
    cfg = str(ou_dir / "cfg.json")
    assert main(["fit", "--config", cfg, "--out", str(ou_dir / "pade"), "--mode", "pade"]) == 0
    g = json.loads((ou_dir / "pade" / "approximant.json").read_text())
    G = np.asarray(g["betas"])[0]
    assert np.abs(G - [[-1, 1], [0, -2]]).max() < 0.2
    assert main(["fit", "--config", cfg, "--out", str(ou_dir / "ls"), "--m", "1"]) == 0
    assert (ou_dir / "ls" / "fit_report.json").exists()
    assert (ou_dir / "ls" / "overlay.csv").exists()


def test_fit_m_zero_is_usage_error(ou_dir):
    with pytest.raises(SystemExit) as info:
        main(["fit", "--config", str(ou_dir / "cfg.json"), "--out", str(ou_dir / "x"),
              "--m", "0"])
    assert info.value.code == 2


def test_response_grid_mismatch_exits_2(ou_dir):
    cfg = json.loads((ou_dir / "cfg.json").read_text())
    cfg["lags"] = [0.0, 0.015]
    p = ou_dir / "mismatch.json"
    p.write_text(json.dumps(cfg))
    assert main(["response", "--config", str(p), "--out", str(ou_dir / "mm")]) == 2
    assert "not multiples of dt_effective" in _manifest(ou_dir / "mm")["error"]


def test_estimate_linear(ou_dir, capsys):
    out = ou_dir / "est"
    assert main(["estimate", "--config", str(ou_dir / "cfg.json"), "--out", str(out)]) == 0
    doc = json.loads((out / "report.json").read_text())
    assert doc["status"] == "exact"
    assert doc["comparison"]["C_rel_error"] < 0.15
    assert "C_rel_error" in capsys.readouterr().out


def test_fit_on_triad_curve(tmp_path):
    cfg = {"model": {"family": "triad"},
           "sim": {"dt": 2e-4, "n_steps": 400_000, "subsample_stride": 5, "seed": 1},
           "trajectories": ["sim/traj_c*.npy"], "curve": "resp/curve.json",
           "lags": {"t_max": 0.05, "spacing": 0.001}, "fit": {"m": 1, "mode": "pade"}}
    p = _write(tmp_path, cfg)
    for verb, out in (("simulate", "sim"), ("response", "resp"), ("fit", "fit")):
        assert main([verb, "--config", p, "--out", str(tmp_path / out)]) in (0, 3)
    g = json.loads((tmp_path / "fit" / "approximant.json").read_text())
    assert np.asarray(g["alphas"]).shape == (1, 3, 3)


def test_reproduce_unknown_target(tmp_path, capsys):
    assert main(["reproduce", "fig9", "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert all(t in err for t in TARGETS)


def test_reproduce_thm1(tmp_path):
    out = tmp_path / "thm1"
    assert main(["reproduce", "thm1", "--out", str(out)]) == 0
    m = _manifest(out)
    assert m["status"] == "ok" and m["materialized"]["target"] == "thm1"
    assert set(m["outputs"]) >= {"thm1.csv", "thm1.json"}
    assert {"package", "python", "numpy"} <= set(m["versions"])
    assert m["wall_time_s"] > 0


def test_bracket_failure_exits_3(tmp_path):
    cfg = {"model": {"family": "langevin"},
           "sim": {"dt": 5e-3, "n_steps": 200_000, "subsample_stride": 10, "seed": 2},
           "estimate": {"route": "m2", "eps_init": 0.02, "bracket": [0.5, 2.0]}}
    out = tmp_path / "o"
    assert main(["estimate", "--config", _write(tmp_path, cfg), "--out", str(out)]) == 3
    fail = json.loads((out / "failure.json").read_text())
    assert fail["status"] == "flagged" and "BracketError" in fail["error"]
    assert len(fail["trace"]) == 2
    assert _manifest(out)["exit_code"] == 3


def test_blow_up_exits_3(tmp_path):
    cfg = {"model": {"family": "linear", "C": [[-1.0]], "D": [[1.0]]},
           "sim": {"dt": 5.0, "n_steps": 2000, "seed": 1, "scheme": "euler_maruyama"}}
    out = tmp_path / "o"
    assert main(["simulate", "--config", _write(tmp_path, cfg), "--out", str(out)]) == 3
    assert os.path.exists(out / "failure.json")
