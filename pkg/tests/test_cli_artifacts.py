import csv
import json

import numpy as np
import pytest

from ocpara.artifacts import BUNDLED, artifact_from_training, coarse_spec, load_bundled, load_ocp, write_artifact
from ocpara.cli import main
from ocpara.convfactor import SpectrumSpec
from ocpara.ocp import TrainConfig, train
from ocpara.stability import classical_stability, evaluate


def _rows(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# manifest ")
    return list(csv.DictReader(lines[1:]))


def test_bundled_set():
    for fp in BUNDLED:
        spec = load_bundled(fp)
        assert spec.meta["source"] == "bundled"
    assert load_bundled("theta:0.52").R.deg_den == 3
    with pytest.raises(ValueError):
        load_bundled("sdirk22")


def test_coarse_spec_resolution():
    be = coarse_spec("be")
    assert be.R.allclose(classical_stability("be")) and be.weights[0].allclose(be.R)
    sd = coarse_spec("SDIRK22")
    lam = np.geomspace(1e-2, 1e2, 9)
    np.testing.assert_allclose(evaluate(sd.weights[0], lam) * lam, 1 - evaluate(sd.R, lam))
    assert coarse_spec("ocp:bundled-radau3").R.allclose(coarse_spec("ocp:bundled", "radau3").R)
    for bad in ("rk4", "ocp:nothing-here"):
        with pytest.raises(ValueError):
            coarse_spec(bad)
    with pytest.raises(ValueError):
        coarse_spec("ocp:bundled")


def test_trained_artifact_round_trip(tmp_path):
    cfg = TrainConfig(restarts=1, init_pool=10, max_outer=3, inner_iters=10,
                      spectrum=SpectrumSpec(1e-3, 1e5, 256, 1.0))
    res = train(classical_stability("lobatto2"), cfg)
    art = artifact_from_training("lobatto2", res, cfg)
    path = tmp_path / "a.json"
    write_artifact(path, art)
    spec = load_ocp(str(path))
    assert spec.R.allclose(res.R)
    assert json.loads(path.read_text())["hyperparams"]["seed"] == 0
    assert coarse_spec(f"ocp:{path}").R.allclose(res.R)


def test_cli_reproduce_table1(tmp_path):
    assert main(["reproduce", "table1", "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "table1.csv")
    assert len(rows) == 60 and all(r["pass"] == "pass" for r in rows)
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["subcommand"] == "reproduce" and len(man["outputs"]) == 2


def test_cli_analyze_is_reproducible(tmp_path):
    args = ["analyze", "--cp", "be", "ocp:bundled", "--fp", "radau3", "--j", "4", "--n-curve", "200"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    for name in ("analyze.csv", "curve_be_radau3_J4.csv", "curves_radau3.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    rows = _rows(tmp_path / "a" / "analyze.csv")
    assert float(rows[1]["phi_star"]) == pytest.approx(0.014, abs=2e-3)


def test_cli_bounds_and_solve(tmp_path):
    assert main(["bounds", "--fp", "radau3", "--j-min", "16", "--j-max", "20", "--out", str(tmp_path / "b")]) == 0
    rows = _rows(tmp_path / "b" / "bounds.csv")
    assert float(rows[0]["value"]) == pytest.approx(5.2e-7, rel=0.1)
    assert (tmp_path / "b" / "k_of_J.svg").exists()
    out = tmp_path / "s"
    code = main(["solve", "--problem", "diffusion-b", "--j", "10", "--dt", "1/100", "--m-cells", "100",
                 "--eta", "1e-10", "--out", str(out)])
    assert code == 0
    rows = _rows(out / "solve.csv")
    assert list(rows[0]) == ["k", "error", "coarse_seconds", "max_fine_seconds"]
    summ = json.loads((out / "summary.json").read_text())
    assert summ["iterations_to_eta"] == len(rows) - 1
    assert summ["kappa_c"] < 0.05
    assert (out / "errors.svg").exists()


def test_cli_train_and_config(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text('[train]\nfp = "lobatto2"\nrestarts = 1\nmax_outer = 3\ninner_iters = 5\ngate = 1.0\n')
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    art = json.loads((tmp_path / "ocp-lobatto2-seed0.json").read_text())
    assert art["hyperparams"]["restarts"] == 1 and art["manifest"]
    # impossible gate: artifact is still written, exit code flags it
    code = main(["train", "--config", str(cfg), "--gate", "1e-6", "--output", "x.json", "--out", str(tmp_path)])
    assert code == 1 and (tmp_path / "x.json").exists()


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["solve", "--problem", "heat", "--j", "2", "--dt", "0.1", "--out", str(tmp_path)]) == 2
    assert main(["solve", "--problem", "diffusion-a", "--j", "3", "--dt", "0.1", "--out", str(tmp_path)]) == 2
    bad = tmp_path / "bad.toml"
    bad.write_text("nonsense = 1\n")
    assert main(["bounds", "--config", str(bad)]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["analyze", "--j", "four"])
    assert exc.value.code == 2
    assert "error" in capsys.readouterr().err
