import csv
import json
import os
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from wbkan.cli import main
from wbkan.datasets import generate_pv, write_csv
from wbkan.network import EdgeActivation, init_network, save_model


def read_rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def dab_run(tmp_path_factory):
    """A small DAB run taken through training and pruning."""
    out = tmp_path_factory.mktemp("dab")
    assert main(["train", "--out", str(out), "--generator", "dab", "--count", "4000",
                 "--shape", "1,3,1", "--steps", "1500", "--seed", "0"]) == 0
    assert main(["prune", "--out", str(out)]) == 0
    return out


class TestSimulate:
    def test_default_dab_file(self, tmp_path, capsys):
        path = tmp_path / "dab.csv"
        code, out, _ = run(capsys, "simulate-dab", "--out", path, "--count", 500)
        assert code == 0 and "500 rows" in out
        rows = read_rows(path)
        assert rows[0] == ["D", "V_out"] and len(rows) == 501
        D = np.array([float(r[0]) for r in rows[1:]])
        V = np.array([float(r[1]) for r in rows[1:]])
        assert D.min() >= 0.3 and D.max() <= 0.7
        np.testing.assert_allclose(V, 2.0 / (D * (1 - D)), rtol=1e-15)
        side = json.loads((tmp_path / "dab.json").read_text())
        assert side["rows"] == 500 and side["source"]["C"] == pytest.approx(2.0)

    def test_seed_repeat_identical_bytes(self, tmp_path, capsys):
        for name in ("a", "b"):
            run(capsys, "simulate-dab", "--out", tmp_path / f"{name}.csv", "--count", 300,
                "--seed", 7)
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
        run(capsys, "simulate-dab", "--out", tmp_path / "c.csv", "--count", 300, "--seed", 8)
        assert (tmp_path / "a.csv").read_bytes() != (tmp_path / "c.csv").read_bytes()

    def test_wide_range_leaves_out_training_band(self, tmp_path, capsys):
        path = tmp_path / "gen.csv"
        assert run(capsys, "simulate-dab", "--out", path, "--count", 4000,
                   "--d-range", "0.2,0.8")[0] == 0
        D = np.array([float(r[0]) for r in read_rows(path)[1:]])
        outer = ((D > 0.2) & (D <= 0.3)) | ((D >= 0.7) & (D < 0.8))
        assert outer.all()
        assert (D < 0.3).any() and (D > 0.7).any()

    def test_explicit_range_flags(self, tmp_path, capsys):
        path = tmp_path / "full.csv"
        run(capsys, "simulate-dab", "--out", path, "--count", 4000, "--d-range", "0.2,0.8",
            "--no-exclude")
        D = np.array([float(r[0]) for r in read_rows(path)[1:]])
        assert ((D > 0.4) & (D < 0.6)).any()
        run(capsys, "simulate-dab", "--out", path, "--count", 4000, "--d-range", "0.2,0.8",
            "--exclude-range", "0.4,0.6")
        D = np.array([float(r[0]) for r in read_rows(path)[1:]])
        assert not ((D > 0.4) & (D < 0.6)).any() and ((D > 0.3) & (D < 0.4)).any()

    @pytest.mark.parametrize("argv", [
        ["--d-range", "0.0,0.5"],
        ["--d-range", "0.3"],
        ["--C", "-1"],
        ["--d-range", "0.2,0.8", "--exclude-range", "0.1,0.5"],
        ["--exclude-range", "0.4,0.5", "--no-exclude"],
    ])
    def test_invalid_parameters_exit_2(self, tmp_path, capsys, argv):
        code, _, err = run(capsys, "simulate-dab", "--out", tmp_path / "x.csv", *argv)
        assert code == 2 and err.startswith("error:")

    def test_simulate_pv(self, tmp_path, capsys):
        path = tmp_path / "pv.csv"
        assert run(capsys, "simulate-pv", "--out", path, "--count", 50)[0] == 0
        rows = read_rows(path)
        assert rows[0] == ["radiation", "temperature", "windspeed", "noise_1", "noise_2",
                           "noise_3", "power"]
        assert len(rows) == 51


class TestStages:
    def test_stage_outputs(self, dab_run):
        names = set(os.listdir(dab_run))
        assert {"model.json", "model_trained.json", "model_pruned.json", "pipeline.json",
                "train_trace.csv", "prune_report.json", "plots"} <= names
        assert sorted(os.listdir(dab_run / "plots")) == ["layer_0.svg", "layer_1.svg"]
        for svg in ("layer_0.svg", "layer_1.svg"):
            ET.parse(dab_run / "plots" / svg)
        trace = read_rows(dab_run / "train_trace.csv")
        assert trace[0][:2] == ["step", "total"] and 1 < len(trace) <= 1501
        report = json.loads((dab_run / "prune_report.json").read_text())
        assert report["shape_before"] == [1, 3, 1]
        assert report["shape_after"] == [1, 1, 1]

    def test_refine_before_symbolify_names_edges(self, dab_run, capsys):
        code, _, err = run(capsys, "refine", "--out", dab_run, "--model",
                           dab_run / "model_pruned.json")
        assert code == 2
        assert "unsnapped spline edges: 0/0/0, 1/0/0" in err

    def test_symbolify_override_then_refine(self, dab_run, tmp_path, capsys):
        out = tmp_path / "sym"
        code, text, _ = run(capsys, "symbolify", "--out", out, "--config",
                            dab_run / "pipeline.json", "--model",
                            dab_run / "model_pruned.json", "--override", "edge=0/0/0:sigmoid")
        assert code == 0
        snap = json.loads((out / "snap_report.json").read_text())
        first = [e for e in snap["entries"] if e["layer"] == 0][0]
        assert first["basis"] == "sigmoid" and first["mode"] == "override"
        assert "edge 0/0/0: SNAPPED sigmoid" in text
        code, text, _ = run(capsys, "refine", "--out", out, "--refine-steps", 200)
        assert code == 0
        formula = (out / "formula.txt").read_text().strip()
        assert formula.startswith("V_out = ") and "sigmoid(" in formula
        assert formula in text
        assert read_rows(out / "refine_trace.csv")[0] == ["step", "pred"]

    def test_eval_noise_and_mlp_table(self, dab_run, tmp_path, capsys):
        out = tmp_path / "ev"
        code, _, _ = run(capsys, "symbolify", "--out", out, "--config", dab_run / "pipeline.json",
                         "--model", dab_run / "model_pruned.json")
        assert code == 0
        code, text, _ = run(capsys, "eval", "--out", out, "--noise", 0.1, "--with-mlp")
        assert code == 0
        table = (out / "metrics_table.txt").read_text()
        lines = [l for l in table.splitlines() if l.strip() and not set(l) <= set("-+| ")]
        assert len(lines) == 5  # header plus KAN RMSE/EE and MLP RMSE/EE
        assert lines[1].split()[:2] == ["KAN", "RMSE"] and lines[3].split()[:2] == ["MLP", "RMSE"]
        rows = read_rows(out / "metrics.csv")
        assert rows[0] == ["model", "tag", "count", "rmse", "ee"]
        by = {(r[0], r[1]): float(r[3]) for r in rows[1:]}
        assert by[("KAN", "test_noise")] > by[("KAN", "test")]
        assert {m for m, _ in by} == {"KAN", "MLP"}

    def test_eval_schema_mismatch(self, dab_run, tmp_path, capsys):
        data = tmp_path / "other.csv"
        data.write_text("x,V_out\n0.4,8.3\n0.5,8.0\n0.6,8.3\n")
        code, _, err = run(capsys, "eval", "--out", tmp_path / "e", "--config",
                           dab_run / "pipeline.json", "--model", dab_run / "model_pruned.json")
        assert code == 0
        cfg = json.loads((dab_run / "pipeline.json").read_text())
        cfg["data"] = {"csv": str(data), "target": "V_out"}
        (tmp_path / "cfg.json").write_text(json.dumps(cfg))
        code, _, err = run(capsys, "eval", "--out", tmp_path / "e", "--config",
                           tmp_path / "cfg.json", "--model", dab_run / "model_pruned.json")
        assert code == 3 and "'D'" in err

    def test_rerun_stage_is_identical(self, dab_run, tmp_path, capsys):
        outs = []
        for name in ("p1", "p2"):
            out = tmp_path / name
            run(capsys, "prune", "--out", out, "--config", dab_run / "pipeline.json",
                "--model", dab_run / "model_trained.json")
            outs.append(out)
        for f in ("model.json", "prune_report.json", "plots/layer_0.svg"):
            assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()


class TestErrors:
    def test_missing_model_exit_3(self, dab_run, tmp_path, capsys):
        code, _, err = run(capsys, "prune", "--out", tmp_path, "--config",
                           dab_run / "pipeline.json", "--model", tmp_path / "nope.json")
        assert code == 3 and "no such file" in err

    def test_missing_data_exit_3(self, tmp_path, capsys):
        code, _, err = run(capsys, "train", "--out", tmp_path, "--data", tmp_path / "none.csv",
                           "--target", "y")
        assert code == 3
        code, _, _ = run(capsys, "correlate", "--data", tmp_path / "none.csv", "--target", "y",
                         "--out", tmp_path)
        assert code == 3

    def test_unknown_config_key_exit_2(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"data": {"generator": "dab"}, "learning_rat": 0.1}))
        code, _, err = run(capsys, "train", "--out", tmp_path / "o", "--config", cfg)
        assert code == 2 and "learning_rat" in err
        assert not (tmp_path / "o" / "model.json").exists()

    @pytest.mark.parametrize("bad", [{"train": {"lam": -1.0}}, {"shape": [1, 0, 1]},
                                     {"grid": {"G": 0}}, {"noise": 1.5}])
    def test_out_of_range_config_exit_2(self, tmp_path, capsys, bad):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(dict({"data": {"generator": "dab"}}, **bad)))
        assert run(capsys, "train", "--out", tmp_path / "o", "--config", cfg)[0] == 2

    def test_numerical_failure_exit_4(self, tmp_path, capsys):
        net = init_network([1, 1], input_names=["x"], output_names=["y"])
        net.layers[0].set_edge(0, 0, EdgeActivation.symbolic("exp", 800.0, 0.0, 1.0, 0.0))
        (tmp_path / "m.json").write_text(json.dumps(save_model(net)))
        data = tmp_path / "d.csv"
        data.write_text("x,y\n0.1,1\n0.5,2\n0.9,3\n0.95,4\n1.0,5\n")
        code, _, err = run(capsys, "eval", "--out", tmp_path / "o", "--data", data,
                           "--target", "y", "--model", tmp_path / "m.json")
        assert code == 4 and err.startswith("error:")


@pytest.fixture(scope="module")
def pv_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("pv") / "pv.csv"
    write_csv(generate_pv(count=2000, seed=0), path)
    return path


class TestAnalysisCommands:
    def test_unsup_select_pv(self, pv_csv, tmp_path, capsys):
        code, out, err = run(capsys, "unsup-select", "--data", pv_csv, "--out", tmp_path,
                             "--steps", 2000)
        assert code == 0
        assert out.startswith("[7,1,1] -> [4,1,1]")
        structure = (tmp_path / "structure.txt").read_text()
        assert "kept: radiation, temperature, windspeed, power" in structure
        imp = json.loads((tmp_path / "importance.json").read_text())
        assert imp["ranking"][:2] == ["power", "radiation"]
        assert read_rows(tmp_path / "importance.csv")[0] == ["variable", "magnitude"]

    def test_unsup_select_seed_repeat(self, pv_csv, tmp_path, capsys):
        for name in ("a", "b"):
            run(capsys, "unsup-select", "--data", pv_csv, "--out", tmp_path / name,
                "--steps", 300, "--seed", 4)
        for f in ("importance.json", "importance.csv", "model.json", "structure.txt"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_unsup_select_all_noise_warns(self, tmp_path, capsys):
        data = tmp_path / "noise.csv"
        X = np.random.default_rng(0).uniform(0, 1, (1000, 4))
        np.savetxt(data, X, delimiter=",", header="a,b,c,d", comments="")
        code, out, err = run(capsys, "unsup-select", "--data", data, "--out", tmp_path / "o",
                             "--steps", 2000)
        assert code == 0 and "no dependency found" in err
        assert out.startswith("[4,1,1] -> [0,1,1]")

    def test_unsup_select_needs_two_columns(self, pv_csv, tmp_path, capsys):
        code, _, err = run(capsys, "unsup-select", "--data", pv_csv, "--columns", "power",
                           "--out", tmp_path)
        assert code == 3 and "two variables" in err

    def test_sensitivity_linear_model(self, tmp_path, capsys):
        net = init_network([2, 1], input_names=["u", "v"], output_names=["y"])
        net.layers[0].set_edge(0, 0, EdgeActivation.symbolic("identity", 1.0, 0.0, 3.0, 0.0))
        net.layers[0].set_edge(1, 0, EdgeActivation.symbolic("identity", 1.0, 0.0, -0.5, 0.0))
        (tmp_path / "m.json").write_text(json.dumps(save_model(net)))
        data = tmp_path / "d.csv"
        data.write_text("u,v\n0,0\n2,4\n1,1\n")
        code, out, _ = run(capsys, "sensitivity", "--model", tmp_path / "m.json", "--data", data,
                           "--out", tmp_path / "s", "--trajectories", 20)
        assert code == 0
        rows = read_rows(tmp_path / "s" / "sensitivity.csv")
        mu = {r[0]: float(r[1]) for r in rows[1:]}
        # every elementary effect of a linear map equals its slope
        np.testing.assert_allclose([mu["u"], mu["v"]], [3.0, 0.5], rtol=1e-12)

    def test_correlate_constant_feature(self, tmp_path, capsys):
        data = tmp_path / "c.csv"
        data.write_text("a,k,y\n1,5,2\n2,5,4\n3,5,7\n4,5,8\n")
        code, out, _ = run(capsys, "correlate", "--data", data, "--target", "y",
                           "--out", tmp_path / "o")
        assert code == 0
        rows = read_rows(tmp_path / "o" / "correlations.csv")
        assert rows[0] == ["variable", "pearson", "spearman", "kendall"]
        a, k = rows[1], rows[2]
        assert a[0] == "a" and float(a[2]) == pytest.approx(1.0)
        assert k[0] == "k" and k[1:] == ["undefined"] * 3
        assert "undefined" in out
