import csv
import json
import subprocess
import sys
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from lgpr.cli import main, parse_grid, read_config_file, UsageError
from lgpr.data import load_dataset, gen_antiphase
from lgpr.files import sha256
from lgpr.optimize import TrainConfig, initialize, load_checkpoint
from lgpr.predict import read_prediction_csv

from test_data import JURA


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def small_csv(work):
    assert run("synth", "antiphase", "--n", 40, "--seed", 1, "--out", work / "small.csv") == 0
    return work / "small.csv"


@pytest.fixture(scope="module")
def small_model(work, small_csv):
    out = work / "small.json"
    assert run("train", small_csv, "--out", out, "--components", 2, "--inducing", 6, "--iterations", 30) == 0
    return out


# -- synth ------------------------------------------------------------------------------

def test_synth_antiphase(tmp_path):
    out = tmp_path / "a.csv"
    assert run("synth", "antiphase", "--n", 200, "--seed", 7, "--out", out) == 0
    r = rows(out)
    assert r[0] == ["x0", "y0", "label"] and len(r) == 201
    meta = json.loads((tmp_path / "a.csv.meta.json").read_text())
    assert meta["seed"] == 7 and meta["name"] == "antiphase"
    manifest = json.loads((tmp_path / "a.csv.manifest.json").read_text())
    assert manifest["command"] == "synth" and manifest["outputs"][str(out)] == sha256(out)
    first = sha256(out)
    assert run("synth", "antiphase", "--n", 200, "--seed", 7, "--out", out) == 0
    assert sha256(out) == first


def test_synth_gpdraws_defaults(tmp_path):
    out = tmp_path / "g.csv"
    assert run("synth", "gpdraws", "--out", out) == 0
    d = load_dataset(out)
    assert d.X.shape == (100, 1) and d.Y.shape == (100, 50)


def test_synth_unknown_name_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run("synth", "spiral", "--out", tmp_path / "x.csv")
    assert exc.value.code == 2


def test_exit_codes_from_a_real_process(tmp_path):
    base = [sys.executable, "-m", "lgpr.cli"]
    ok = subprocess.run(base + ["synth", "sshape", "--n", "30", "--out", str(tmp_path / "s.csv")], capture_output=True)
    assert ok.returncode == 0
    bad = subprocess.run(base + ["synth", "nope", "--out", str(tmp_path / "s.csv")], capture_output=True)
    assert bad.returncode == 2
    missing = subprocess.run(base + ["train", str(tmp_path / "absent.csv"), "--out", str(tmp_path / "m.json")],
                             capture_output=True, text=True)
    assert missing.returncode == 1 and "absent.csv" in missing.stderr


# -- train -------------------------------------------------------------------------------

def test_train_outputs(work, small_csv, small_model):
    stem = str(small_model)[:-5]
    trace = rows(stem + ".trace.csv")
    assert trace[0] == ["iteration", "alpha", "bound"] and len(trace) == 31
    assign = rows(stem + ".assignments.csv")
    assert assign[0] == ["index", "component"] and len(assign) == 41
    model = load_checkpoint(small_model)
    assert [int(r[1]) for r in assign[1:]] == list(model.hard_assignments)
    assert [float(r[2]) for r in trace[1:]] == [v for _, v in model.bound_trace]
    manifest = json.loads(open(str(small_model) + ".manifest.json").read())
    assert manifest["config"]["iterations"] == 30 and manifest["seed"] == 0
    assert manifest["inputs"] == {str(small_csv): sha256(small_csv)}
    assert "wall_seconds" in manifest["timings"]


def test_train_rerun_is_bitwise(tmp_path, small_csv):
    sums = []
    for _ in range(2):
        out = tmp_path / "m.json"
        assert run("train", small_csv, "--out", out, "--inducing", 5, "--iterations", 15, "--seed", 3) == 0
        sums.append([sha256(p) for p in (out, tmp_path / "m.trace.csv", tmp_path / "m.assignments.csv")])
    assert sums[0] == sums[1]


def test_train_zero_iterations_is_initialisation(tmp_path, small_csv):
    out = tmp_path / "init.json"
    assert run("train", small_csv, "--out", out, "--inducing", 5, "--iterations", 0) == 0
    model = load_checkpoint(out)
    state, _ = initialize(load_dataset(small_csv), TrainConfig(inducing=5, iterations=0))
    np.testing.assert_array_equal(model.state.mu_latent, state.mu_latent)
    np.testing.assert_array_equal(model.state.Z, state.Z)
    assert model.bound_trace == []
    assert len(rows(tmp_path / "init.trace.csv")) == 1


@pytest.mark.parametrize("flags", [["--psi", "analytic"], ["--inducing", "500"], ["--samples", "0"],
                                   ["--component-kernels", "se,se,se"], ["--component-kernels", "matern"]])
def test_train_invalid_combinations(tmp_path, small_csv, flags, capsys):
    assert run("train", small_csv, "--out", tmp_path / "m.json", *flags) == 2
    assert "error" in capsys.readouterr().err


def test_train_failure_exit_code(tmp_path):
    (tmp_path / "bad.csv").write_text("x0,y0\n1,nan\n2,3\n")
    assert run("train", tmp_path / "bad.csv", "--out", tmp_path / "m.json", "--inducing", 1) == 1


def test_config_precedence(tmp_path, small_csv):
    cfg = tmp_path / "train.cfg"
    cfg.write_text("# training defaults\niterations = 4\nseed = 3\nalpha-growth = 1.01\ninducing=5\n")
    out = tmp_path / "m.json"
    assert run("train", small_csv, "--out", out, "--config", cfg, "--seed", 4) == 0
    manifest = json.loads((tmp_path / "m.json.manifest.json").read_text())
    c = manifest["config"]
    assert c["iterations"] == 4 and c["seed"] == 4 and c["inducing"] == 5
    assert c["annealing"]["growth"] == 1.01 and c["components"] == 2


def test_config_file_errors(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("colour = blue\n")
    with pytest.raises(UsageError, match="unknown key"):
        read_config_file(p)
    p.write_text("iterations = many\n")
    with pytest.raises(UsageError, match="bad value"):
        read_config_file(p)
    p.write_text("iterations\n")
    with pytest.raises(UsageError, match="key = value"):
        read_config_file(p)


def test_train_svg(tmp_path, small_csv):
    svg = tmp_path / "trace.svg"
    assert run("train", small_csv, "--out", tmp_path / "m.json", "--inducing", 5, "--iterations", 10,
               "--svg", svg) == 0
    assert ET.parse(svg).getroot().tag.endswith("svg")


# -- predict / sample ----------------------------------------------------------------------

def test_predict_probabilities_and_round_trip(tmp_path, small_model):
    out = tmp_path / "p.csv"
    assert run("predict", small_model, "--grid", "0:12.5:30", "--out", out) == 0
    pred = read_prediction_csv(out)
    assert len(pred) == 30 and pred.probs.shape == (30, 2)
    assert np.all(np.abs(pred.probs.sum(axis=1) - 1) <= 1e-12)
    np.testing.assert_array_equal(pred.x[:, 0], np.linspace(0, 12.5, 30))
    first = sha256(out)
    assert run("predict", small_model, "--grid", "0:12.5:30", "--out", out) == 0
    assert sha256(out) == first


def test_predict_query_file_and_svg(tmp_path, small_model):
    q = tmp_path / "q.csv"
    q.write_text("x0\n0.5\n3.0\n7.25\n")
    svg = tmp_path / "fit.svg"
    assert run("predict", small_model, "--query", q, "--out", tmp_path / "p.csv", "--svg", svg) == 0
    assert read_prediction_csv(tmp_path / "p.csv").x[:, 0].tolist() == [0.5, 3.0, 7.25]
    assert ET.parse(svg).getroot().tag.endswith("svg")


def test_predict_single_component_probability_one(tmp_path, small_csv):
    m = tmp_path / "one.json"
    assert run("train", small_csv, "--out", m, "--components", 1, "--inducing", 5, "--iterations", 10) == 0
    assert run("predict", m, "--grid", "0:12:7", "--out", tmp_path / "p.csv") == 0
    r = rows(tmp_path / "p.csv")
    k = r[0].index("c0_prob")
    assert all(float(row[k]) == 1.0 for row in r[1:])


def test_predict_usage_and_dimension_errors(tmp_path, small_model):
    out = tmp_path / "p.csv"
    assert run("predict", small_model, "--out", out) == 2
    q = tmp_path / "q.csv"
    q.write_text("x0\n1\n")
    assert run("predict", small_model, "--query", q, "--grid", "0:1:3", "--out", out) == 2
    assert run("predict", small_model, "--grid", "0:1", "--out", out) == 2
    assert run("predict", small_model, "--grid", "0:1:3", "--grid", "0:1:3", "--out", out) == 1


def test_jura_grid_predictions(tmp_path):
    src = tmp_path / "jura.csv"
    src.write_text(JURA)
    m = tmp_path / "jura.json"
    assert run("train", src, "--jura", "--element", "Co", "--out", m, "--components", 2, "--inducing", 4,
               "--iterations", 20) == 0
    out = tmp_path / "map.csv"
    assert run("predict", m, "--grid", "1.5:4.5:50", "--grid", "0.5:5:50", "--out", out) == 0
    r = rows(out)
    assert len(r) == 2501
    assert {"x0", "x1", "c0_mean0", "c1_mean0", "c0_prob", "c1_prob"} <= set(r[0])
    pred = read_prediction_csv(out)
    assert pred.x[0].tolist() == [1.5, 0.5] and pred.x[-1].tolist() == [4.5, 5.0]
    # outputs come back in measured units
    assert 1.0 < np.median(pred.means) < 20.0


def test_parse_grid():
    g = parse_grid(["0:1:3", "10:20:2"])
    assert g.tolist() == [[0, 10], [0, 20], [0.5, 10], [0.5, 20], [1, 10], [1, 20]]
    with pytest.raises(UsageError):
        parse_grid(["0:1:0"])
    with pytest.raises(UsageError):
        parse_grid(["a:b:c"])


def test_sample_command(tmp_path, small_model):
    out = tmp_path / "s.csv"
    assert run("sample", small_model, "--grid", "1:2:3", "--count", 50, "--seed", 9, "--out", out) == 0
    r = rows(out)
    assert r[0] == ["sample", "query", "x0", "component", "y0"] and len(r) == 151
    assert {int(row[3]) for row in r[1:]} <= {0, 1}
    first = sha256(out)
    assert run("sample", small_model, "--grid", "1:2:3", "--count", 50, "--seed", 9, "--out", out) == 0
    assert sha256(out) == first
    assert run("sample", small_model, "--grid", "1:2:3", "--count", 50, "--seed", 10, "--out", out) == 0
    assert sha256(out) != first
    assert run("sample", small_model, "--grid", "1:2:3", "--count", 0, "--out", out) == 2


# -- bench ----------------------------------------------------------------------------------

def test_bench_psi_outputs(tmp_path):
    out = tmp_path / "bench.csv"
    svg = tmp_path / "bench.svg"
    assert run("bench-psi", "--T", "1,4", "--iterations", 15, "--n-points", 20, "--n-draws", 3, "--inducing", 5,
               "--out", out, "--svg", svg) == 0
    trace = rows(out)
    assert trace[0] == ["config", "iteration", "bound"]
    assert {r[0] for r in trace[1:]} == {"1", "4", "analytic"} and len(trace) == 1 + 3 * 15
    summary = rows(tmp_path / "bench.summary.csv")
    assert [r[0] for r in summary[1:]] == ["1", "4", "analytic"]
    assert float(summary[-1][2]) == 0.0
    timing = rows(tmp_path / "bench.timing.csv")
    assert sum(r[1] == "median" for r in timing) == 3
    assert ET.parse(svg).getroot().tag.endswith("svg")
    assert run("bench-psi", "--T", "0", "--out", out) == 2
    assert run("bench-psi", "--T", "x", "--out", out) == 2
