import subprocess
import sys

import pytest

from comgnn.cli import run

TINY_CFG = """\
n_routes = 12
mu = 2
candidate_count = 6
node_dim = 4
edge_dim = 4
common_node_dim = 4
common_edge_dim = 4
att_dim = 4
meta_hidden = 4
num_layers = 1
epochs = 4
lr = 0.01
"""

FORECAST_CFG = """\
n_nodes = 6
steps_per_day = 8
n_weeks = 4
node_dim = 2
edge_dim = 2
common_node_dim = 2
common_edge_dim = 2
att_dim = 2
meta_hidden = 2
channels = 2
kernel = 2
t_recent = 4
t_daily = 3
t_weekly = 3
horizon = 2
epochs = 2
batch_size = 8
origin_stride = 4
"""


@pytest.fixture(scope="module")
def ranking_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("rank")
    cfg = root / "tiny.cfg"
    cfg.write_text(TINY_CFG)
    assert run(["generate", "--task", "ranking", "--seed", "1", "--config", str(cfg), "--out", str(root / "data")]) == 0
    return root


def _files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.is_file()}


def _results(d):
    return dict(line.split("=", 1) for line in (d / "results.txt").read_text().splitlines())


def test_generate_train_eval_predict_report(ranking_dir, capsys):
    cfg, data, out = ranking_dir / "tiny.cfg", ranking_dir / "data", ranking_dir / "run"
    assert run(["train", "--data", str(data), "--out", str(out), "--config", str(cfg), "--plots"]) == 0
    names = set(_files(out))
    assert {"results.txt", "metrics.log", "checkpoint.json", "settings.json",
            "training_curves.png", "test_metrics.png"} <= names
    res = _results(out)
    assert res["task"] == "ranking" and res["epochs"] == "4"
    assert 0.0 <= float(res["test.map"]) <= 1.0
    assert "baseline.random.test.map" in res
    assert run(["eval", "--data", str(data), "--out", str(out)]) == 0
    assert (out / "eval_test.txt").read_text().startswith("task=ranking\nsplit=test\n")
    assert run(["predict", "--data", str(data), "--out", str(out)]) == 0
    lines = (out / "predictions.csv").read_text().splitlines()
    assert lines[0] == "instance,candidate_edge,score" and len(lines) > 1
    assert run(["report", "--out", str(out)]) == 0
    assert "training_curves.png" in capsys.readouterr().out


def test_training_is_byte_identical_across_runs(ranking_dir):
    cfg, data = ranking_dir / "tiny.cfg", ranking_dir / "data"
    for name in ("a", "b"):
        assert run(["train", "--data", str(data), "--out", str(ranking_dir / name), "--config", str(cfg),
                    "--seed", "3"]) == 0
    a, b = _files(ranking_dir / "a"), _files(ranking_dir / "b")
    for name in ("metrics.log", "results.txt", "checkpoint.json"):
        assert a[name] == b[name]


def test_reference_model_matches_fully_ablated_comgnn(ranking_dir):
    cfg, data = ranking_dir / "tiny.cfg", ranking_dir / "data"
    flags = ["--no-het", "--no-edge-info", "--no-meta-att"]
    assert run(["train", "--data", str(data), "--out", str(ranking_dir / "abl"), "--config", str(cfg)] + flags) == 0
    assert run(["train", "--data", str(data), "--out", str(ranking_dir / "ref"), "--config", str(cfg),
                "--model", "reference"] + flags) == 0
    a, b = _results(ranking_dir / "abl"), _results(ranking_dir / "ref")
    assert abs(float(a["final_loss"]) - float(b["final_loss"])) < 1e-6


def test_reference_needs_all_ablation_flags(ranking_dir):
    assert run(["train", "--data", str(ranking_dir / "data"), "--out", str(ranking_dir / "x"),
                "--model", "reference"]) == 2


def test_divergence_exits_4_and_writes_nothing(ranking_dir, capsys):
    cfg = ranking_dir / "diverge.cfg"
    cfg.write_text(TINY_CFG.replace("lr = 0.01", "lr = 1e200"))
    out = ranking_dir / "div"
    assert run(["train", "--data", str(ranking_dir / "data"), "--out", str(out), "--config", str(cfg)]) == 4
    assert "diverged" in capsys.readouterr().err
    assert list(out.iterdir()) == []


def test_missing_dataset_exits_3(tmp_path, capsys):
    assert run(["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == 3
    assert "spec.json" in capsys.readouterr().err


def test_corrupt_dataset_exits_3(ranking_dir, tmp_path):
    import shutil

    bad = tmp_path / "bad"
    shutil.copytree(ranking_dir / "data", bad)
    edges = next(p for p in bad.rglob("edges_*.csv"))
    edges.write_text(edges.read_text() + "999999,999998,0\n")
    assert run(["train", "--data", str(bad), "--out", str(tmp_path / "o"), "--config",
                str(ranking_dir / "tiny.cfg")]) == 3
    assert not (tmp_path / "o" / "results.txt").exists()


@pytest.mark.parametrize("text", ["bogus_key = 1\n", "lr = fast\n", "lr = -1\n", "epochs = 0\n"])
def test_config_errors_exit_2(ranking_dir, tmp_path, text, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(text)
    assert run(["train", "--data", str(ranking_dir / "data"), "--out", str(tmp_path / "o"),
                "--config", str(cfg)]) == 2
    assert capsys.readouterr().err.startswith("error:")


def test_usage_errors_exit_2(tmp_path):
    assert run([]) == 2
    assert run(["train", "--out", str(tmp_path)]) == 2
    assert run(["generate", "--task", "ranking", "--seed", "-1", "--out", str(tmp_path)]) == 2
    assert run(["report", "--out", str(tmp_path)]) == 2


def test_task_mismatch_exits_2(ranking_dir, tmp_path):
    assert run(["train", "--task", "forecast", "--data", str(ranking_dir / "data"), "--out", str(tmp_path)]) == 2


def test_eval_without_checkpoint_exits_2(ranking_dir, tmp_path):
    assert run(["eval", "--data", str(ranking_dir / "data"), "--out", str(tmp_path)]) == 2


def test_generate_is_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert run(["generate", "--task", "forecast", "--seed", "2", "--out", str(tmp_path / name)]) == 0
    for p in sorted((tmp_path / "a").rglob("*")):
        if p.is_file():
            assert p.read_bytes() == (tmp_path / "b" / p.relative_to(tmp_path / "a")).read_bytes()


def test_forecast_pipeline(tmp_path):
    cfg = tmp_path / "f.cfg"
    cfg.write_text(FORECAST_CFG)
    data, out = tmp_path / "data", tmp_path / "run"
    assert run(["generate", "--task", "forecast", "--config", str(cfg), "--out", str(data)]) == 0
    assert run(["train", "--data", str(data), "--out", str(out), "--config", str(cfg)]) == 0
    res = _results(out)
    assert "test.mape@1" in res and "baseline.persistence.test.mape@1" in res
    assert run(["predict", "--data", str(data), "--out", str(out)]) == 0
    header = (out / "predictions.csv").read_text().splitlines()[0]
    assert header == "origin,node_id,step,value"


def test_describe_params_defaults(capsys):
    assert run(["describe-params", "--task", "ranking"]) == 0
    text = capsys.readouterr().out
    shapes = dict(line.split("\t") for line in text.splitlines() if "\t" in line)
    layers = {n.split(".")[1] for n in shapes if n.startswith("layer.")}
    assert layers == {"1", "2"}
    assert shapes["layer.1.rel.create.W"].startswith("16x")
    assert shapes["layer.1.rel.create.W_star"].startswith("32x")
    assert text.splitlines()[-1].startswith("# ")


def test_gradcheck_subprocess(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "comgnn.cli", "gradcheck", "--seed", "7", "--out", str(tmp_path)],
                          capture_output=True, text=True, timeout=300)
    assert proc.returncode == 0, proc.stdout + proc.stderr
    assert "max relative error" in proc.stdout
    assert (tmp_path / "gradcheck.txt").read_text().startswith("seed=7\n")
