import json
import subprocess
import sys

import numpy as np
import pytest

from grassp.cli import main
from grassp.graph import DatasetSplit, TemporalGraph, load_graph
from grassp.model import ModelConfig, ModelParams, read_snapshots, save_checkpoint


def _run(*argv):
    return main([str(a) for a in argv])


def _cli(*argv):
    return subprocess.run([sys.executable, "-m", "grassp.cli", *map(str, argv)],
                          capture_output=True, text=True)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    graph = root / "g.csv"
    assert _run("synth", "beta", "--seed", 1, "--n", 20, "--clusters", 3, "-o", graph) == 0
    assert _run("split", graph, "-o", root / "split", "--seed", 0) == 0
    assert _run("train", root / "split", "-o", root / "run", "--epochs", "2,2,2",
                "--prior-scale", 1e5, "--seed", 0) == 0
    return root


def test_synth_beta_deterministic(tmp_path):
    assert _run("synth", "beta", "--seed", 7, "-o", tmp_path / "a.csv") == 0
    assert _run("synth", "beta", "--seed", 7, "-o", tmp_path / "b.csv") == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    manifest = json.loads((tmp_path / "a.manifest.json").read_text())
    assert manifest["command"] == "synth" and manifest["seed"] == 7
    assert manifest["num_nodes"] == 100 and manifest["horizon"] == 800.0
    for key in ("config", "inputs", "outputs", "version", "duration_seconds"):
        assert key in manifest


def test_synth_alpha_node_ids(tmp_path):
    assert _run("synth", "alpha", "--n", 100, "-o", tmp_path / "a.csv") == 0
    graph = load_graph(tmp_path / "a.csv", 100, 1.0)
    assert graph.num_intervals > 0
    assert max(j for _, j in graph.intervals) < 100


def test_usage_errors_exit_2(tmp_path):
    proc = _cli("synth", "beta")
    assert proc.returncode == 2 and "-o" in proc.stderr
    assert _cli("train", tmp_path, "-o", tmp_path / "r", "--epochs", "1,2").returncode == 2


def test_split_defaults_and_seed(pipeline, tmp_path):
    info = json.loads((pipeline / "split" / "split.json").read_text())
    assert info["future_frac"] == 0.1 and info["heldout_frac"] == 0.2
    assert (pipeline / "split" / "manifest.json").exists()
    assert _run("split", pipeline / "g.csv", "-o", tmp_path / "s1", "--seed", 1) == 0
    other = DatasetSplit.load(tmp_path / "s1")
    base = DatasetSplit.load(pipeline / "split")
    assert not np.array_equal(other.validation_dyads, base.validation_dyads)


def test_split_missing_input(tmp_path, capsys):
    code = _run("split", tmp_path / "nope.csv", "-o", tmp_path / "s", "--num-nodes", 3,
                "--horizon", 1)
    assert code == 1 and "nope.csv" in capsys.readouterr().err


def test_train_outputs(pipeline):
    run = pipeline / "run"
    for name in ("checkpoint.json", "loss_trace.csv", "manifest.json"):
        assert (run / name).exists()
    trace = (run / "loss_trace.csv").read_text().splitlines()
    assert trace[0] == "epoch,stage,objective" and len(trace) == 7
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["prior_scale"] == 1e5 and manifest["command"] == "train"


def test_train_lambda_grid(pipeline, tmp_path):
    assert _run("train", pipeline / "split", "-o", tmp_path / "r", "--epochs", "1,1,1",
                "--lambda-grid", "10,1e5") == 0
    sel = json.loads((tmp_path / "r" / "selection.json").read_text())
    assert [row["prior_scale"] for row in sel["table"]] == [10.0, 1e5]
    assert sel["best"] in (10.0, 1e5)


def test_train_resume_forbidden(pipeline, tmp_path, capsys):
    code = _run("train", pipeline / "split", "-o", tmp_path / "r", "--resume",
                pipeline / "run" / "checkpoint.json")
    assert code == 2 and "not supported" in capsys.readouterr().err


def test_train_with_config_file(pipeline, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("num_bins = 4\nstage1_epochs = 1\nstage2_epochs = 0\nstage3_epochs = 1\n"
                   "prior_scale = 100\n")
    assert _run("train", pipeline / "split", "-o", tmp_path / "r", "--config", cfg) == 0
    ckpt = json.loads((tmp_path / "r" / "checkpoint.json").read_text())
    assert ckpt["config"]["num_bins"] == 4 and ckpt["config"]["prior_scale"] == 100.0
    cfg.write_text("horizon = 3\n")
    assert _run("train", pipeline / "split", "-o", tmp_path / "r2", "--config", cfg) == 2
    cfg.write_text("colour = red\n")
    assert _run("train", pipeline / "split", "-o", tmp_path / "r3", "--config", cfg) == 1


def test_eval_all_tasks(pipeline, tmp_path):
    out = tmp_path / "m.json"
    assert _run("eval", pipeline / "run" / "checkpoint.json", pipeline / "split",
                "--seeds", "0,1", "-o", out) == 0
    data = json.loads(out.read_text())
    assert set(data["tasks"]) == {"reconstruction", "completion", "future"}
    for record in data["tasks"].values():
        assert record["R"] == 2 and 0 <= record["auc_roc"]["mean"] <= 1
    assert (tmp_path / "m.manifest.json").exists()


def test_eval_memorised_toy(tmp_path):
    train = TemporalGraph.from_records(3, 1.0, [(0, 1, 0.0, 0.5), (0, 2, 0.5, 1.0)])
    empty = np.empty((0, 2), int)
    DatasetSplit(train, TemporalGraph(3, 1.0), TemporalGraph(3, 1.1), empty, empty,
                 empty).save(tmp_path / "split")
    cfg = ModelConfig(3, 2, 2, 1.0)
    params = ModelParams.zeros(cfg)
    params.v[1, 1] = (10.0, 0.0)
    params.x[2] = (5.0, 0.0)
    params.v[0, 2] = (-10.0, 0.0)
    save_checkpoint(tmp_path / "toy.json", params, cfg)
    assert _run("eval", tmp_path / "toy.json", tmp_path / "split", "--task", "reconstruction",
                "-o", tmp_path / "m.json") == 0
    data = json.loads((tmp_path / "m.json").read_text())
    assert list(data["tasks"]) == ["reconstruction"]
    assert data["tasks"]["reconstruction"]["auc_roc"]["mean"] == 1.0


def test_eval_missing_checkpoint(pipeline, tmp_path):
    proc = _cli("eval", tmp_path / "none.json", pipeline / "split", "-o", tmp_path / "m.json")
    assert proc.returncode == 1 and "checkpoint not found" in proc.stderr


def test_embed_grid(pipeline, tmp_path):
    out = tmp_path / "snap.csv"
    assert _run("embed", pipeline / "run" / "checkpoint.json", "--grid", "0:800:50",
                "-o", out) == 0
    nodes, times, pos = read_snapshots(out)
    assert len(np.unique(times)) == 17 and len(nodes) == 17 * 20
    assert out.read_text().startswith("node,t,dim_0,dim_1\n")
    # the model was trained on [0, 720); later times are frozen
    np.testing.assert_array_equal(pos[times == 750.0], pos[times == 800.0])
    assert not np.array_equal(pos[times == 0.0], pos[times == 700.0])


def test_embed_times_and_errors(pipeline, tmp_path):
    ckpt = pipeline / "run" / "checkpoint.json"
    assert _run("embed", ckpt, "--times", "0,10.5", "-o", tmp_path / "s.csv") == 0
    assert len(read_snapshots(tmp_path / "s.csv")[0]) == 40
    assert _run("embed", ckpt, "--times", "-1", "-o", tmp_path / "s.csv") == 1
    assert _cli("embed", ckpt, "--grid", "5:1:1", "-o", tmp_path / "s.csv").returncode == 2


def test_pipeline_deterministic(tmp_path):
    def once(root):
        assert _run("synth", "beta", "--seed", 3, "--n", 15, "--clusters", 3,
                    "-o", root / "g.csv") == 0
        assert _run("split", root / "g.csv", "-o", root / "split") == 0
        assert _run("train", root / "split", "-o", root / "run", "--epochs", "1,1,1",
                    "--prior-scale", 1e4) == 0
        assert _run("eval", root / "run" / "checkpoint.json", root / "split", "--seeds", "0",
                    "-o", root / "m.json") == 0

    once(tmp_path / "a")
    once(tmp_path / "b")
    for rel in ("g.csv", "split/train.csv", "split/split.json", "run/checkpoint.json",
                "run/loss_trace.csv"):
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel
    a = json.loads((tmp_path / "a" / "m.json").read_text())
    b = json.loads((tmp_path / "b" / "m.json").read_text())
    assert a["tasks"] == b["tasks"]
