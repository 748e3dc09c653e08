import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from dve.cli import build_parser, main
from dve.graph import planted_communities, read_edge_list, write_edge_list, SignedDigraph


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    assert main(["synth", "--nodes", "40", "--p-intra", "0.3", "--p-inter", "0.2", "--seed", "1", "--out", str(d / "s")]) == 0
    assert main(["split", "--input", str(d / "s/graph.txt"), "--seed", "1", "--out-dir", str(d / "sp")]) == 0
    assert main(["train", "--train", str(d / "sp/train.txt"), "--epochs", "3", "--d1", "8", "--d", "4",
                 "--checkpoint-every", "1", "--out-dir", str(d / "tr")]) == 0
    return d


def run_eval(d, out, *extra):
    return main(["eval", "--checkpoint", str(d / "tr/checkpoint.bin"), "--train", str(d / "sp/train.txt"),
                 "--test", str(d / "sp/test.txt"), "--out", str(d / out), *extra])


def test_synth_noiseless_signs(pipeline):
    g = read_edge_list(pipeline / "s/graph.txt")
    comm = planted_communities(40, 2)
    same = comm[g.sources] == comm[g.targets]
    assert np.all(g.signs == np.where(same, 1, -1))


def test_synth_seed_determinism(tmp_path, pipeline):
    main(["synth", "--nodes", "40", "--p-intra", "0.3", "--p-inter", "0.2", "--seed", "1", "--out", str(tmp_path)])
    assert (tmp_path / "graph.txt").read_bytes() == (pipeline / "s/graph.txt").read_bytes()


def test_split_defaults_and_rerun(tmp_path, pipeline):
    meta = json.loads((pipeline / "sp/split.json").read_text())
    assert meta["fraction"] == 0.8
    main(["split", "--input", str(pipeline / "s/graph.txt"), "--seed", "1", "--out-dir", str(tmp_path)])
    for name in ("train.txt", "test.txt", "split.json"):
        assert (tmp_path / name).read_bytes() == (pipeline / "sp" / name).read_bytes()


def test_split_missing_input(tmp_path, capsys):
    assert main(["split", "--input", str(tmp_path / "nope.txt"), "--out-dir", str(tmp_path / "o")]) == 1
    assert "nope.txt" in capsys.readouterr().err


def test_usage_error_exit_code(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["train", "--out-dir", str(tmp_path)])
    assert info.value.code == 1


def test_invalid_config_exit_code(tmp_path, pipeline, capsys):
    assert main(["train", "--train", str(pipeline / "sp/train.txt"), "--layers", "0", "--out-dir", str(tmp_path)]) == 1
    assert "n_gcn_layers" in capsys.readouterr().err


def test_train_outputs_and_manifest(pipeline):
    names = {p.name for p in (pipeline / "tr").iterdir()}
    assert {"checkpoint.bin", "checkpoint_epoch0001.bin", "train_log.csv", "embeddings.csv", "train_manifest.json"} <= names
    m = json.loads((pipeline / "tr/train_manifest.json").read_text())
    assert m["command"] == "train" and m["seed"] == 0
    assert len(m["epoch_mean_loss"]) == 3
    assert m["build_id"].startswith("dve-v")
    assert len(m["inputs"]) == 1 and len(next(iter(m["inputs"].values()))) == 64


def test_help_lists_defaults(capsys):
    parser = build_parser()
    sub = parser._subparsers._group_actions[0].choices
    for name, sp in sub.items():
        text = " ".join(sp.format_help().split())
        for action in sp._actions:
            if action.option_strings and action.dest != "help" and not action.required:
                assert action.option_strings[-1] in text, (name, action.dest)
                if action.default is not None:
                    assert f"(default: {action.default})" in text, (name, action.dest)
    train_help = " ".join(sub["train"].format_help().split())
    for flag, default in [("--epochs", "200"), ("--batch-size", "1000"), ("--lr", "0.01"), ("--dropout", "0.2"),
                          ("--d1", "128"), ("--d ", "64"), ("--layers", "2")]:
        assert flag in train_help
        assert f"(default: {default})" in train_help


def test_eval_sign_repeatable(pipeline):
    assert run_eval(pipeline, "e1") == 0
    assert run_eval(pipeline, "e2") == 0
    a = (pipeline / "e1/metrics.json").read_text()
    assert a == (pipeline / "e2/metrics.json").read_text()
    assert set(json.loads(a)["metrics"]) == {"auc", "f1"}


def test_eval_recommend_k(pipeline):
    assert run_eval(pipeline, "rec", "--task", "recommend", "--k", "10,20,50") == 0
    m = json.loads((pipeline / "rec/metrics.json").read_text())["metrics"]
    assert {f"{kind}@{k}" for kind in ("recall", "precision") for k in (10, 20, 50)} <= set(m)


def test_eval_closeness_histogram(pipeline):
    assert run_eval(pipeline, "clo", "--task", "closeness", "--null-samples", "200") == 0
    assert (pipeline / "clo/histogram.csv").exists()


def test_eval_single_class_test(pipeline, tmp_path, capsys):
    g = read_edge_list(pipeline / "sp/test.txt")
    keep = g.signs == 1
    write_edge_list(SignedDigraph.from_arrays(g.num_nodes, g.sources[keep], g.targets[keep], g.signs[keep]),
                    tmp_path / "pos.txt")
    rc = main(["eval", "--checkpoint", str(pipeline / "tr/checkpoint.bin"), "--train", str(pipeline / "sp/train.txt"),
               "--test", str(tmp_path / "pos.txt"), "--out", str(tmp_path / "o")])
    assert rc == 1 and "degenerate" in capsys.readouterr().err


def test_eval_shape_mismatch(pipeline, tmp_path, capsys):
    write_edge_list(SignedDigraph.from_edges(5, [(0, 1, 1), (1, 2, -1)]), tmp_path / "small.txt")
    rc = main(["eval", "--checkpoint", str(pipeline / "tr/checkpoint.bin"), "--train", str(tmp_path / "small.txt"),
               "--test", str(tmp_path / "small.txt"), "--out", str(tmp_path / "o")])
    assert rc == 1 and "nodes" in capsys.readouterr().err


def test_eval_best_checkpoint_selection(pipeline):
    cks = ["--checkpoint", str(pipeline / "tr/checkpoint_epoch0001.bin"), "--checkpoint", str(pipeline / "tr/checkpoint.bin")]
    assert main(["eval", *cks, "--train", str(pipeline / "sp/train.txt"), "--test", str(pipeline / "sp/test.txt"),
                 "--select", "best-test", "--out", str(pipeline / "best")]) == 0
    m = json.loads((pipeline / "best/eval_manifest.json").read_text())
    best = max(v["auc"] for v in m["all_checkpoints"].values())
    assert json.loads((pipeline / "best/metrics.json").read_text())["metrics"]["auc"] == best


def test_export_rows_and_determinism(pipeline, tmp_path):
    assert main(["export", "--checkpoint", str(pipeline / "tr/checkpoint.bin"), "--out", str(tmp_path / "a")]) == 0
    assert main(["export", "--checkpoint", str(pipeline / "tr/checkpoint.bin"), "--train", str(pipeline / "sp/train.txt"),
                 "--out", str(tmp_path / "b")]) == 0
    rows = list(csv.reader(open(tmp_path / "a/embeddings.csv")))
    assert len(rows) == 1 + 2 * 40 and all(len(r) == 2 + 8 for r in rows)
    assert (tmp_path / "a/embeddings.csv").read_bytes() == (tmp_path / "b/embeddings.csv").read_bytes()
    assert (tmp_path / "a/embeddings.csv").read_bytes() == (pipeline / "tr/embeddings.csv").read_bytes()


def test_elementwise_fusion_export_width(pipeline, tmp_path):
    assert main(["train", "--train", str(pipeline / "sp/train.txt"), "--epochs", "1", "--d1", "8", "--d", "4",
                 "--fusion", "elementwise_product", "--out-dir", str(tmp_path)]) == 0
    header = (tmp_path / "embeddings.csv").read_text().splitlines()[0].split(",")
    assert len(header) == 2 + 4


def test_de_log_kl_zero(pipeline, tmp_path):
    main(["train", "--train", str(pipeline / "sp/train.txt"), "--variant", "de", "--epochs", "2", "--d1", "8", "--d", "4",
          "--out-dir", str(tmp_path)])
    rows = list(csv.DictReader(open(tmp_path / "train_log.csv")))
    assert all(float(r["kl_source"]) == 0.0 and float(r["kl_target"]) == 0.0 for r in rows)


def test_config_file_with_flag_override(pipeline, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"# sweep entry\ntrain = {pipeline / 'sp/train.txt'}\nepochs = 2\nd1 = 8\nd = 4\nn-noise = 3\n")
    assert main(["train", "--config", str(cfg), "--epochs", "1", "--out-dir", str(tmp_path / "o")]) == 0
    m = json.loads((tmp_path / "o/train_manifest.json").read_text())
    assert m["train_config"]["epochs"] == 1 and m["train_config"]["n_noise"] == 3


def test_config_file_unknown_key(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("bogus = 1\n")
    assert main(["stats", "--input", "x", "--config", str(cfg)]) == 1


def test_threads_do_not_change_results(pipeline, tmp_path):
    base = ["train", "--train", str(pipeline / "sp/train.txt"), "--epochs", "2", "--d1", "8", "--d", "4"]
    main(base + ["--threads", "1", "--out-dir", str(tmp_path / "a")])
    main(base + ["--threads", "4", "--out-dir", str(tmp_path / "b")])
    assert (tmp_path / "a/checkpoint.bin").read_bytes() == (tmp_path / "b/checkpoint.bin").read_bytes()


def test_stats_command(pipeline, capsys):
    assert main(["stats", "--input", str(pipeline / "s/graph.txt")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["num_nodes"] == 40


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "dve", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "train" in r.stdout
