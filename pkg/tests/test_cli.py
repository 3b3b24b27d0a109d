"""End-to-end command-line tests on a tiny graph."""

import csv
import json
import os

import numpy as np
import pytest

from gausskg.cli import EXIT_FORMAT, EXIT_IO, EXIT_NUMERIC, EXIT_OK, main


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    """Six entities, two relations; every (h, r) has two or three tails."""
    tmp_path = tmp_path_factory.mktemp("cli")
    rows = {
        "train": [("a", "r1", "b"), ("a", "r1", "c"), ("a", "r2", "d"),
                  ("a", "r2", "e"), ("b", "r1", "c"), ("b", "r1", "d"),
                  ("c", "r2", "e"), ("c", "r2", "f"), ("d", "r1", "e"),
                  ("d", "r1", "f"), ("e", "r2", "a"), ("e", "r2", "b")],
        "valid": [("b", "r2", "f"), ("f", "r1", "a")],
        "test": [("c", "r1", "a"), ("f", "r2", "b")],
    }
    paths = {}
    for split, triples in rows.items():
        p = tmp_path / f"{split}.tsv"
        p.write_text("".join(f"{h}\t{r}\t{t}\n" for h, r, t in triples),
                     encoding="utf-8")
        paths[split] = str(p)
    return tmp_path, paths


def run(*argv):
    return main(list(argv))


class TestIngest:
    def test_prints_stats_and_writes_snapshot(self, tiny_dataset, capsys):
        tmp_path, paths = tiny_dataset
        snap = str(tmp_path / "kg.json")
        assert run("ingest", "--train", paths["train"], "--valid", paths["valid"],
                   "--test", paths["test"], "--out", snap) == EXIT_OK
        out = capsys.readouterr().out
        assert "entities=6 relations=2 edges=16" in out
        assert os.path.exists(snap)
        assert os.path.exists(snap + ".run.json")

    def test_toy_counts(self, tmp_path, capsys):
        train = tmp_path / "t.tsv"
        train.write_text("a\tr\tb\na\tr\tc\n", encoding="utf-8")
        assert run("ingest", "--train", str(train),
                   "--out", str(tmp_path / "s.json")) == EXIT_OK
        assert "entities=3 relations=1 edges=2" in capsys.readouterr().out

    def test_missing_file_exit_code(self, tmp_path, capsys):
        code = run("ingest", "--train", str(tmp_path / "missing.tsv"),
                   "--out", str(tmp_path / "s.json"))
        assert code == EXIT_IO

    def test_malformed_file_exit_code(self, tmp_path):
        bad = tmp_path / "bad.tsv"
        bad.write_text("only two\tfields\n", encoding="utf-8")
        assert run("ingest", "--train", str(bad),
                   "--out", str(tmp_path / "s.json")) == EXIT_FORMAT


@pytest.fixture(scope="module")
def snapshot(tiny_dataset):
    tmp_path, paths = tiny_dataset
    snap = str(tmp_path / "kg.json")
    assert run("ingest", "--train", paths["train"], "--valid", paths["valid"],
               "--test", paths["test"], "--out", snap) == EXIT_OK
    return tmp_path, snap


class TestSample:
    def test_deterministic_files(self, snapshot):
        tmp_path, snap = snapshot
        w1, w2 = str(tmp_path / "w1.jsonl"), str(tmp_path / "w2.jsonl")
        for out in (w1, w2):
            assert run("sample", "--snapshot", snap, "--types", "1t,2u",
                       "--count", "5", "--seed", "7", "--out", out) == EXIT_OK
        assert open(w1).read() == open(w2).read()
        tags = {json.loads(line)["type"] for line in open(w1)}
        assert tags == {"1t", "2∪"}

    def test_unsatisfiable_shape_fails_cleanly(self, tmp_path, capsys):
        shallow = tmp_path / "train.tsv"
        shallow.write_text("a\tr\tb\n", encoding="utf-8")
        snap = str(tmp_path / "s.json")
        assert run("ingest", "--train", str(shallow), "--out", snap) == EXIT_OK
        code = run("sample", "--snapshot", snap, "--types", "3t", "--count", "2",
                   "--out", str(tmp_path / "w.jsonl"))
        assert code == EXIT_FORMAT


@pytest.fixture(scope="module")
def trained(snapshot):
    """Small but real training run used by the answer / eval / viz tests."""
    tmp_path, snap = snapshot
    train_w = str(tmp_path / "train.jsonl")
    assert run("sample", "--snapshot", snap, "--types", "1t,2t,2u",
               "--count", "12", "--seed", "1", "--out", train_w) == EXIT_OK
    ckpt = str(tmp_path / "model.npz")
    assert run("train", "--snapshot", snap, "--workloads", train_w,
               "--out", ckpt, "--types", "1t,2t,2u", "--dim", "8", "--rank", "2",
               "--epochs", "120", "--lr", "0.05", "--margin", "2.0",
               "--negatives", "2", "--batch", "8", "--seed", "5") == EXIT_OK
    return tmp_path, snap, ckpt


class TestTrainEvalAnswer:
    def test_train_writes_checkpoint_metrics_receipt(self, trained):
        tmp_path, snap, ckpt = trained
        assert os.path.exists(ckpt)
        metrics_path = ckpt + ".metrics.jsonl"
        assert os.path.exists(metrics_path)
        records = [json.loads(line) for line in open(metrics_path)]
        assert {"epoch", "mean_loss", "valid_hits3", "wall_seconds"} == set(records[0])
        receipt = json.load(open(ckpt + ".run.json"))
        assert receipt["config"]["train_config"]["dim"] == 8

    def test_eval_report(self, trained, capsys):
        tmp_path, snap, ckpt = trained
        test_w = str(tmp_path / "test.jsonl")
        assert run("sample", "--snapshot", snap, "--types", "1t,2u", "--count", "6",
                   "--seed", "2", "--split", "test", "--out", test_w) == EXIT_OK
        report_path = str(tmp_path / "report.json")
        assert run("eval", "--snapshot", snap, "--checkpoint", ckpt,
                   "--workloads", test_w, "--report", report_path) == EXIT_OK
        blob = json.load(open(report_path))
        assert set(blob["per_type"]) == {"1t", "2∪"}
        for stats in blob["per_type"].values():
            for key in ("hits@1", "hits@3", "hits@10", "mrr"):
                assert 0.0 <= stats[key] <= 1.0
        out = capsys.readouterr().out
        assert "avg" in out

    def test_filtered_flag_accepted(self, trained):
        tmp_path, snap, ckpt = trained
        test_w = str(tmp_path / "test.jsonl")
        assert run("sample", "--snapshot", snap, "--types", "1t", "--count", "4",
                   "--seed", "3", "--split", "test", "--out", test_w) == EXIT_OK
        assert run("eval", "--snapshot", snap, "--checkpoint", ckpt,
                   "--workloads", test_w, "--report", str(tmp_path / "rf.json"),
                   "--filtered-metrics") == EXIT_OK

    def test_answer_ranks_true_tail_first(self, trained, capsys):
        tmp_path, snap, ckpt = trained
        assert run("answer", "--snapshot", snap, "--checkpoint", ckpt,
                   "--query", "(a r1)", "--top-k", "2") == EXIT_OK
        lines = [l for l in capsys.readouterr().out.strip().splitlines() if l]
        top_entities = [line.split("\t")[0] for line in lines]
        # true tails of (a, r1) are b and c
        assert set(top_entities) <= {"b", "c"}

    def test_answer_parse_error_exit_code(self, trained, capsys):
        tmp_path, snap, ckpt = trained
        assert run("answer", "--snapshot", snap, "--checkpoint", ckpt,
                   "--query", "(a r1") == EXIT_FORMAT

    def test_answer_top_k_clamped(self, trained, capsys, caplog):
        tmp_path, snap, ckpt = trained
        assert run("answer", "--snapshot", snap, "--checkpoint", ckpt,
                   "--query", "(a r1)", "--top-k", "999") == EXIT_OK
        lines = [l for l in capsys.readouterr().out.strip().splitlines() if l]
        assert len(lines) == 6

    def test_eval_missing_checkpoint(self, snapshot):
        tmp_path, snap = snapshot
        code = run("eval", "--snapshot", snap,
                   "--checkpoint", str(tmp_path / "none.npz"),
                   "--workloads", str(tmp_path / "none.jsonl"))
        assert code == EXIT_IO

    def test_aggregator_recorded_in_checkpoint(self, snapshot):
        tmp_path, snap = snapshot
        train_w = str(tmp_path / "w.jsonl")
        assert run("sample", "--snapshot", snap, "--types", "1t", "--count", "4",
                   "--seed", "1", "--out", train_w) == EXIT_OK
        ckpt = str(tmp_path / "avg.npz")
        assert run("train", "--snapshot", snap, "--workloads", train_w,
                   "--out", ckpt, "--types", "1t", "--dim", "4", "--rank", "2",
                   "--epochs", "2", "--aggregator", "average") == EXIT_OK
        data = np.load(ckpt, allow_pickle=False)
        header = json.loads(str(data["header"]))
        assert header["aggregator_mode"] == "average"
        assert not any(name.startswith("aggregator_") for name in data.files)

    def test_config_file_with_flag_override(self, snapshot):
        tmp_path, snap = snapshot
        train_w = str(tmp_path / "w.jsonl")
        assert run("sample", "--snapshot", snap, "--types", "1t", "--count", "4",
                   "--seed", "1", "--out", train_w) == EXIT_OK
        config_path = tmp_path / "config.json"
        config_path.write_text(json.dumps({"dim": 4, "rank": 2, "epochs": 1,
                                           "query_types": ["1t"]}), encoding="utf-8")
        ckpt = str(tmp_path / "cfg.npz")
        assert run("train", "--snapshot", snap, "--workloads", train_w,
                   "--out", ckpt, "--config", str(config_path), "--dim", "6") == EXIT_OK
        header = json.loads(str(np.load(ckpt, allow_pickle=False)["header"]))
        assert header["dim"] == 6      # flag wins
        assert header["rank"] == 2     # config file value


class TestExportViz:
    def test_two_entities_orthonormal_axes(self, trained):
        tmp_path, snap, ckpt = trained
        prefix = str(tmp_path / "viz")
        assert run("export-viz", "--snapshot", snap, "--checkpoint", ckpt,
                   "--entity", "a", "--entity", "b", "--out", prefix) == EXIT_OK
        blob = json.load(open(prefix + ".json"))
        axes = np.array(blob["axes"])
        np.testing.assert_allclose(axes.T @ axes, np.eye(2), atol=1e-10)
        with open(prefix + ".csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 2

    def test_union_query_exports_components_with_weights(self, trained):
        tmp_path, snap, ckpt = trained
        prefix = str(tmp_path / "vizq")
        assert run("export-viz", "--snapshot", snap, "--checkpoint", ckpt,
                   "--entity", "a", "--query", "((a r1) | (b r1))",
                   "--out", prefix) == EXIT_OK
        blob = json.load(open(prefix + ".json"))
        query_rows = [r for r in blob["rows"] if r["kind"] == "query"]
        assert len(query_rows) == 2
        assert sum(r["weight"] for r in query_rows) == pytest.approx(1.0)

    def test_fewer_than_two_items_rejected(self, trained):
        tmp_path, snap, ckpt = trained
        assert run("export-viz", "--snapshot", snap, "--checkpoint", ckpt,
                   "--entity", "a", "--out", str(tmp_path / "x")) == EXIT_FORMAT

    def test_projection_matches_best_rank_two_approximation(self, trained):
        """Reconstruction error equals the eigendecomposition optimum."""
        tmp_path, snap, ckpt = trained
        prefix = str(tmp_path / "vizp")
        entities = ["a", "b", "c", "d", "e", "f"]
        argv = ["export-viz", "--snapshot", snap, "--checkpoint", ckpt,
                "--out", prefix]
        for e in entities:
            argv += ["--entity", e]
        assert run(*argv) == EXIT_OK
        blob = json.load(open(prefix + ".json"))
        axes = np.array(blob["axes"])
        from gausskg import load_checkpoint, load_snapshot
        kg = load_snapshot(snap)
        table, _ = load_checkpoint(ckpt, kg)
        means = table.entity_means[[kg.entity_ids[e] for e in entities]]
        centered = means - means.mean(axis=0)
        my_error = np.linalg.norm(centered - centered @ axes @ axes.T) ** 2
        evals = np.linalg.eigvalsh(centered.T @ centered)
        best = float(evals[:-2].sum())  # residual of the top-2 eigenspace
        assert my_error <= best + 1e-8


class TestDataDirEnv:
    def test_relative_paths_resolve_against_env(self, tiny_dataset, monkeypatch, capsys):
        tmp_path, paths = tiny_dataset
        monkeypatch.setenv("GAUSSKG_DATA_DIR", str(tmp_path))
        assert run("ingest", "--train", "train.tsv", "--out", "kg.json") == EXIT_OK
        assert (tmp_path / "kg.json").exists()
