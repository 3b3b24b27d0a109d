"""Triple-store tests: ingestion, adjacency, snapshots."""

import numpy as np
import pytest

from gausskg import (
    FormatError,
    InvalidParameterError,
    ingest_tsv,
    load_snapshot,
    neighbors,
    save_snapshot,
)
from gausskg.kg import SPLITS
from conftest import toy_kg_two_tails


def write_tsv(path, rows):
    path.write_text("".join(f"{h}\t{r}\t{t}\n" for h, r, t in rows), encoding="utf-8")


def test_ingest_toy(tmp_path):
    train = tmp_path / "train.tsv"
    write_tsv(train, [("a", "r", "b"), ("a", "r", "c")])
    kg = ingest_tsv({"train": str(train)})
    assert kg.num_entities == 3
    assert kg.num_relations == 1
    assert kg.total_triples == 2
    assert kg.entity_names == ["a", "b", "c"]  # first-appearance order


def test_ingest_three_splits_vocab_order(tmp_path):
    write_tsv(tmp_path / "train.tsv", [("a", "r1", "b")])
    write_tsv(tmp_path / "valid.tsv", [("c", "r2", "a")])
    write_tsv(tmp_path / "test.tsv", [("d", "r1", "c")])
    kg = ingest_tsv({s: str(tmp_path / f"{s}.tsv") for s in SPLITS})
    assert kg.entity_names == ["a", "b", "c", "d"]
    assert kg.relation_names == ["r1", "r2"]
    assert [kg.num_triples(s) for s in SPLITS] == [1, 1, 1]


def test_duplicate_triples_deduplicated_with_warning(tmp_path, caplog):
    train = tmp_path / "train.tsv"
    write_tsv(train, [("a", "r", "b"), ("a", "r", "b")])
    with caplog.at_level("WARNING"):
        kg = ingest_tsv({"train": str(train)})
    assert kg.num_triples("train") == 1
    assert any("duplicate" in rec.message for rec in caplog.records)


def test_malformed_line_reports_location(tmp_path):
    bad = tmp_path / "train.tsv"
    bad.write_text("a\tr\tb\nbroken line\n", encoding="utf-8")
    with pytest.raises(FormatError, match=r"train\.tsv:2"):
        ingest_tsv({"train": str(bad)})


def test_extra_tab_rejected(tmp_path):
    bad = tmp_path / "train.tsv"
    bad.write_text("a\tr\tb\tc\n", encoding="utf-8")
    with pytest.raises(FormatError, match=":1"):
        ingest_tsv({"train": str(bad)})


def test_empty_file_rejected(tmp_path):
    empty = tmp_path / "train.tsv"
    empty.write_text("", encoding="utf-8")
    with pytest.raises(FormatError, match="empty"):
        ingest_tsv({"train": str(empty)})


def test_missing_file_raises_oserror(tmp_path):
    with pytest.raises(FileNotFoundError):
        ingest_tsv({"train": str(tmp_path / "nope.tsv")})


class TestNeighbors:
    def test_basic_lookup(self):
        kg = toy_kg_two_tails()
        assert neighbors(kg, 0, 0).tolist() == [1, 2]

    def test_no_outgoing_edge(self):
        kg = toy_kg_two_tails()
        assert neighbors(kg, 1, 0).tolist() == []

    def test_split_isolation(self):
        import gausskg
        triples = {"test": np.array([[0, 0, 1]], dtype=np.int64)}
        kg = gausskg.KnowledgeGraph(["a", "b"], ["r"], triples)
        assert neighbors(kg, 0, 0, mask=("train",)).tolist() == []
        assert neighbors(kg, 0, 0, mask=("test",)).tolist() == [1]
        assert neighbors(kg, 0, 0, mask=("train", "valid", "test")).tolist() == [1]

    def test_out_of_range_ids(self):
        kg = toy_kg_two_tails()
        with pytest.raises(InvalidParameterError):
            neighbors(kg, 99, 0)
        with pytest.raises(InvalidParameterError):
            neighbors(kg, 0, 99)

    def test_matches_linear_scan_oracle(self, rng):
        """Binary-search adjacency agrees with a naive scan on random graphs."""
        import gausskg
        for _ in range(10):
            n_ent, n_rel = 30, 4
            n_triples = int(rng.integers(50, 400))
            arr = np.unique(np.column_stack([
                rng.integers(0, n_ent, n_triples),
                rng.integers(0, n_rel, n_triples),
                rng.integers(0, n_ent, n_triples),
            ]).astype(np.int64), axis=0)
            cut1, cut2 = int(0.8 * len(arr)), int(0.9 * len(arr))
            perm = rng.permutation(len(arr))
            triples = {"train": arr[perm[:cut1]], "valid": arr[perm[cut1:cut2]],
                       "test": arr[perm[cut2:]]}
            kg = gausskg.KnowledgeGraph([f"e{i}" for i in range(n_ent)],
                                        [f"r{i}" for i in range(n_rel)],
                                        {k: v.copy() for k, v in triples.items()})
            for _ in range(30):
                h = int(rng.integers(0, n_ent))
                r = int(rng.integers(0, n_rel))
                mask = ("train",) if rng.random() < 0.5 else ("train", "valid", "test")
                expected = sorted({int(t) for split in mask
                                   for (hh, rr, t) in triples[split]
                                   if hh == h and rr == r})
                assert neighbors(kg, h, r, mask).tolist() == expected


class TestSnapshot:
    def test_round_trip_preserves_triples(self, tmp_path, rng):
        import gausskg
        arr = np.unique(rng.integers(0, 10, size=(60, 3)).astype(np.int64), axis=0)
        arr[:, 1] %= 3
        kg = gausskg.KnowledgeGraph([f"e{i}" for i in range(10)],
                                    ["r0", "r1", "r2"],
                                    {"train": arr[:40], "valid": arr[40:50],
                                     "test": arr[50:]})
        path = tmp_path / "kg.json"
        save_snapshot(kg, str(path))
        loaded = load_snapshot(str(path))
        assert loaded.entity_names == kg.entity_names
        assert loaded.relation_names == kg.relation_names
        for split in SPLITS:
            assert sorted(map(tuple, loaded.triples[split].tolist())) == \
                   sorted(map(tuple, kg.triples[split].tolist()))

    def test_ingest_reserialize_round_trip(self, tmp_path):
        rows = [("a", "r", "b"), ("a", "r", "c"), ("b", "r", "c")]
        write_tsv(tmp_path / "train.tsv", rows)
        kg = ingest_tsv({"train": str(tmp_path / "train.tsv")})
        assert sorted(kg.triples_as_names("train")) == sorted(rows)

    def test_bad_format_rejected(self, tmp_path):
        path = tmp_path / "x.json"
        path.write_text('{"format": "other"}', encoding="utf-8")
        with pytest.raises(FormatError):
            load_snapshot(str(path))

    def test_bad_version_rejected(self, tmp_path):
        path = tmp_path / "x.json"
        path.write_text('{"format": "gausskg-snapshot", "version": 99}', encoding="utf-8")
        with pytest.raises(FormatError, match="version"):
            load_snapshot(str(path))

    def test_vocab_hashes_change_with_vocab(self):
        kg1 = toy_kg_two_tails()
        import gausskg
        kg2 = gausskg.KnowledgeGraph(["a", "b", "zzz"], ["r"], {
            "train": np.array([[0, 0, 1], [0, 0, 2]], dtype=np.int64)})
        assert kg1.vocab_hashes() != kg2.vocab_hashes()
