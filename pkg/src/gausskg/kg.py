"""Triple store: TSV ingestion, vocabularies, relation-indexed adjacency.

Triples are ``head<TAB>relation<TAB>tail`` lines, one file per split
(train/valid/test).  Entities and relations get dense integer ids in
first-appearance order; lookups run on per-split arrays sorted by a
composite ``(head, relation)`` key via binary search.  The store is
read-only after construction.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, InvalidParameterError

__all__ = ["SPLITS", "Triple", "KnowledgeGraph", "ingest_tsv", "neighbors",
           "save_snapshot", "load_snapshot"]

logger = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")
SNAPSHOT_FORMAT = "gausskg-snapshot"
SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class Triple:
    head: int
    relation: int
    tail: int


@dataclass
class KnowledgeGraph:
    """Vocabularies plus per-split, (head, relation)-sorted triple arrays."""

    entity_names: list[str]
    relation_names: list[str]
    triples: dict[str, np.ndarray]  # split -> (n, 3) int64, deduped, key-sorted
    entity_ids: dict[str, int] = field(init=False)
    relation_ids: dict[str, int] = field(init=False)
    _keys: dict[str, np.ndarray] = field(init=False, repr=False)

    def __post_init__(self):
        self.entity_ids = {name: i for i, name in enumerate(self.entity_names)}
        self.relation_ids = {name: i for i, name in enumerate(self.relation_names)}
        if len(self.entity_ids) != len(self.entity_names):
            raise FormatError("entity vocabulary contains duplicate names")
        if len(self.relation_ids) != len(self.relation_names):
            raise FormatError("relation vocabulary contains duplicate names")
        n_rel = max(len(self.relation_names), 1)
        self._keys = {}
        for split in SPLITS:
            t = self.triples.setdefault(split, np.empty((0, 3), dtype=np.int64))
            if t.size and (t[:, [0, 2]].max() >= self.num_entities
                           or t[:, 1].max() >= self.num_relations or t.min() < 0):
                raise FormatError(f"{split} triples reference ids outside the vocabulary")
            key = t[:, 0] * n_rel + t[:, 1]
            order = np.lexsort((t[:, 2], key))
            self.triples[split] = t[order]
            self._keys[split] = key[order]

    @property
    def num_entities(self) -> int:
        return len(self.entity_names)

    @property
    def num_relations(self) -> int:
        return len(self.relation_names)

    def num_triples(self, split: str) -> int:
        return int(self.triples[split].shape[0])

    @property
    def total_triples(self) -> int:
        return sum(self.num_triples(s) for s in SPLITS)

    def check_entity(self, entity: int):
        if not 0 <= entity < self.num_entities:
            raise InvalidParameterError(f"entity id {entity} out of range [0, {self.num_entities})")

    def check_relation(self, relation: int):
        if not 0 <= relation < self.num_relations:
            raise InvalidParameterError(
                f"relation id {relation} out of range [0, {self.num_relations})"
            )

    def vocab_hashes(self) -> dict[str, str]:
        """SHA-256 of each vocabulary, used to pin checkpoints to a graph."""
        def digest(names):
            h = hashlib.sha256()
            for name in names:
                h.update(name.encode("utf-8"))
                h.update(b"\x00")
            return h.hexdigest()
        return {"entities": digest(self.entity_names), "relations": digest(self.relation_names)}

    def triples_as_names(self, split: str) -> list[tuple[str, str, str]]:
        return [(self.entity_names[h], self.relation_names[r], self.entity_names[t])
                for h, r, t in self.triples[split]]


def ingest_tsv(paths: dict[str, str]) -> KnowledgeGraph:
    """Build a graph from per-split TSV files ({'train': path, ...}).

    Lines must contain exactly two TAB separators.  Vocabulary ids follow
    first appearance in train, then valid, then test order.  Duplicate
    triples within a split are dropped with a warning.
    """
    entity_names: list[str] = []
    relation_names: list[str] = []
    entity_ids: dict[str, int] = {}
    relation_ids: dict[str, int] = {}

    def ent(name):
        if name not in entity_ids:
            entity_ids[name] = len(entity_names)
            entity_names.append(name)
        return entity_ids[name]

    def rel(name):
        if name not in relation_ids:
            relation_ids[name] = len(relation_names)
            relation_names.append(name)
        return relation_ids[name]

    triples: dict[str, np.ndarray] = {}
    for split in SPLITS:
        if split not in paths:
            triples[split] = np.empty((0, 3), dtype=np.int64)
            continue
        path = paths[split]
        rows = []
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n").rstrip("\r")
                if not line:
                    raise FormatError(f"{path}:{lineno}: empty line")
                fields = line.split("\t")
                if len(fields) != 3 or not all(fields):
                    raise FormatError(
                        f"{path}:{lineno}: expected head<TAB>relation<TAB>tail, got {line!r}"
                    )
                rows.append((ent(fields[0]), rel(fields[1]), ent(fields[2])))
        if not rows:
            raise FormatError(f"{path}: file is empty")
        arr = np.array(rows, dtype=np.int64)
        unique = np.unique(arr, axis=0)
        if unique.shape[0] != arr.shape[0]:
            logger.warning("%s: dropped %d duplicate triples in %s split",
                           path, arr.shape[0] - unique.shape[0], split)
        triples[split] = unique

    kg = KnowledgeGraph(entity_names, relation_names, triples)
    for split in SPLITS:
        logger.info("ingested %s: %d triples", split, kg.num_triples(split))
    return kg


def neighbors(kg: KnowledgeGraph, head: int, relation: int,
              mask=("train",)) -> np.ndarray:
    """Sorted, duplicate-free tail ids of (head, relation) over the masked splits."""
    kg.check_entity(head)
    kg.check_relation(relation)
    key = head * max(kg.num_relations, 1) + relation
    chunks = []
    for split in mask:
        if split not in SPLITS:
            raise InvalidParameterError(f"unknown split {split!r}")
        keys = kg._keys[split]
        lo = np.searchsorted(keys, key, side="left")
        hi = np.searchsorted(keys, key, side="right")
        if hi > lo:
            chunks.append(kg.triples[split][lo:hi, 2])
    if not chunks:
        return np.empty(0, dtype=np.int64)
    return np.unique(np.concatenate(chunks))


def save_snapshot(kg: KnowledgeGraph, path: str):
    """Write the indexed graph as a self-describing, versioned JSON file."""
    payload = {
        "format": SNAPSHOT_FORMAT,
        "version": SNAPSHOT_VERSION,
        "entities": kg.entity_names,
        "relations": kg.relation_names,
        "triples": {split: kg.triples[split].tolist() for split in SPLITS},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, ensure_ascii=False)


def load_snapshot(path: str) -> KnowledgeGraph:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not a valid snapshot: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != SNAPSHOT_FORMAT:
        raise FormatError(f"{path}: not a {SNAPSHOT_FORMAT} file")
    if payload.get("version") != SNAPSHOT_VERSION:
        raise FormatError(
            f"{path}: snapshot version {payload.get('version')!r} unsupported "
            f"(expected {SNAPSHOT_VERSION})"
        )
    triples = {split: np.array(payload["triples"].get(split, []), dtype=np.int64).reshape(-1, 3)
               for split in SPLITS}
    return KnowledgeGraph(payload["entities"], payload["relations"], triples)
