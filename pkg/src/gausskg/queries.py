"""First-order existential query DAGs over a knowledge graph.

A query is a rooted tree of anchor / translate / intersect / union nodes.
Ground-truth answers come from brute-force set traversal of the graph;
the nine canonical workload shapes are::

    1t   (a r)                      2t   ((a r1) r2)
    3t   (((a r1) r2) r3)           2∩   ((a r1) & (b r2))
    3∩   ((a r1) & (b r2) & (c r3))
    2∪   ((a r1) | (b r2))
    ∩t   (((a r1) & (b r2)) r3)     translate after an intersection
    t∩   (((a r1) r2) & (b r3))     intersection of translate chains
    ∪t   (((a r1) | (b r2)) r3)     translate after a union

Ad-hoc queries (e.g. intersection after union) are legal DAGs with no
type tag.  Query text grammar::

    ANCHOR    := name
    TRANSLATE := "(" expr relname ")"
    INTERSECT := "(" expr ("&" expr)+ ")"
    UNION     := "(" expr ("|" expr)+ ")"
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

import numpy as np

from .errors import (
    FormatError,
    InvalidParameterError,
    QuerySyntaxError,
    ShapeUnsatisfiableError,
    UnknownNameError,
)
from .kg import KnowledgeGraph, neighbors

__all__ = [
    "CANONICAL_TAGS", "TAG_ALIASES", "normalize_tag",
    "Anchor", "Translate", "Intersect", "Union", "QueryDag", "QuerySample",
    "canonical_query", "classify", "enumerate_answers", "sample_queries",
    "parse_query", "serialize_query", "save_workloads", "load_workloads",
]

CANONICAL_TAGS = ("1t", "2t", "3t", "2∩", "3∩", "2∪", "∩t", "t∩", "∪t")

# ASCII spellings accepted on the command line.
TAG_ALIASES = {
    "2i": "2∩", "3i": "3∩", "2u": "2∪",
    "it": "∩t", "ti": "t∩", "ut": "∪t",
}


def normalize_tag(tag: str) -> str:
    tag = TAG_ALIASES.get(tag, tag)
    if tag not in CANONICAL_TAGS:
        raise InvalidParameterError(f"unknown query type {tag!r}; expected one of {CANONICAL_TAGS}")
    return tag


@dataclass(frozen=True)
class Anchor:
    entity: int


@dataclass(frozen=True)
class Translate:
    child: int
    relation: int


@dataclass(frozen=True)
class Intersect:
    children: tuple[int, ...]


@dataclass(frozen=True)
class Union:
    children: tuple[int, ...]


def _child_indices(node) -> tuple[int, ...]:
    if isinstance(node, Anchor):
        return ()
    if isinstance(node, Translate):
        return (node.child,)
    return node.children


@dataclass(frozen=True)
class QueryDag:
    """Rooted query tree; ``type_tag`` is set only for canonical shapes."""

    nodes: tuple
    root: int
    type_tag: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        n = len(self.nodes)
        if not 0 <= self.root < n:
            raise InvalidParameterError(f"root index {self.root} out of range")
        ref_count = [0] * n
        for node in self.nodes:
            if isinstance(node, (Intersect, Union)) and len(node.children) < 2:
                raise InvalidParameterError("intersect/union nodes need at least 2 children")
            for c in _child_indices(node):
                if not 0 <= c < n:
                    raise InvalidParameterError(f"child index {c} out of range")
                ref_count[c] += 1
        if ref_count[self.root] != 0:
            raise InvalidParameterError("root must not be referenced by another node")
        for i, count in enumerate(ref_count):
            if i != self.root and count != 1:
                raise InvalidParameterError(
                    f"node {i} referenced {count} times; every non-root node needs exactly one parent"
                )
        seen = set()
        stack = [self.root]
        while stack:
            i = stack.pop()
            if i in seen:
                continue
            seen.add(i)
            stack.extend(_child_indices(self.nodes[i]))
        if len(seen) != n:
            raise InvalidParameterError("query DAG contains nodes unreachable from the root")
        if self.type_tag is not None:
            if self.type_tag not in CANONICAL_TAGS:
                raise InvalidParameterError(f"unknown type tag {self.type_tag!r}")
            actual = classify(self)
            if actual != self.type_tag:
                raise InvalidParameterError(
                    f"type tag {self.type_tag!r} does not match DAG shape ({actual!r})"
                )

    def signature(self) -> str:
        """Canonical shape string; children of ∩/∪ are sorted for commutativity."""
        def sig(i):
            node = self.nodes[i]
            if isinstance(node, Anchor):
                return "A"
            if isinstance(node, Translate):
                return f"T({sig(node.child)})"
            tag = "I" if isinstance(node, Intersect) else "U"
            return f"{tag}({','.join(sorted(sig(c) for c in node.children))})"
        return sig(self.root)


_TAG_SIGNATURES = {
    "1t": "T(A)",
    "2t": "T(T(A))",
    "3t": "T(T(T(A)))",
    "2∩": "I(T(A),T(A))",
    "3∩": "I(T(A),T(A),T(A))",
    "2∪": "U(T(A),T(A))",
    "∩t": "T(I(T(A),T(A)))",
    "t∩": "I(T(A),T(T(A)))",
    "∪t": "T(U(T(A),T(A)))",
}
_SIGNATURE_TAGS = {v: k for k, v in _TAG_SIGNATURES.items()}


def classify(dag: QueryDag) -> str | None:
    """Canonical type tag of the DAG shape, or None for ad-hoc shapes."""
    return _SIGNATURE_TAGS.get(dag.signature())


def canonical_query(tag: str, anchors, relations) -> QueryDag:
    """Build one of the nine canonical query shapes from raw ids."""
    tag = normalize_tag(tag)
    a = list(anchors)
    r = list(relations)

    def chain(nodes, anchor, rels):
        nodes.append(Anchor(anchor))
        idx = len(nodes) - 1
        for rel in rels:
            nodes.append(Translate(idx, rel))
            idx = len(nodes) - 1
        return idx

    nodes: list = []
    if tag in ("1t", "2t", "3t"):
        root = chain(nodes, a[0], r)
    elif tag in ("2∩", "3∩", "2∪"):
        branches = tuple(chain(nodes, ai, [ri]) for ai, ri in zip(a, r))
        cls = Union if tag == "2∪" else Intersect
        nodes.append(cls(branches))
        root = len(nodes) - 1
    elif tag in ("∩t", "∪t"):
        branches = tuple(chain(nodes, ai, [ri]) for ai, ri in zip(a[:2], r[:2]))
        cls = Union if tag == "∪t" else Intersect
        nodes.append(cls(branches))
        nodes.append(Translate(len(nodes) - 1, r[2]))
        root = len(nodes) - 1
    else:  # t∩
        long_branch = chain(nodes, a[0], r[:2])
        short_branch = chain(nodes, a[1], [r[2]])
        nodes.append(Intersect((long_branch, short_branch)))
        root = len(nodes) - 1
    return QueryDag(tuple(nodes), root, tag)


@dataclass(frozen=True)
class QuerySample:
    """A query plus its exact traversal answers (sorted, non-empty)."""

    dag: QueryDag
    answers: tuple[int, ...]
    hard_negatives: tuple[int, ...] | None = None

    def __post_init__(self):
        answers = tuple(int(x) for x in self.answers)
        if not answers:
            raise InvalidParameterError("query sample must have at least one answer")
        if list(answers) != sorted(set(answers)):
            raise InvalidParameterError("answers must be sorted and duplicate-free")
        object.__setattr__(self, "answers", answers)


def enumerate_answers(dag: QueryDag, kg: KnowledgeGraph, mask=("train",)) -> np.ndarray:
    """Exact answer set by brute-force set traversal (sorted entity ids).

    Anchor -> {e}; Translate -> union of neighbor sets over the child's
    answers; Intersect -> set intersection; Union -> set union.
    """
    memo: dict[int, np.ndarray] = {}

    def visit(i):
        if i in memo:
            return memo[i]
        node = dag.nodes[i]
        if isinstance(node, Anchor):
            kg.check_entity(node.entity)
            out = np.array([node.entity], dtype=np.int64)
        elif isinstance(node, Translate):
            heads = visit(node.child)
            chunks = [neighbors(kg, int(h), node.relation, mask) for h in heads]
            out = (np.unique(np.concatenate(chunks)) if chunks
                   else np.empty(0, dtype=np.int64))
        elif isinstance(node, Intersect):
            sets = [visit(c) for c in node.children]
            out = sets[0]
            for s in sets[1:]:
                out = np.intersect1d(out, s, assume_unique=True)
        else:
            sets = [visit(c) for c in node.children]
            out = np.unique(np.concatenate(sets)) if sets else np.empty(0, dtype=np.int64)
        memo[i] = out
        return out

    return visit(dag.root)


_SHAPE_ARITY = {
    "1t": (1, 1), "2t": (1, 2), "3t": (1, 3),
    "2∩": (2, 2), "3∩": (3, 3), "2∪": (2, 2),
    "∩t": (2, 3), "t∩": (2, 3), "∪t": (2, 3),
}
# Tags whose first branches are interchangeable 1-hop translates; their
# (anchor, relation) pairs must be pairwise distinct to avoid vacuous queries.
_DISTINCT_BRANCHES = {"2∩": 2, "3∩": 3, "2∪": 2, "∩t": 2, "∪t": 2}


def sample_queries(kg: KnowledgeGraph, type_tag: str, count: int, seed: int,
                   mask=("train",), max_retries: int = 1000) -> list[QuerySample]:
    """Sample ``count`` non-empty queries of one shape, deterministically.

    Anchors and relations are drawn uniformly; DAGs with empty answer sets
    are rejected, up to ``max_retries`` attempts per sample.
    """
    tag = normalize_tag(type_tag)
    if count < 1:
        raise InvalidParameterError("count must be >= 1")
    n_anchor, n_rel = _SHAPE_ARITY[tag]
    rng = np.random.default_rng([seed, CANONICAL_TAGS.index(tag)])
    out = []
    for _ in range(count):
        for _attempt in range(max_retries):
            anchors = rng.integers(0, kg.num_entities, size=n_anchor)
            rels = rng.integers(0, kg.num_relations, size=n_rel)
            k = _DISTINCT_BRANCHES.get(tag)
            if k is not None:
                pairs = {(int(anchors[i]), int(rels[i])) for i in range(k)}
                if len(pairs) < k:
                    continue
            dag = canonical_query(tag, anchors.tolist(), rels.tolist())
            answers = enumerate_answers(dag, kg, mask)
            if answers.size:
                out.append(QuerySample(dag, tuple(answers.tolist())))
                break
        else:
            raise ShapeUnsatisfiableError(
                f"could not sample a non-empty {tag} query in {max_retries} attempts"
            )
    return out


# ---------------------------------------------------------------------------
# Text form
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(r"[()&|]|[^\s()&|]+")
_BAD_NAME_RE = re.compile(r"[\s()&|]")


def _byte_offset(text: str, pos: int) -> int:
    return len(text[:pos].encode("utf-8"))


def parse_query(text: str, kg: KnowledgeGraph) -> QueryDag:
    """Parse query text into a DAG; names resolve against the vocabularies."""
    tokens = [(m.group(0), m.start()) for m in _TOKEN_RE.finditer(text)]
    pos = 0
    nodes: list = []

    def fail(message, at):
        raise QuerySyntaxError(message, _byte_offset(text, at))

    def peek():
        return tokens[pos] if pos < len(tokens) else (None, len(text))

    def take():
        nonlocal pos
        tok = peek()
        pos += 1
        return tok

    def expr():
        tok, at = take()
        if tok is None:
            fail("unexpected end of query", at)
        if tok == "(":
            first = expr()
            nxt, nxt_at = peek()
            if nxt in ("&", "|"):
                op = nxt
                children = [first]
                while peek()[0] == op:
                    take()
                    children.append(expr())
                closing, closing_at = take()
                if closing != ")":
                    fail("expected ')'", closing_at)
                nodes.append((Intersect if op == "&" else Union)(tuple(children)))
                return len(nodes) - 1
            if nxt in (")", "(", None):
                fail("expected relation name, '&', or '|'", nxt_at)
            take()
            rel = kg.relation_ids.get(nxt)
            if rel is None:
                raise UnknownNameError(f"unknown relation name {nxt!r}")
            closing, closing_at = take()
            if closing != ")":
                fail("expected ')'", closing_at)
            nodes.append(Translate(first, rel))
            return len(nodes) - 1
        if tok in (")", "&", "|"):
            fail(f"unexpected {tok!r}", at)
        ent = kg.entity_ids.get(tok)
        if ent is None:
            raise UnknownNameError(f"unknown entity name {tok!r}")
        nodes.append(Anchor(ent))
        return len(nodes) - 1

    root = expr()
    trailing, at = peek()
    if trailing is not None:
        fail(f"unexpected trailing {trailing!r}", at)
    dag = QueryDag(tuple(nodes), root)
    tag = classify(dag)
    return QueryDag(dag.nodes, dag.root, tag) if tag else dag


def serialize_query(dag: QueryDag, kg: KnowledgeGraph) -> str:
    """Canonical text form of a DAG (inverse of :func:`parse_query`)."""
    def name_of(name):
        if _BAD_NAME_RE.search(name):
            raise InvalidParameterError(
                f"name {name!r} contains query-grammar delimiters and cannot be serialized"
            )
        return name

    def emit(i):
        node = dag.nodes[i]
        if isinstance(node, Anchor):
            return name_of(kg.entity_names[node.entity])
        if isinstance(node, Translate):
            return f"({emit(node.child)} {name_of(kg.relation_names[node.relation])})"
        sep = " & " if isinstance(node, Intersect) else " | "
        return "(" + sep.join(emit(c) for c in node.children) + ")"

    return emit(dag.root)


# ---------------------------------------------------------------------------
# Workload files: one JSON record per line {type, query, answers}
# ---------------------------------------------------------------------------

def save_workloads(path: str, samples_by_tag: dict[str, list[QuerySample]], kg: KnowledgeGraph):
    with open(path, "w", encoding="utf-8") as fh:
        for tag in CANONICAL_TAGS:
            for sample in samples_by_tag.get(tag, ()):
                record = {
                    "type": tag,
                    "query": serialize_query(sample.dag, kg),
                    "answers": list(sample.answers),
                }
                fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def load_workloads(path: str, kg: KnowledgeGraph) -> dict[str, list[QuerySample]]:
    out: dict[str, list[QuerySample]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            try:
                tag = normalize_tag(record["type"])
                dag = parse_query(record["query"], kg)
                answers = tuple(int(a) for a in record["answers"])
            except KeyError as exc:
                raise FormatError(f"{path}:{lineno}: missing field {exc}") from exc
            if classify(dag) != tag:
                raise FormatError(
                    f"{path}:{lineno}: query shape does not match declared type {tag!r}"
                )
            out.setdefault(tag, []).append(QuerySample(dag, answers))
    return out
