"""Ranking and metrics.

The default HITS@K and MRR follow the formulas used by this model family's
evaluation verbatim:

    HITS@K = (1/K) * sum_{k=1..K} [e_k in answers]          (precision at K)
    MRR    = (1/n) * sum_{i=1..n} [e_i in answers] / i      (n = ranked prefix)

with n defaulting to the full entity count.  Both are nonstandard relative
to per-answer link-prediction conventions, so the conventional filtered
per-answer variants are available behind ``filtered=True``: each held-out
answer is ranked with all other known answers removed, and contributes
``[rank <= K]`` and ``1/rank``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .compiler import compile_query
from .errors import InvalidParameterError
from .gaussian import mixture_distance_many
from .kg import KnowledgeGraph
from .queries import CANONICAL_TAGS, QueryDag, QuerySample, enumerate_answers

__all__ = ["EvalReport", "hits_at_k", "mrr", "rank_candidates", "evaluate",
           "random_ranking_report"]

logger = logging.getLogger(__name__)


def hits_at_k(ranked, answers, k: int) -> float:
    """Fraction of the top-K ranked entities that are answers."""
    ranked = np.asarray(ranked)
    if ranked.size == 0:
        raise InvalidParameterError("empty ranking")
    if not 1 <= k <= ranked.size:
        raise InvalidParameterError(f"K={k} out of range for ranking of length {ranked.size}")
    answers = set(int(a) for a in answers)
    return sum(int(e) in answers for e in ranked[:k]) / k


def mrr(ranked, answers, n: int | None = None) -> float:
    """Mean reciprocal rank over the first ``n`` ranked outputs.

    Hits at rank i contribute 1/i, misses contribute 0; ``n`` defaults to
    the full ranking length.
    """
    ranked = np.asarray(ranked)
    if n is None:
        n = ranked.size
    if n < 1:
        raise InvalidParameterError("MRR prefix length must be >= 1")
    answers = set(int(a) for a in answers)
    total = sum(1.0 / (i + 1) for i, e in enumerate(ranked[:n]) if int(e) in answers)
    return total / n


def rank_candidates(dag: QueryDag, table, kg: KnowledgeGraph,
                    filter_ids=None) -> np.ndarray:
    """All entities sorted by ascending mixture distance to the compiled query.

    Ties break toward the lower entity id.  Entities in ``filter_ids``
    (known easy answers) are removed before ranking.
    """
    if table.num_entities != kg.num_entities:
        raise InvalidParameterError("embedding table does not match the graph's entity count")
    mixture = compile_query(dag, table)
    distances = mixture_distance_many(table.entity_means, mixture)
    ids = np.arange(kg.num_entities)
    if filter_ids is not None and len(filter_ids):
        keep = np.ones(kg.num_entities, dtype=bool)
        keep[np.asarray(list(filter_ids), dtype=np.int64)] = False
        ids = ids[keep]
        distances = distances[keep]
    # stable sort on ascending ids realizes the lower-id tie rule
    return ids[np.argsort(distances, kind="stable")]


@dataclass
class EvalReport:
    """Per-query-type metrics plus unweighted cross-type averages."""

    per_type: dict[str, dict] = field(default_factory=dict)
    averages: dict[str, float] = field(default_factory=dict)
    note: str = ""

    def to_json_dict(self) -> dict:
        return {"per_type": self.per_type, "averages": self.averages, "note": self.note}

    def to_text(self) -> str:
        metric_names = [m for m in self.averages if m != "count"]
        header = ["type"] + metric_names + ["queries"]
        rows = [header]
        for tag in CANONICAL_TAGS:
            if tag not in self.per_type:
                continue
            stats = self.per_type[tag]
            rows.append([tag] + [f"{stats[m]:.4f}" for m in metric_names]
                        + [str(stats["count"])])
        rows.append(["avg"] + [f"{self.averages[m]:.4f}" for m in metric_names] + [""])
        widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
                 for row in rows]
        lines.insert(1, "-" * len(lines[0]))
        if self.note:
            lines.insert(0, f"# {self.note}")
        return "\n".join(lines)


def _unfiltered_query_metrics(ranked, answers, ks):
    out = {f"hits@{k}": hits_at_k(ranked, answers, min(k, ranked.size)) for k in ks}
    out["mrr"] = mrr(ranked, answers)
    return out


def _filtered_query_metrics(dag, sample, table, kg, ks, easy_mask):
    """Conventional per-answer filtered metrics for one query."""
    easy = set(int(a) for a in enumerate_answers(dag, kg, easy_mask).tolist())
    hard = [a for a in sample.answers if a not in easy]
    if not hard:
        return None
    known = set(sample.answers) | easy
    mixture = compile_query(dag, table)
    distances = mixture_distance_many(table.entity_means, mixture)
    order = np.argsort(distances, kind="stable")
    position = np.empty_like(order)
    position[order] = np.arange(order.size)
    per_answer = []
    for a in hard:
        removed_before = sum(1 for o in known if o != a and position[o] < position[a])
        rank = int(position[a]) + 1 - removed_before
        per_answer.append({f"hits@{k}": float(rank <= k) for k in ks} | {"mrr": 1.0 / rank})
    return {m: float(np.mean([pa[m] for pa in per_answer])) for m in per_answer[0]}


def evaluate(table, kg: KnowledgeGraph, workloads: dict[str, list[QuerySample]],
             *, ks=(1, 3, 10), filtered: bool = False,
             easy_mask=("train", "valid")) -> EvalReport:
    """Aggregate metrics over per-type workloads.

    Types with zero queries are omitted from the averages, which are
    unweighted means across the types present.
    """
    metric_names = [f"hits@{k}" for k in ks] + ["mrr"]
    report = EvalReport(note=(
        ("conventional filtered per-answer metrics; " if filtered
         else "verbatim precision@K / prefix-MRR formulas; ")
        + "averages are unweighted means across query types"))
    for tag, samples in workloads.items():
        if not samples:
            continue
        rows = []
        for sample in samples:
            if filtered:
                row = _filtered_query_metrics(sample.dag, sample, table, kg, ks, easy_mask)
                if row is None:
                    continue
            else:
                ranked = rank_candidates(sample.dag, table, kg)
                row = _unfiltered_query_metrics(ranked, sample.answers, ks)
            rows.append(row)
        if not rows:
            continue
        stats = {m: float(np.mean([r[m] for r in rows])) for m in metric_names}
        stats["count"] = len(rows)
        report.per_type[tag] = stats
    if report.per_type:
        for m in metric_names:
            report.averages[m] = float(np.mean([s[m] for s in report.per_type.values()]))
    return report


def random_ranking_report(kg: KnowledgeGraph, workloads: dict[str, list[QuerySample]],
                          seed: int, *, ks=(1, 3, 10)) -> EvalReport:
    """Same metrics for a uniformly random ranking; the chance baseline."""
    rng = np.random.default_rng(seed)
    metric_names = [f"hits@{k}" for k in ks] + ["mrr"]
    report = EvalReport(note="random-ranking baseline")
    for tag, samples in workloads.items():
        if not samples:
            continue
        rows = []
        for sample in samples:
            ranked = rng.permutation(kg.num_entities)
            rows.append(_unfiltered_query_metrics(ranked, sample.answers, ks))
        stats = {m: float(np.mean([r[m] for r in rows])) for m in metric_names}
        stats["count"] = len(rows)
        report.per_type[tag] = stats
    if report.per_type:
        for m in metric_names:
            report.averages[m] = float(np.mean([s[m] for s in report.per_type.values()]))
    return report
