"""Learnable parameters and the negative-sampling training loop.

The raw objective of minimizing positive-answer distances alone has a
trivial minimizer (shrink every precision factor to zero, making all
distances vanish), so training uses a margin log-sigmoid objective with
sampled negatives: per positive answer v+ and k uniform negatives v-,

    L = -log sigma(gamma - D(v+)) - (1/k) sum_i log sigma(D(v-_i) - gamma)

where D is the mixture distance of a candidate mean to the compiled query
and sigma is the logistic function.  The positives-only objective is kept
as ``objective="positives_only"`` for the collapse regression guard.

Gradients are fully analytic (see ``gradients`` / ``compiler``); there is
no numerical or framework differentiation anywhere in the update path.
"""

from __future__ import annotations

import io
import json
import logging
import time
import zipfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .compiler import backprop_compiled, compile_traced
from .errors import (
    FormatError,
    InvalidParameterError,
    NumericError,
    VocabMismatchError,
)
from .gaussian import AggregatorParams, GaussianDensity, mahalanobis_many
from .kg import KnowledgeGraph
from .queries import CANONICAL_TAGS, QuerySample, normalize_tag

__all__ = ["TrainConfig", "EmbeddingTable", "GradientBuffer", "init_table",
           "loss", "train", "save_checkpoint", "load_checkpoint"]

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "gausskg-checkpoint"
CHECKPOINT_VERSION = 1

AGGREGATOR_MODES = {"attention": "attention", "average": "average",
                    "mlp": "scorer", "scorer": "scorer"}


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters; defaults follow the common margin-loss protocol."""

    dim: int = 16
    rank: int = 4
    jitter: float = 1e-3
    learning_rate: float = 0.1
    margin: float = 24.0
    negatives: int = 64
    batch_size: int = 32
    epochs: int = 60
    query_types: tuple[str, ...] = CANONICAL_TAGS
    aggregator: str = "attention"
    seed: int = 0
    optimizer: str = "sgd"               # "sgd" | "adam"
    objective: str = "margin"            # "margin" | "positives_only"
    threads: int = 1
    patience: int = 5

    def __post_init__(self):
        if self.dim < 1:
            raise InvalidParameterError("dim must be >= 1")
        if not 1 <= self.rank <= self.dim:
            raise InvalidParameterError("rank must satisfy 1 <= rank <= dim")
        if self.jitter < 0:
            raise InvalidParameterError("jitter must be >= 0")
        if self.margin <= 0:
            raise InvalidParameterError("margin must be > 0")
        if self.negatives < 1:
            raise InvalidParameterError("negatives must be >= 1")
        if self.batch_size < 1 or self.epochs < 0 or self.threads < 1:
            raise InvalidParameterError("batch_size/epochs/threads out of range")
        object.__setattr__(self, "query_types",
                           tuple(normalize_tag(t) for t in self.query_types))
        mode = AGGREGATOR_MODES.get(self.aggregator)
        if mode is None:
            raise InvalidParameterError(f"unknown aggregator {self.aggregator!r}")
        object.__setattr__(self, "aggregator", mode)
        if self.optimizer not in ("sgd", "adam"):
            raise InvalidParameterError(f"unknown optimizer {self.optimizer!r}")
        if self.objective not in ("margin", "positives_only"):
            raise InvalidParameterError(f"unknown objective {self.objective!r}")


@dataclass
class EmbeddingTable:
    """All learnable state: per-entity and per-relation densities plus the
    union-aggregator parameters."""

    dim: int
    rank: int
    jitter: float
    entity_means: np.ndarray      # (E, d)
    entity_factors: np.ndarray    # (E, d, r)
    relation_means: np.ndarray    # (R, d)
    relation_factors: np.ndarray  # (R, d, r)
    aggregator: AggregatorParams

    @property
    def num_entities(self) -> int:
        return self.entity_means.shape[0]

    @property
    def num_relations(self) -> int:
        return self.relation_means.shape[0]

    def entity_density(self, i: int) -> GaussianDensity:
        return GaussianDensity(self.entity_means[i].copy(),
                               self.entity_factors[i].copy(), self.jitter)

    def relation_density(self, i: int) -> GaussianDensity:
        return GaussianDensity(self.relation_means[i].copy(),
                               self.relation_factors[i].copy(), self.jitter)

    def copy(self) -> "EmbeddingTable":
        return EmbeddingTable(self.dim, self.rank, self.jitter,
                              self.entity_means.copy(), self.entity_factors.copy(),
                              self.relation_means.copy(), self.relation_factors.copy(),
                              self.aggregator)

    def aggregator_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name in ("weight", "bias", "out_weight", "out_bias"):
            a = getattr(self.aggregator, name)
            if a is not None:
                out[name] = a
        return out


def init_table(config: TrainConfig, kg: KnowledgeGraph) -> EmbeddingTable:
    """Seeded random initialization: means uniform in +-0.5/sqrt(d), factor
    entries normal with std 1/sqrt(d*r)."""
    rng = np.random.default_rng(config.seed)
    d, r = config.dim, config.rank
    bound = 0.5 / np.sqrt(d)
    std = 1.0 / np.sqrt(d * r)
    return EmbeddingTable(
        dim=d, rank=r, jitter=config.jitter,
        entity_means=rng.uniform(-bound, bound, size=(kg.num_entities, d)),
        entity_factors=rng.normal(0.0, std, size=(kg.num_entities, d, r)),
        relation_means=rng.uniform(-bound, bound, size=(kg.num_relations, d)),
        relation_factors=rng.normal(0.0, std, size=(kg.num_relations, d, r)),
        aggregator=AggregatorParams.init_random(config.aggregator, d, r, rng),
    )


class GradientBuffer:
    """Sparse parameter gradients keyed by entity/relation id."""

    def __init__(self):
        self.entity_means: dict[int, np.ndarray] = {}
        self.entity_factors: dict[int, np.ndarray] = {}
        self.relation_means: dict[int, np.ndarray] = {}
        self.relation_factors: dict[int, np.ndarray] = {}
        self.aggregator: dict[str, np.ndarray] = {}

    @staticmethod
    def _acc(store, key, value):
        if key in store:
            store[key] = store[key] + value
        else:
            store[key] = np.array(value, dtype=float)

    def add_entity(self, i, mean_grad, factor_grad):
        self._acc(self.entity_means, int(i), mean_grad)
        self._acc(self.entity_factors, int(i), factor_grad)

    def add_entity_mean(self, i, mean_grad):
        self._acc(self.entity_means, int(i), mean_grad)

    def add_relation(self, i, mean_grad, factor_grad):
        self._acc(self.relation_means, int(i), mean_grad)
        self._acc(self.relation_factors, int(i), factor_grad)

    def add_aggregator(self, grads: dict):
        for name, g in grads.items():
            self._acc(self.aggregator, name, g)

    def merge(self, other: "GradientBuffer"):
        for mine, theirs in ((self.entity_means, other.entity_means),
                             (self.entity_factors, other.entity_factors),
                             (self.relation_means, other.relation_means),
                             (self.relation_factors, other.relation_factors),
                             (self.aggregator, other.aggregator)):
            for key, value in theirs.items():
                self._acc(mine, key, value)


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

def _log_sigmoid(x: float) -> float:
    return -float(np.logaddexp(0.0, -x))


def _sigmoid(x: float) -> float:
    return float(1.0 / (1.0 + np.exp(-x))) if x >= 0 else float(np.exp(x) / (1.0 + np.exp(x)))


def _draw_candidates(sample: QuerySample, num_entities: int, k: int,
                     rng: np.random.Generator, objective: str):
    """Candidate ids scored for one sample: positives first, then negatives.

    Every answer is scored as a positive; the k negatives are uniform draws
    from the non-answers.
    """
    answers = np.asarray(sample.answers, dtype=np.int64)
    if objective == "positives_only":
        return answers, answers.size, None
    if answers.size >= num_entities:
        raise InvalidParameterError("no negatives available: every entity is an answer")
    answer_set = set(sample.answers)
    negs = rng.integers(0, num_entities, size=k)
    bad = np.array([n in answer_set for n in negs])
    while bad.any():
        negs[bad] = rng.integers(0, num_entities, size=int(bad.sum()))
        bad = np.array([n in answer_set for n in negs])
    return np.concatenate([answers, negs]), answers.size, k


def _sample_loss(sample: QuerySample, table: EmbeddingTable, candidate_ids,
                 n_pos, margin, k, objective, scale, buf: GradientBuffer | None):
    """Loss for one sample with fixed candidates; gradients into ``buf``."""
    cq = compile_traced(sample.dag, table)
    cand_means = table.entity_means[candidate_ids]
    comps = cq.components
    phi = cq.mixture.weights
    per_comp = np.stack([mahalanobis_many(cand_means, c.density) for c in comps])
    distances = phi @ per_comp
    if not np.all(np.isfinite(distances)):
        raise NumericError(f"distance overflow on sample {sample.dag!r}")

    if objective == "positives_only":
        value = float(distances.sum())
        coeffs = np.full(distances.shape, 1.0)
    else:
        d_pos = distances[:n_pos]
        d_neg = distances[n_pos:]
        value = -sum(_log_sigmoid(margin - d) for d in d_pos) / n_pos
        value -= sum(_log_sigmoid(d - margin) for d in d_neg) / k
        coeffs = np.empty_like(distances)
        coeffs[:n_pos] = [_sigmoid(d - margin) / n_pos for d in d_pos]
        coeffs[n_pos:] = [-_sigmoid(margin - d) / k for d in d_neg]
    if buf is None:
        return scale * value

    coeffs = coeffs * scale
    phi_bar = per_comp @ coeffs
    component_bars = []
    for i, comp in enumerate(comps):
        g = comp.density
        delta = g.mean[None, :] - cand_means        # (n_cand, d)
        a = coeffs * phi[i]
        weighted = a[:, None] * delta
        s = weighted.sum(axis=0)
        t = g.factor.T @ s
        mean_bar = 2.0 * (g.factor @ t + g.jitter * s)
        gram = delta.T @ weighted
        factor_bar = 2.0 * (gram @ g.factor)
        component_bars.append((mean_bar, factor_bar))
        # candidate means enter only through the distance, with opposite sign
        cand_bar = -2.0 * ((weighted @ g.factor) @ g.factor.T + g.jitter * weighted)
        for row, cid in zip(cand_bar, candidate_ids):
            buf.add_entity_mean(cid, row)
    backprop_compiled(cq, table, phi_bar, component_bars, buf)
    return scale * value


def loss(batch, table: EmbeddingTable, rng: np.random.Generator, *,
         margin: float = 24.0, negatives: int = 64, objective: str = "margin",
         threads: int = 1):
    """Mean loss over a batch plus gradients for every touched parameter.

    Every answer of a sample is scored as a positive; the ``negatives``
    uniform non-answers are drawn serially from ``rng``, so results do not
    depend on ``threads``; per-sample gradients are reduced in sample
    order, which keeps even the floating-point summation order fixed.
    """
    if not batch:
        raise InvalidParameterError("empty batch")
    scale = 1.0 / len(batch)
    draws = [_draw_candidates(s, table.num_entities, negatives, rng, objective)
             for s in batch]

    def run(args):
        sample, (cand, n_pos, _) = args
        buf = GradientBuffer()
        value = _sample_loss(sample, table, cand, n_pos, margin, negatives,
                             objective, scale, buf)
        return value, buf

    total = 0.0
    merged = GradientBuffer()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, zip(batch, draws)))
    else:
        results = [run(args) for args in zip(batch, draws)]
    for value, buf in results:
        total += value
        merged.merge(buf)
    return total, merged


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------

class _SGD:
    def __init__(self, config):
        self.lr = config.learning_rate

    def step(self, table: EmbeddingTable, grads: GradientBuffer):
        for i, g in grads.entity_means.items():
            table.entity_means[i] -= self.lr * g
        for i, g in grads.entity_factors.items():
            table.entity_factors[i] -= self.lr * g
        for i, g in grads.relation_means.items():
            table.relation_means[i] -= self.lr * g
        for i, g in grads.relation_factors.items():
            table.relation_factors[i] -= self.lr * g
        if grads.aggregator:
            arrays = table.aggregator_arrays()
            for name, g in grads.aggregator.items():
                arrays[name] -= self.lr * g


class _Adam:
    """First/second-moment adaptive updates, applied lazily to touched ids."""

    def __init__(self, config, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = config.learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def _update(self, key, param_slice, grad):
        m = self.m.get(key)
        if m is None:
            m = np.zeros_like(param_slice)
            self.m[key] = m
            self.v[key] = np.zeros_like(param_slice)
        v = self.v[key]
        m *= self.beta1
        m += (1 - self.beta1) * grad
        v *= self.beta2
        v += (1 - self.beta2) * grad ** 2
        m_hat = m / (1 - self.beta1 ** self.t)
        v_hat = v / (1 - self.beta2 ** self.t)
        param_slice -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def step(self, table: EmbeddingTable, grads: GradientBuffer):
        self.t += 1
        for i, g in grads.entity_means.items():
            self._update(("em", i), table.entity_means[i], g)
        for i, g in grads.entity_factors.items():
            self._update(("ef", i), table.entity_factors[i], g)
        for i, g in grads.relation_means.items():
            self._update(("rm", i), table.relation_means[i], g)
        for i, g in grads.relation_factors.items():
            self._update(("rf", i), table.relation_factors[i], g)
        if grads.aggregator:
            arrays = table.aggregator_arrays()
            for name, g in grads.aggregator.items():
                self._update(("agg", name), arrays[name], g)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

def _round_robin_batches(per_type: dict[str, list], batch_size: int,
                         rng: np.random.Generator):
    """Yield batches that cycle the enabled query types so none starves."""
    tags = [t for t in CANONICAL_TAGS if per_type.get(t)]
    orders = {t: rng.permutation(len(per_type[t])) for t in tags}
    cursors = {t: 0 for t in tags}
    total = sum(len(per_type[t]) for t in tags)
    steps = -(-total // batch_size)
    tag_cycle = 0
    for _ in range(steps):
        batch = []
        histogram: dict[str, int] = {}
        for _ in range(batch_size):
            tag = tags[tag_cycle % len(tags)]
            tag_cycle += 1
            order = orders[tag]
            batch.append(per_type[tag][order[cursors[tag] % len(order)]])
            cursors[tag] += 1
            histogram[tag] = histogram.get(tag, 0) + 1
        yield batch, histogram


def train(config: TrainConfig, kg: KnowledgeGraph, workloads: dict):
    """Mini-batch gradient descent over mixed query workloads.

    ``workloads`` maps ``"train"`` (required) and optionally ``"valid"`` to
    per-type sample dicts.  Returns the trained table and a per-epoch
    metrics log ``[{epoch, mean_loss, valid_hits3, wall_seconds}, ...]``.
    Stops early when validation HITS@3 has not improved for
    ``config.patience`` consecutive epochs.
    """
    from .evaluation import evaluate  # late import; evaluation is downstream

    train_sets = workloads.get("train") or {}
    for tag in config.query_types:
        if not train_sets.get(tag):
            raise InvalidParameterError(f"train workloads missing query type {tag!r}")
    per_type = {t: train_sets[t] for t in config.query_types}
    valid_sets = workloads.get("valid") or None

    table = init_table(config, kg)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    optimizer = _Adam(config) if config.optimizer == "adam" else _SGD(config)

    metrics = []
    best_hits = -np.inf
    stale = 0
    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        losses = []
        histogram: dict[str, int] = {}
        for batch, batch_hist in _round_robin_batches(per_type, config.batch_size, rng):
            value, grads = loss(batch, table, rng, margin=config.margin,
                                negatives=config.negatives,
                                objective=config.objective, threads=config.threads)
            optimizer.step(table, grads)
            losses.append(value)
            for tag, n in batch_hist.items():
                histogram[tag] = histogram.get(tag, 0) + n
        valid_hits3 = None
        if valid_sets:
            report = evaluate(table, kg, valid_sets, ks=(3,))
            valid_hits3 = report.averages["hits@3"]
        record = {
            "epoch": epoch,
            "mean_loss": float(np.mean(losses)),
            "valid_hits3": valid_hits3,
            "wall_seconds": time.perf_counter() - started,
        }
        metrics.append(record)
        logger.info("epoch %d: loss=%.4f valid_hits3=%s types=%s",
                    epoch, record["mean_loss"],
                    "n/a" if valid_hits3 is None else f"{valid_hits3:.3f}",
                    histogram)
        if valid_hits3 is not None:
            if valid_hits3 > best_hits:
                best_hits = valid_hits3
                stale = 0
            else:
                stale += 1
                if stale >= config.patience:
                    logger.info("early stop: no HITS@3 improvement in %d epochs", stale)
                    break
    return table, metrics


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(table: EmbeddingTable, path: str, kg: KnowledgeGraph,
                    config: TrainConfig | None = None):
    """Versioned, self-describing checkpoint pinned to the graph vocabulary."""
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "dim": table.dim,
        "rank": table.rank,
        "jitter": table.jitter,
        "aggregator_mode": table.aggregator.mode,
        "vocab_hashes": kg.vocab_hashes(),
        "num_entities": table.num_entities,
        "num_relations": table.num_relations,
        "config": asdict(config) if config is not None else None,
    }
    arrays = {
        "entity_means": table.entity_means,
        "entity_factors": table.entity_factors,
        "relation_means": table.relation_means,
        "relation_factors": table.relation_factors,
    }
    for name, a in table.aggregator_arrays().items():
        arrays[f"aggregator_{name}"] = a
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header)), **arrays)


def load_checkpoint(path: str, kg: KnowledgeGraph) -> tuple[EmbeddingTable, dict]:
    """Load a checkpoint, refusing version or vocabulary mismatches."""
    try:
        with np.load(path, allow_pickle=False) as data:
            payload = {name: data[name] for name in data.files}
    except (zipfile.BadZipFile, ValueError, EOFError, KeyError, io.UnsupportedOperation) as exc:
        raise FormatError(f"{path}: not a readable checkpoint: {exc}") from exc
    if "header" not in payload:
        raise FormatError(f"{path}: checkpoint header missing")
    header = json.loads(str(payload["header"]))
    if header.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if header.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: checkpoint version {header.get('version')!r} "
                          f"unsupported (expected {CHECKPOINT_VERSION})")
    hashes = kg.vocab_hashes()
    if header["vocab_hashes"] != hashes:
        raise VocabMismatchError(
            f"{path}: checkpoint was trained against a different vocabulary "
            f"(stored {header['vocab_hashes']}, graph has {hashes})"
        )
    mode = header["aggregator_mode"]
    dim, rank = int(header["dim"]), int(header["rank"])
    agg_arrays = {name: payload[f"aggregator_{name}"]
                  for name in ("weight", "bias", "out_weight", "out_bias")
                  if f"aggregator_{name}" in payload}
    aggregator = (AggregatorParams.average(dim, rank) if mode == "average"
                  else AggregatorParams(mode=mode, dim=dim, rank=rank, **agg_arrays))
    table = EmbeddingTable(
        dim=dim, rank=rank, jitter=float(header["jitter"]),
        entity_means=payload["entity_means"],
        entity_factors=payload["entity_factors"],
        relation_means=payload["relation_means"],
        relation_factors=payload["relation_factors"],
        aggregator=aggregator,
    )
    return table, header
