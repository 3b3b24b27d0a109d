"""Gaussian-density knowledge-graph embeddings with closed-form logical
query operators and Mahalanobis ranking."""

__version__ = "0.1.0"

from .errors import (
    DimensionMismatchError,
    FormatError,
    GaussKGError,
    InvalidParameterError,
    NumericError,
    QuerySyntaxError,
    ShapeUnsatisfiableError,
    UnknownNameError,
    VocabMismatchError,
)
from .gaussian import (
    AggregatorParams,
    GaussianDensity,
    GaussianMixture,
    aggregate_weights,
    compact,
    intersect_mixtures,
    mahalanobis,
    mahalanobis_many,
    mixture_distance,
    mixture_distance_many,
    mixture_intersect,
    mixture_translate,
    precision,
    product,
    translate,
    union,
)
from .gradients import grad_mahalanobis, grad_through_product
from .kg import (
    SPLITS,
    KnowledgeGraph,
    Triple,
    ingest_tsv,
    load_snapshot,
    neighbors,
    save_snapshot,
)
from .queries import (
    CANONICAL_TAGS,
    Anchor,
    Intersect,
    QueryDag,
    QuerySample,
    Translate,
    Union,
    canonical_query,
    classify,
    enumerate_answers,
    load_workloads,
    parse_query,
    sample_queries,
    save_workloads,
    serialize_query,
)
from .compiler import compile_query, compile_traced, expected_component_count
from .evaluation import EvalReport, evaluate, hits_at_k, mrr, rank_candidates
from .synthetic import make_hierarchy_kg
from .training import (
    EmbeddingTable,
    TrainConfig,
    init_table,
    load_checkpoint,
    loss,
    save_checkpoint,
    train,
)
