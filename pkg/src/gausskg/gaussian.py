"""Gaussian densities, mixtures, and the closed-form logical operators.

Every entity, relation, and intermediate query value is a multivariate
Gaussian stored in information form: instead of a covariance we keep a
factored precision

    precision = factor @ factor.T + jitter * I

with ``factor`` of shape ``(d, w)``.  The jitter term keeps the precision
positive definite even when ``w < d``, so Mahalanobis scoring and the
intersection solve are always well posed.

The operators implemented here are closed over this representation:

* ``translate``  -- means add, precisions add.
* ``product``    -- precisions add; the mean solves the linear system
  ``(P1 + P2) m = P1 m1 + P2 m2`` (the normalized pointwise product of the
  two density functions).
* ``union``      -- concatenation into a weighted mixture.

Precision sums are represented exactly by column-concatenating the operand
factors (``[L1 | L2] @ [L1 | L2].T = L1 @ L1.T + L2 @ L2.T``) and summing
the jitters, so no information is lost at a single chain step.  Deep chains
are kept bounded by :func:`compact`, which compresses a wide factor through
a thin QR factorization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, qr

from .errors import DimensionMismatchError, InvalidParameterError, NumericError

__all__ = [
    "GaussianDensity",
    "GaussianMixture",
    "AggregatorParams",
    "precision",
    "mahalanobis",
    "mahalanobis_many",
    "translate",
    "product",
    "compact",
    "flatten_params",
    "component_scores",
    "aggregate_weights",
    "union",
    "mixture_translate",
    "mixture_intersect",
    "intersect_mixtures",
    "mixture_distance",
    "mixture_distance_many",
]

DEFAULT_JITTER = 1e-3


def _as_readonly(a, dtype=float):
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class GaussianDensity:
    """One Gaussian in information form: mean, precision factor, jitter.

    ``precision = factor @ factor.T + jitter * I``.  Immutable; all
    operators return fresh values.
    """

    mean: np.ndarray
    factor: np.ndarray
    jitter: float = DEFAULT_JITTER

    def __post_init__(self):
        mean = _as_readonly(self.mean)
        factor = _as_readonly(self.factor)
        if mean.ndim != 1:
            raise InvalidParameterError(f"mean must be a vector, got shape {mean.shape}")
        if factor.ndim != 2 or factor.shape[0] != mean.shape[0]:
            raise InvalidParameterError(
                f"factor must be (d, w) with d={mean.shape[0]}, got {factor.shape}"
            )
        if not np.all(np.isfinite(mean)) or not np.all(np.isfinite(factor)):
            raise InvalidParameterError("mean/factor entries must be finite")
        if not (self.jitter >= 0.0 and np.isfinite(self.jitter)):
            raise InvalidParameterError(f"jitter must be finite and >= 0, got {self.jitter}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "factor", factor)
        object.__setattr__(self, "jitter", float(self.jitter))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def width(self) -> int:
        """Number of factor columns currently backing the precision."""
        return self.factor.shape[1]


@dataclass(frozen=True)
class GaussianMixture:
    """Weighted set of Gaussian densities; the closed form of any query result.

    Weights are strictly positive and sum to one.  A single-component
    mixture with weight 1 is the canonical embedding of a plain density.
    """

    components: tuple[GaussianDensity, ...]
    weights: np.ndarray

    def __post_init__(self):
        comps = tuple(self.components)
        weights = _as_readonly(self.weights)
        if len(comps) < 1:
            raise InvalidParameterError("mixture needs at least one component")
        if weights.shape != (len(comps),):
            raise InvalidParameterError(
                f"weights shape {weights.shape} does not match {len(comps)} components"
            )
        if not np.all(weights > 0.0):
            raise InvalidParameterError("mixture weights must be strictly positive")
        if abs(float(weights.sum()) - 1.0) > 1e-9:
            raise InvalidParameterError(f"mixture weights sum to {weights.sum()!r}, not 1")
        d = comps[0].dim
        for c in comps[1:]:
            if c.dim != d:
                raise DimensionMismatchError("mixture components have mixed dimensions")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "weights", weights)

    @property
    def dim(self) -> int:
        return self.components[0].dim

    @classmethod
    def from_density(cls, g: GaussianDensity) -> "GaussianMixture":
        return cls((g,), np.ones(1))


def precision(g: GaussianDensity) -> np.ndarray:
    """Dense precision matrix ``factor @ factor.T + jitter * I``.

    Symmetrized explicitly so the result is symmetric to the last bit.
    """
    p = g.factor @ g.factor.T
    p = 0.5 * (p + p.T)
    if g.jitter:
        p = p + g.jitter * np.eye(g.dim)
    return p


def _check_dim(d: int, other: int):
    if d != other:
        raise DimensionMismatchError(f"dimension mismatch: {d} vs {other}")


def mahalanobis(candidate_mean: np.ndarray, query: GaussianDensity) -> float:
    """Squared Mahalanobis distance of a candidate mean from a query density.

    ``(m_q - m_c).T @ P_q @ (m_q - m_c)`` where ``P_q`` is the query's
    precision; the candidate contributes only its mean.
    """
    candidate_mean = np.asarray(candidate_mean, dtype=float)
    _check_dim(query.dim, candidate_mean.shape[-1])
    delta = query.mean - candidate_mean
    t = query.factor.T @ delta
    return float(t @ t + query.jitter * (delta @ delta))


def mahalanobis_many(candidate_means: np.ndarray, query: GaussianDensity) -> np.ndarray:
    """Vectorized :func:`mahalanobis` over rows of ``candidate_means``."""
    candidate_means = np.asarray(candidate_means, dtype=float)
    _check_dim(query.dim, candidate_means.shape[-1])
    delta = query.mean[None, :] - candidate_means
    t = delta @ query.factor
    return np.einsum("ij,ij->i", t, t) + query.jitter * np.einsum("ij,ij->i", delta, delta)


def translate(e: GaussianDensity, rel: GaussianDensity) -> GaussianDensity:
    """Follow a relation: means add, precisions add.

    The summed precision is represented exactly by column concatenation of
    the operand factors plus the summed jitter.
    """
    _check_dim(e.dim, rel.dim)
    return GaussianDensity(
        mean=e.mean + rel.mean,
        factor=np.hstack([e.factor, rel.factor]),
        jitter=e.jitter + rel.jitter,
    )


def product(g1: GaussianDensity, g2: GaussianDensity, ids=None) -> GaussianDensity:
    """Normalized pointwise product of two Gaussian densities (intersection).

    The result has precision ``P1 + P2`` and its mean solves

        (P1 + P2) m = P1 m1 + P2 m2

    via a Cholesky solve; the summed precision is never inverted explicitly.
    ``ids`` optionally labels the operands for error reporting.
    """
    _check_dim(g1.dim, g2.dim)
    p1 = precision(g1)
    p2 = precision(g2)
    a = p1 + p2
    b = p1 @ g1.mean + p2 @ g2.mean
    try:
        mean = cho_solve(cho_factor(a, lower=True), b)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"intersection solve failed (non-PD system): {exc}", ids=ids) from exc
    return GaussianDensity(
        mean=mean,
        factor=np.hstack([g1.factor, g2.factor]),
        jitter=g1.jitter + g2.jitter,
    )


def compact(g: GaussianDensity, max_width: int) -> GaussianDensity:
    """Cap factor width without changing the precision where possible.

    If the factor has more than ``max_width`` columns it is compressed
    through a thin QR factorization of ``factor.T``, which reproduces
    ``factor @ factor.T`` exactly (to rounding) with at most ``d`` columns.
    Only if ``max_width < d`` are columns actually dropped: the ones with
    the largest Euclidean norm are kept, ties broken toward the lower
    original column index, original order preserved.
    """
    if max_width < 1:
        raise InvalidParameterError(f"max_width must be >= 1, got {max_width}")
    w = g.width
    if w <= max_width:
        return g
    r = qr(g.factor.T, mode="economic")[1]  # (k, d), k = min(w, d)
    new_factor = r.T
    if new_factor.shape[1] > max_width:
        norms = np.linalg.norm(new_factor, axis=0)
        keep = np.sort(np.argsort(-norms, kind="stable")[:max_width])
        new_factor = new_factor[:, keep]
    return GaussianDensity(mean=g.mean, factor=new_factor, jitter=g.jitter)


# ---------------------------------------------------------------------------
# Mixture weight aggregation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AggregatorParams:
    """How mixture weights are computed from component parameters.

    ``attention`` scores each component with one shared linear map of its
    flattened ``(mean ++ factor)`` vector and softmaxes across components;
    ``scorer`` replaces the linear map with a two-layer tanh network of
    hidden width ``2 d``; ``average`` assigns uniform weights and carries
    no parameters.
    """

    mode: str
    dim: int
    rank: int
    weight: np.ndarray | None = None        # attention: (m,)     scorer: (h, m)
    bias: np.ndarray | None = None          # attention: ()       scorer: (h,)
    out_weight: np.ndarray | None = None    # scorer: (h,)
    out_bias: np.ndarray | None = None      # scorer: ()
    _arrays: tuple = field(default=(), repr=False)

    MODES = ("attention", "average", "scorer")

    def __post_init__(self):
        if self.mode not in self.MODES:
            raise InvalidParameterError(f"unknown aggregator mode {self.mode!r}")
        m = self.dim * (self.rank + 1)
        h = 2 * self.dim
        if self.mode == "average":
            if any(a is not None for a in (self.weight, self.bias, self.out_weight, self.out_bias)):
                raise InvalidParameterError("average mode carries no parameters")
        elif self.mode == "attention":
            self._require("weight", (m,))
            self._require("bias", ())
        else:
            self._require("weight", (h, m))
            self._require("bias", (h,))
            self._require("out_weight", (h,))
            self._require("out_bias", ())

    def _require(self, name, shape):
        a = getattr(self, name)
        if a is None:
            raise InvalidParameterError(f"{self.mode} mode requires parameter {name!r}")
        a = np.array(a, dtype=float)
        if a.shape != shape:
            raise InvalidParameterError(f"{name} must have shape {shape}, got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise InvalidParameterError(f"{name} entries must be finite")
        object.__setattr__(self, name, a)

    @property
    def input_size(self) -> int:
        return self.dim * (self.rank + 1)

    @classmethod
    def average(cls, dim: int, rank: int) -> "AggregatorParams":
        return cls(mode="average", dim=dim, rank=rank)

    @classmethod
    def init_random(cls, mode: str, dim: int, rank: int, rng: np.random.Generator) -> "AggregatorParams":
        """Seeded initialization of the learnable scoring parameters."""
        m = dim * (rank + 1)
        h = 2 * dim
        if mode == "average":
            return cls.average(dim, rank)
        if mode == "attention":
            return cls(mode="attention", dim=dim, rank=rank,
                       weight=rng.normal(0.0, 1.0 / np.sqrt(m), size=m),
                       bias=np.zeros(()))
        return cls(mode="scorer", dim=dim, rank=rank,
                   weight=rng.normal(0.0, 1.0 / np.sqrt(m), size=(h, m)),
                   bias=np.zeros(h),
                   out_weight=rng.normal(0.0, 1.0 / np.sqrt(h), size=h),
                   out_bias=np.zeros(()))


def _adapt_columns(factor: np.ndarray, rank: int) -> tuple[np.ndarray, np.ndarray | None]:
    """Reduce/pad a factor to exactly ``rank`` columns for scoring.

    Wider factors keep their ``rank`` largest-norm columns (stable order);
    narrower ones are zero-padded.  Returns the adapted matrix and the
    selected column indices (``None`` means identity / padding).
    """
    w = factor.shape[1]
    if w == rank:
        return factor, None
    if w > rank:
        norms = np.linalg.norm(factor, axis=0)
        keep = np.sort(np.argsort(-norms, kind="stable")[:rank])
        return factor[:, keep], keep
    padded = np.zeros((factor.shape[0], rank))
    padded[:, :w] = factor
    return padded, None


def flatten_params(g: GaussianDensity, rank: int) -> tuple[np.ndarray, np.ndarray | None]:
    """Flattened ``(mean ++ factor)`` scoring input of length ``d * (rank+1)``."""
    adapted, keep = _adapt_columns(g.factor, rank)
    return np.concatenate([g.mean, adapted.ravel()]), keep


def component_scores(components, params: AggregatorParams,
                     xs: np.ndarray | None = None) -> np.ndarray:
    """Per-component scalar scores under the aggregator (pre-softmax)."""
    if params.mode == "average":
        return np.zeros(len(components))
    if xs is None:
        xs = np.stack([flatten_params(c, params.rank)[0] for c in components])
    if params.mode == "attention":
        return xs @ params.weight + float(params.bias)
    hidden = np.tanh(xs @ params.weight.T + params.bias)
    return hidden @ params.out_weight + float(params.out_bias)


def softmax(scores: np.ndarray) -> np.ndarray:
    # floor keeps weights strictly positive even when score gaps exceed the
    # float64 exp underflow threshold (~745)
    z = np.exp(scores - scores.max())
    z = np.maximum(z, 1e-30)
    return z / z.sum()


def aggregate_weights(components, params: AggregatorParams) -> np.ndarray:
    """Positive, normalized mixture weights for the given components."""
    if len(components) == 0:
        raise InvalidParameterError("cannot aggregate an empty component list")
    if params.mode == "average":
        return np.full(len(components), 1.0 / len(components))
    return softmax(component_scores(components, params))


# ---------------------------------------------------------------------------
# Mixture operators
# ---------------------------------------------------------------------------

def union(inputs, params: AggregatorParams) -> GaussianMixture:
    """Union: concatenate all components and re-aggregate weights jointly."""
    comps = []
    for m in inputs:
        comps.extend(m.components)
    if not comps:
        raise InvalidParameterError("union needs at least one component")
    d = comps[0].dim
    for c in comps[1:]:
        _check_dim(d, c.dim)
    return GaussianMixture(tuple(comps), aggregate_weights(comps, params))


def mixture_translate(m: GaussianMixture, rel: GaussianDensity,
                      params: AggregatorParams) -> GaussianMixture:
    """Translate every component by the relation; weights are recomputed."""
    comps = tuple(translate(c, rel) for c in m.components)
    return GaussianMixture(comps, aggregate_weights(comps, params))


def mixture_intersect(m: GaussianMixture, e: GaussianDensity,
                      params: AggregatorParams) -> GaussianMixture:
    """Intersect a mixture with a single density, component by component.

    The intersection distributes over the mixture (distributive law), so
    each component is replaced by its product with ``e``; weights are
    recomputed over the new components.
    """
    comps = tuple(product(e, c) for c in m.components)
    return GaussianMixture(comps, aggregate_weights(comps, params))


def intersect_mixtures(m1: GaussianMixture, m2: GaussianMixture,
                       params: AggregatorParams) -> GaussianMixture:
    """Intersect two mixtures by distributing over all component pairs."""
    comps = tuple(product(c1, c2) for c1 in m1.components for c2 in m2.components)
    return GaussianMixture(comps, aggregate_weights(comps, params))


def mixture_distance(candidate_mean: np.ndarray, m: GaussianMixture) -> float:
    """Weighted sum of per-component Mahalanobis distances."""
    return float(sum(w * mahalanobis(candidate_mean, c)
                     for w, c in zip(m.weights, m.components)))


def mixture_distance_many(candidate_means: np.ndarray, m: GaussianMixture) -> np.ndarray:
    """Vectorized :func:`mixture_distance` over rows of ``candidate_means``."""
    total = np.zeros(np.asarray(candidate_means).shape[0])
    for w, c in zip(m.weights, m.components):
        total += w * mahalanobis_many(candidate_means, c)
    return total
