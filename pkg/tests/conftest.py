"""Shared fixtures and independent numeric oracles for the test suite."""

import numpy as np
import pytest

from gausskg import GaussianDensity, KnowledgeGraph


def random_density(rng, d, r, jitter=1e-3, mean_scale=1.0, factor_scale=1.0):
    return GaussianDensity(
        mean=rng.normal(0.0, mean_scale, size=d),
        factor=rng.normal(0.0, factor_scale, size=(d, r)),
        jitter=jitter,
    )


def dense_precision_oracle(g):
    """Reference dense precision via plain matrix multiply."""
    return g.factor @ g.factor.T + g.jitter * np.eye(g.dim)


def dense_product_oracle(g1, g2):
    """Reference product mean/precision via explicit dense inversion."""
    p1 = dense_precision_oracle(g1)
    p2 = dense_precision_oracle(g2)
    p3 = p1 + p2
    mean = np.linalg.inv(p3) @ (p1 @ g1.mean + p2 @ g2.mean)
    return mean, p3


def grid_product_oracle(mu1, var1, mu2, var2, points=40001):
    """Mean/variance of the normalized pointwise product of two univariate
    normal PDFs, by trapezoid integration on a fine grid."""
    sd = max(np.sqrt(var1), np.sqrt(var2))
    lo = min(mu1, mu2) - 12 * sd
    hi = max(mu1, mu2) + 12 * sd
    x = np.linspace(lo, hi, points)
    pdf = (np.exp(-0.5 * (x - mu1) ** 2 / var1) * np.exp(-0.5 * (x - mu2) ** 2 / var2))
    z = np.trapezoid(pdf, x)
    mean = np.trapezoid(x * pdf, x) / z
    var = np.trapezoid((x - mean) ** 2 * pdf, x) / z
    return mean, var


def central_difference(fn, theta, h=1e-5):
    """Central finite-difference gradient of scalar fn at flat vector theta."""
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        bumped = theta.copy()
        bumped[i] += h
        hi = fn(bumped)
        bumped[i] -= 2 * h
        lo = fn(bumped)
        grad[i] = (hi - lo) / (2 * h)
    return grad


def relative_error(a, b):
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


def toy_kg_two_tails():
    """{(a, r, b), (a, r, c)} in the train split."""
    triples = {"train": np.array([[0, 0, 1], [0, 0, 2]], dtype=np.int64)}
    return KnowledgeGraph(["a", "b", "c"], ["r"], triples)


def toy_kg_intersection():
    """{(a, r1, x), (b, r2, x), (b, r2, y)} in the train split."""
    triples = {"train": np.array([[0, 0, 2], [1, 1, 2], [1, 1, 3]], dtype=np.int64)}
    return KnowledgeGraph(["a", "b", "x", "y"], ["r1", "r2"], triples)


AGG_PARAM_NAMES = ("weight", "bias", "out_weight", "out_bias")


def table_to_theta(table):
    """Flatten every learnable parameter of an embedding table."""
    parts = [table.entity_means.ravel(), table.entity_factors.ravel(),
             table.relation_means.ravel(), table.relation_factors.ravel()]
    for name in AGG_PARAM_NAMES:
        a = getattr(table.aggregator, name)
        if a is not None:
            parts.append(np.asarray(a, dtype=float).ravel())
    return np.concatenate(parts)


def theta_to_table(theta, like):
    """Rebuild a table with ``like``'s shapes from a flat parameter vector."""
    from gausskg import AggregatorParams, EmbeddingTable

    pos = 0

    def take(shape):
        nonlocal pos
        size = int(np.prod(shape)) if shape else 1
        out = theta[pos:pos + size].reshape(shape)
        pos += size
        return out

    em = take(like.entity_means.shape)
    ef = take(like.entity_factors.shape)
    rm = take(like.relation_means.shape)
    rf = take(like.relation_factors.shape)
    mode = like.aggregator.mode
    if mode == "average":
        agg = AggregatorParams.average(like.dim, like.rank)
    else:
        kwargs = {}
        for name in AGG_PARAM_NAMES:
            a = getattr(like.aggregator, name)
            if a is not None:
                kwargs[name] = take(np.shape(a))
        agg = AggregatorParams(mode=mode, dim=like.dim, rank=like.rank, **kwargs)
    assert pos == theta.size
    return EmbeddingTable(like.dim, like.rank, like.jitter, em.copy(), ef.copy(),
                          rm.copy(), rf.copy(), agg)


def grads_to_theta(buf, like):
    """Scatter a sparse GradientBuffer into the flat parameter layout."""
    em = np.zeros_like(like.entity_means)
    ef = np.zeros_like(like.entity_factors)
    rm = np.zeros_like(like.relation_means)
    rf = np.zeros_like(like.relation_factors)
    for i, g in buf.entity_means.items():
        em[i] += g
    for i, g in buf.entity_factors.items():
        ef[i] += g
    for i, g in buf.relation_means.items():
        rm[i] += g
    for i, g in buf.relation_factors.items():
        rf[i] += g
    parts = [em.ravel(), ef.ravel(), rm.ravel(), rf.ravel()]
    for name in AGG_PARAM_NAMES:
        a = getattr(like.aggregator, name)
        if a is not None:
            g = buf.aggregator.get(name)
            parts.append((np.zeros(np.shape(a)) if g is None
                          else np.asarray(g, dtype=float)).ravel())
    return np.concatenate(parts)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
