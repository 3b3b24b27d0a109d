"""Compile query DAGs into Gaussian mixtures.

Anchor nodes look up entity densities; Translate applies the translation
operator to every component; Intersect distributes pairwise over the
component products; Union concatenates components.  Mixture weights never
feed forward into any mean or factor, so they are computed once, over the
root's components.  (Recomputing them after every operator, as the chain
operators specify, yields the same final weights: renormalizing a softmax
over a subset of items equals the softmax over that subset.)

``compile_query`` is the inference path: component counts are capped at
intersections (drop lowest-weight, keep original order) and factor widths
are compacted along deep chains.  ``compile_traced`` is the training path:
no compaction, and every component remembers how it was built so
:func:`backprop_compiled` can push loss gradients onto the underlying
entity, relation, and aggregator parameters analytically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import NumericError
from .gaussian import (
    GaussianDensity,
    GaussianMixture,
    aggregate_weights,
    compact,
    component_scores,
    flatten_params,
    precision,
    product,
    softmax,
    translate,
)
from .gradients import scorer_backprop, softmax_backprop
from .queries import Anchor, Intersect, QueryDag, Translate, Union

__all__ = ["CompiledQuery", "compile_query", "compile_traced",
           "backprop_compiled", "expected_component_count",
           "DEFAULT_MAX_COMPONENTS"]

DEFAULT_MAX_COMPONENTS = 16


@dataclass
class _TracedComponent:
    """One mixture component plus the recipe that produced it."""

    density: GaussianDensity
    kind: str                      # "leaf" | "trans" | "prod"
    entity: int | None = None      # leaf
    child: "_TracedComponent | None" = None   # trans
    relation: int | None = None    # trans
    left: "_TracedComponent | None" = None    # prod
    right: "_TracedComponent | None" = None   # prod
    solve_factorization: tuple | None = None  # prod: cho_factor of P_left + P_right


@dataclass
class CompiledQuery:
    """Traced compile result: the mixture plus backprop bookkeeping."""

    mixture: GaussianMixture
    components: list[_TracedComponent]
    score_inputs: np.ndarray | None       # stacked flatten_params rows (None: average)
    column_keeps: list[np.ndarray | None]


def _component_lists(dag: QueryDag, table, *, traced: bool,
                     max_components: int, max_factor_width: int | None):
    """Recursive node -> component-list evaluation shared by both paths."""

    def cap_width(density):
        if max_factor_width is not None and density.width > max_factor_width:
            return compact(density, max_factor_width)
        return density

    def make_leaf(entity):
        return _TracedComponent(table.entity_density(entity), kind="leaf", entity=entity)

    def make_trans(comp, relation):
        density = cap_width(translate(comp.density, table.relation_density(relation)))
        return _TracedComponent(density, kind="trans", child=comp, relation=relation)

    def make_prod(left, right, node_index):
        try:
            density = product(left.density, right.density, ids=(node_index,))
        except NumericError as exc:
            raise NumericError(f"DAG node {node_index}: {exc}", ids=(node_index,)) from exc
        out = _TracedComponent(cap_width(density), kind="prod", left=left, right=right)
        if traced:
            a = precision(left.density) + precision(right.density)
            out.solve_factorization = cho_factor(a, lower=True)
        return out

    def drop_lowest(comps):
        if len(comps) <= max_components:
            return comps
        weights = aggregate_weights([c.density for c in comps], table.aggregator)
        keep = np.sort(np.argsort(-weights, kind="stable")[:max_components])
        return [comps[i] for i in keep]

    def visit(i):
        node = dag.nodes[i]
        if isinstance(node, Anchor):
            return [make_leaf(node.entity)]
        if isinstance(node, Translate):
            return [make_trans(c, node.relation) for c in visit(node.child)]
        if isinstance(node, Union):
            out = []
            for c in node.children:
                out.extend(visit(c))
            return out
        assert isinstance(node, Intersect)
        acc = visit(node.children[0])
        for c in node.children[1:]:
            nxt = visit(c)
            acc = drop_lowest([make_prod(l, r, i) for l in acc for r in nxt])
        return acc

    return visit(dag.root)


def compile_query(dag: QueryDag, table, *,
                  max_components: int = DEFAULT_MAX_COMPONENTS,
                  max_factor_width: int | None | str = "auto") -> GaussianMixture:
    """Compile for inference; factor widths capped at 4*d by default."""
    if max_factor_width == "auto":
        max_factor_width = 4 * table.dim
    comps = _component_lists(dag, table, traced=False,
                             max_components=max_components,
                             max_factor_width=max_factor_width)
    densities = [c.density for c in comps]
    return GaussianMixture(tuple(densities), aggregate_weights(densities, table.aggregator))


def compile_traced(dag: QueryDag, table, *,
                   max_components: int = DEFAULT_MAX_COMPONENTS) -> CompiledQuery:
    """Compile for training: exact factors, gradient recipe attached."""
    comps = _component_lists(dag, table, traced=True,
                             max_components=max_components, max_factor_width=None)
    densities = [c.density for c in comps]
    params = table.aggregator
    if params.mode == "average":
        weights = aggregate_weights(densities, params)
        return CompiledQuery(GaussianMixture(tuple(densities), weights), comps,
                             None, [None] * len(comps))
    flat = [flatten_params(d, params.rank) for d in densities]
    xs = np.stack([f[0] for f in flat])
    keeps = [f[1] for f in flat]
    weights = softmax(component_scores(densities, params, xs=xs))
    return CompiledQuery(GaussianMixture(tuple(densities), weights), comps, xs, keeps)


def _backprop_component(comp: _TracedComponent, mean_bar, factor_bar, buf):
    if comp.kind == "leaf":
        buf.add_entity(comp.entity, mean_bar, factor_bar)
        return
    if comp.kind == "trans":
        w_child = comp.child.density.width
        buf.add_relation(comp.relation, mean_bar, factor_bar[:, w_child:])
        _backprop_component(comp.child, mean_bar, factor_bar[:, :w_child], buf)
        return
    # prod: adjoint of the mean solve (P_l + P_r) x = P_l m_l + P_r m_r,
    # plus the direct factor-concatenation path.
    x = comp.density.mean
    b_bar = cho_solve(comp.solve_factorization, mean_bar)
    w_left = comp.left.density.width
    slices = (factor_bar[:, :w_left], factor_bar[:, w_left:])
    for side, fslice in zip((comp.left, comp.right), slices):
        g = side.density
        p_bar = np.outer(b_bar, g.mean - x)
        child_factor_bar = (p_bar + p_bar.T) @ g.factor + fslice
        t = g.factor.T @ b_bar
        child_mean_bar = g.factor @ t + g.jitter * b_bar
        _backprop_component(side, child_mean_bar, child_factor_bar, buf)


def backprop_compiled(cq: CompiledQuery, table, phi_bar, component_bars, buf):
    """Push gradients on (weights, component means/factors) onto parameters.

    ``phi_bar`` is the gradient on the mixture weights; ``component_bars``
    a list of ``(mean_bar, factor_bar)`` per component (factor_bar matching
    that component's width).  ``buf`` accumulates parameter gradients via
    ``add_entity`` / ``add_relation`` / ``add_aggregator``.
    """
    params = table.aggregator
    bars = [(np.array(m), np.array(f)) for m, f in component_bars]
    if params.mode != "average" and phi_bar is not None:
        score_bar = softmax_backprop(cq.mixture.weights, np.asarray(phi_bar, dtype=float))
        x_bar, param_grads = scorer_backprop(cq.score_inputs, score_bar, params)
        if param_grads:
            buf.add_aggregator(param_grads)
        d = params.dim
        for i, comp in enumerate(cq.components):
            bars[i][0][:] += x_bar[i, :d]
            fgrad = x_bar[i, d:].reshape(d, params.rank)
            keep = cq.column_keeps[i]
            width = comp.density.width
            if keep is not None:
                bars[i][1][:, keep] += fgrad
            elif width >= params.rank:
                bars[i][1][:] += fgrad
            else:
                bars[i][1][:] += fgrad[:, :width]
    for comp, (mean_bar, factor_bar) in zip(cq.components, bars):
        _backprop_component(comp, mean_bar, factor_bar, buf)


def expected_component_count(dag: QueryDag) -> int:
    """Component-count law: unions add, intersections multiply, anchors are 1."""
    def visit(i):
        node = dag.nodes[i]
        if isinstance(node, Anchor):
            return 1
        if isinstance(node, Translate):
            return visit(node.child)
        counts = [visit(c) for c in node.children]
        if isinstance(node, Union):
            return sum(counts)
        out = 1
        for c in counts:
            out *= c
        return out
    return visit(dag.root)
