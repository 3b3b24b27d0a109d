"""Closed-form gradients for the Gaussian operators.

Training never uses numerical or framework differentiation; everything is
assembled from the adjoints in this module:

* Mahalanobis distance ``d = delta.T P delta`` with ``delta = m_q - m_c``
  and ``P = L L.T + jitter I``:

      dd/dm_q = 2 P delta,   dd/dm_c = -2 P delta,   dd/dL = 2 delta delta.T L

* the intersection mean solve ``A x = b`` with ``A = P1 + P2`` and
  ``b = P1 m1 + P2 m2`` is differentiated by the adjoint method: with an
  upstream gradient ``g`` on ``x``,

      b_bar = A^{-1} g,   A_bar = -b_bar x.T

  and contributions through ``P_i`` land on the operand factors via
  ``L_bar = (P_bar + P_bar.T) L``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import NumericError
from .gaussian import AggregatorParams, GaussianDensity, precision

__all__ = ["MahalanobisGrads", "OperandGrads", "grad_mahalanobis",
           "grad_through_product", "softmax_backprop", "scorer_backprop"]


@dataclass(frozen=True)
class MahalanobisGrads:
    query_mean: np.ndarray
    query_factor: np.ndarray
    candidate_mean: np.ndarray


@dataclass(frozen=True)
class OperandGrads:
    mean: np.ndarray
    factor: np.ndarray


def grad_mahalanobis(candidate_mean: np.ndarray, query: GaussianDensity) -> MahalanobisGrads:
    """Gradients of the Mahalanobis distance w.r.t. both means and the factor."""
    candidate_mean = np.asarray(candidate_mean, dtype=float)
    delta = query.mean - candidate_mean
    t = query.factor.T @ delta
    p_delta = query.factor @ t + query.jitter * delta
    return MahalanobisGrads(
        query_mean=2.0 * p_delta,
        query_factor=2.0 * np.outer(delta, t),
        candidate_mean=-2.0 * p_delta,
    )


def grad_through_product(mean_grad: np.ndarray,
                         precision_grad: np.ndarray | None,
                         g1: GaussianDensity,
                         g2: GaussianDensity,
                         ids=None) -> tuple[OperandGrads, OperandGrads]:
    """Backpropagate a scalar function of the product's (mean, precision).

    ``mean_grad`` is the upstream gradient on the product mean (length d);
    ``precision_grad`` the upstream gradient on the dense product precision
    (d x d, or None).  Returns gradients on each operand's mean and factor.
    """
    mean_grad = np.asarray(mean_grad, dtype=float)
    p = (precision(g1), precision(g2))
    a = p[0] + p[1]
    b = p[0] @ g1.mean + p[1] @ g2.mean
    try:
        factorization = cho_factor(a, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"intersection solve failed (non-PD system): {exc}", ids=ids) from exc
    x = cho_solve(factorization, b)
    b_bar = cho_solve(factorization, mean_grad)

    out = []
    for g, p_i in zip((g1, g2), p):
        p_bar = np.outer(b_bar, g.mean - x)
        if precision_grad is not None:
            p_bar = p_bar + precision_grad
        out.append(OperandGrads(
            mean=p_i @ b_bar,
            factor=(p_bar + p_bar.T) @ g.factor,
        ))
    return out[0], out[1]


def softmax_backprop(phi: np.ndarray, phi_bar: np.ndarray) -> np.ndarray:
    """Gradient on pre-softmax scores given gradients on the weights."""
    return phi * (phi_bar - float(phi_bar @ phi))


def scorer_backprop(xs: np.ndarray, score_bar: np.ndarray, params: AggregatorParams):
    """Backprop through :func:`gaussian.component_scores`.

    ``xs`` is the stacked flattened-parameter matrix used in the forward
    pass, ``score_bar`` the gradient on the per-component scores.  Returns
    ``(x_bar, param_grads)`` where ``param_grads`` maps parameter names to
    gradient arrays (empty in average mode, where scores are constant).
    """
    if params.mode == "average":
        return np.zeros_like(xs), {}
    if params.mode == "attention":
        grads = {
            "weight": xs.T @ score_bar,
            "bias": np.asarray(score_bar.sum()),
        }
        return np.outer(score_bar, params.weight), grads
    hidden = np.tanh(xs @ params.weight.T + params.bias)
    h_bar = np.outer(score_bar, params.out_weight)
    pre_bar = h_bar * (1.0 - hidden ** 2)
    grads = {
        "weight": pre_bar.T @ xs,
        "bias": pre_bar.sum(axis=0),
        "out_weight": hidden.T @ score_bar,
        "out_bias": np.asarray(score_bar.sum()),
    }
    return pre_bar @ params.weight, grads
