"""Personalized-model learning on a fixed collaboration graph.

Given shared base predictors and per-user margin matrices A_k, each user
holds an L1-bounded coefficient vector alpha_k.  The joint model objective is

    f(alpha) = sum_k d_k c_k L_k(alpha_k)
               + (mu1 / 2) sum_{k<l} w_{k,l} ||alpha_k - alpha_l||^2,

with the normalized exponential-margin loss

    L_k(alpha_k) = log( (1/m_k) sum_i exp(-(A_k alpha_k)_i) ),

so L_k(0) = 0.  The greedy conditional-gradient step moves one coordinate at
a time: the linear minimization oracle over the L1 ball returns a signed
vertex, so each update touches a single stump and costs one (index, value)
pair per neighbor on the wire.

Tie rules (deterministic): the LMO breaks argmax ties by lowest index and
uses sign(0) = +1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp, softmax

from .domain import CollaborationGraph, SparseModel

__all__ = [
    "ModelState",
    "FwCertificates",
    "local_loss",
    "ada_weights",
    "gradient_from_parts",
    "partial_gradient_model",
    "fw_lmo",
    "fw_step",
    "step_size",
    "objective_f",
    "duality_gap",
    "curvature_bound",
    "margin_one_norm",
    "theorem_iteration_bound",
]


@dataclass
class ModelState:
    """All users' models plus the shared global step counter."""

    models: list
    t: int = 0

    @property
    def K(self) -> int:
        return len(self.models)

    def coef(self, k: int) -> np.ndarray:
        return self.models[k].coef

    def copy(self) -> "ModelState":
        return ModelState([m.copy() for m in self.models], self.t)


@dataclass
class FwCertificates:
    """Convergence certificate bundle for a conditional-gradient run.

    ``gap`` upper-bounds f(alpha) - f(alpha*); ``initial_gap`` is the gap
    certificate at the starting point (itself an upper bound on the true
    initial suboptimality, so iteration counts derived from it are
    conservative).
    """

    objective: float
    gap: float
    curvature_bound: float
    initial_gap: float


def _coef(alpha) -> np.ndarray:
    return alpha.coef if isinstance(alpha, SparseModel) else np.asarray(alpha, dtype=float)


def local_loss(margins: np.ndarray, alpha) -> float:
    """Normalized exponential-margin loss log((1/m) sum_i exp(-(A alpha)_i)).

    Computed with a max shift (logsumexp), so it is finite for any finite
    input.  Zero model => loss 0.
    """
    z = -margins @ _coef(alpha)
    return float(logsumexp(z) - np.log(margins.shape[0]))


def ada_weights(margins: np.ndarray, alpha) -> np.ndarray:
    """Boosting sample weights: softmax of the negated margins.

    Entries are positive and sum to 1; points the current model classifies
    poorly get the most weight.
    """
    return softmax(-margins @ _coef(alpha))


def gradient_from_parts(margins: np.ndarray, alpha: np.ndarray, deg: float,
                        conf: float, mu1: float,
                        weighted_neighbor_sum: np.ndarray) -> np.ndarray:
    """Model-block gradient from precomputed pieces.

    -deg * conf * W^T A + mu1 * (deg * alpha - sum_l w_{k,l} alpha_l), with W
    the boosting weights of ``alpha``.  This kernel is shared by the
    simulator (which feeds neighbor sums from received model copies) and the
    full-state gradient below, so the two cannot drift apart.
    """
    W = softmax(-margins @ alpha)
    grad = -deg * conf * (W @ margins)
    if mu1 != 0.0:
        grad = grad + mu1 * (deg * alpha - weighted_neighbor_sum)
    return grad


def partial_gradient_model(k: int, state: ModelState, graph: CollaborationGraph,
                           conf: Sequence[float], margins_k: np.ndarray,
                           mu1: float) -> np.ndarray:
    """Gradient of f with respect to user k's coefficient block."""
    alpha_k = state.coef(k)
    nbr_sum = np.zeros_like(alpha_k)
    for l in graph.neighbors(k):
        nbr_sum += graph.weight(k, l) * state.coef(l)
    return gradient_from_parts(margins_k, alpha_k, graph.degree(k),
                               float(conf[k]), mu1, nbr_sum)


def fw_lmo(grad: np.ndarray, beta: float) -> tuple:
    """Linear minimization oracle over the L1 ball of radius beta.

    Returns (j, s_j) where j is the smallest index attaining max |grad_j|
    and s_j = beta * sign(-grad_j) with sign(0) = +1.  The vertex
    s = s_j * e_j minimizes s^T grad over the ball.
    """
    j = int(np.argmax(np.abs(grad)))
    value = beta if grad[j] <= 0 else -beta
    return j, value


def fw_step(alpha: SparseModel, lmo_result: tuple, gamma: float) -> SparseModel:
    """Convex-combination update alpha' = (1 - gamma) alpha + gamma s.

    Adds at most one new nonzero and preserves the L1 budget.  Raises if
    gamma is outside [0, 1].
    """
    if not (0.0 <= gamma <= 1.0):
        raise ValueError("step size must lie in [0, 1], got %g" % gamma)
    j, value = lmo_result
    coef = (1.0 - gamma) * alpha.coef
    coef[j] += gamma * value
    return SparseModel(coef, alpha.l1_budget, alpha.update_count + 1)


def step_size(t: int, K: int) -> float:
    """Schedule 2K / (t + 2K) for the update following t completed steps."""
    if t < 0:
        raise ValueError("step counter must be nonnegative")
    return 2.0 * K / (t + 2.0 * K)


def objective_f(state: ModelState, graph: CollaborationGraph,
                margins: Sequence[np.ndarray], conf: Sequence[float],
                mu1: float) -> float:
    """Joint model objective f(alpha) with the graph held fixed.

    The graph regularizer g(w) is constant in alpha and excluded.
    """
    total = 0.0
    for k in range(state.K):
        d = graph.degree(k)
        if d != 0.0:
            total += d * float(conf[k]) * local_loss(margins[k], state.models[k])
    if mu1 != 0.0:
        smooth = 0.0
        for k, l, w in graph.edges():
            diff = state.coef(k) - state.coef(l)
            smooth += w * float(diff @ diff)
        total += 0.5 * mu1 * smooth
    return total


def duality_gap(state: ModelState, graph: CollaborationGraph,
                margins: Sequence[np.ndarray], conf: Sequence[float],
                mu1: float) -> float:
    """Certificate gap(alpha) = sum_k [alpha_k^T grad_k + beta ||grad_k||_inf].

    Always >= f(alpha) - f(alpha*) >= 0 (up to roundoff): each summand is the
    blockwise maximum of (alpha_k - s)^T grad_k over the L1 ball.
    """
    total = 0.0
    for k in range(state.K):
        g = partial_gradient_model(k, state, graph, conf, margins[k], mu1)
        beta = state.models[k].l1_budget
        total += float(state.coef(k) @ g) + beta * float(np.max(np.abs(g)))
    return total


def margin_one_norm(margins: np.ndarray) -> float:
    """Operator 1-norm of a margin matrix: max absolute column sum."""
    return float(np.abs(margins).sum(axis=0).max())


def curvature_bound(graph: CollaborationGraph, conf: Sequence[float],
                    margin_norms: Sequence[float], beta: float,
                    mu1: float) -> float:
    """Product-space curvature bound 4 beta^2 sum_k d_k (c_k ||A_k||^2 + mu1).

    ``margin_norms`` are per-user operator 1-norms of the margin matrices
    (max absolute column sum); for +-1 stump margins this is simply m_k.
    """
    total = 0.0
    for k in range(graph.K):
        total += graph.degree(k) * (float(conf[k]) * float(margin_norms[k]) ** 2 + mu1)
    return 4.0 * beta * beta * total


def theorem_iteration_bound(K: int, curvature: float, initial_gap: float,
                            epsilon: float) -> float:
    """Iteration count 6K (C + p0) / eps sufficient for eps suboptimality."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    return 6.0 * K * (curvature + initial_gap) / epsilon
