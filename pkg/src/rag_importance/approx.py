"""Per-instance truncation of the gradient computation with an eps guarantee.

Once candidates are ranked, a point's gradient magnitude is bounded by the
probability that fewer than K higher-ranked points are sampled, which decays
with the accumulated weight mass above it (a Poisson-binomial tail). The
boundary index b is the first rank at which the Chernoff bound on that tail
drops below eps:

    mu_b = sum of weights ranked strictly above b
    exp(-(mu_b - K + 1)^2 / (2 mu_b)) < eps   and   mu_b > K - 1

Running the exact algorithm on the kept prefix {1..b} and reporting 0 for
ranks >= b yields values within eps of the exact gradients, per point and
(therefore) after averaging over the validation set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import exact_grad
from .corpus import EvaluationSet, ValidationInstance
from .exact_grad import GradientVector, _ranked_inputs

__all__ = ["BoundaryIndex", "find_boundary", "approx_instance_gradients", "approx_gradient"]


@dataclass(frozen=True)
class BoundaryIndex:
    """1-based boundary rank; b = M+1 means nothing can be truncated."""

    b: int
    mu_b: float


def _check_eps(eps: float):
    if not (0.0 < eps <= 1.0):
        raise ValueError("eps must lie in (0, 1]")


def _tail_ok(mu: float, k: int, eps: float) -> bool:
    return mu > k - 1.0 and math.exp(-((mu - k + 1.0) ** 2) / (2.0 * mu)) < eps


def find_boundary(ranked_weights: Sequence[float], k: int, eps: float) -> BoundaryIndex:
    """Minimal boundary rank by binary search over the prefix-sum array.

    The predicate is monotone in b because the prefix mass is nondecreasing
    and the bound is decreasing in the mass once it exceeds K-1.
    """
    _check_eps(eps)
    if k < 1:
        raise ValueError("k must be at least 1")
    w = np.asarray(ranked_weights, dtype=np.float64)
    m = w.size
    pre = np.zeros(m + 2)  # pre[b] = mass strictly above rank b; pre[m+1] covers all
    pre[2:] = np.cumsum(w)
    lo, hi = 1, m + 2
    while lo < hi:
        mid = (lo + hi) // 2
        if _tail_ok(float(pre[mid]), k, eps):
            hi = mid
        else:
            lo = mid + 1
    b = min(lo, m + 1)
    return BoundaryIndex(b=b, mu_b=float(pre[b]))


def _find_boundary_scan(ranked_weights: Sequence[float], k: int, eps: float) -> BoundaryIndex:
    # linear-scan twin of find_boundary, kept as a debugging oracle
    _check_eps(eps)
    w = np.asarray(ranked_weights, dtype=np.float64)
    mu = 0.0
    for b in range(1, w.size + 2):
        if b >= 2:
            mu += float(w[b - 2])
        if _tail_ok(mu, k, eps):
            return BoundaryIndex(b=b, mu_b=mu)
    return BoundaryIndex(b=w.size + 1, mu_b=mu)


def approx_instance_gradients(
    inst: ValidationInstance, weights: Sequence[float], k: int, eps: float
) -> np.ndarray:
    """Truncated per-point gradients for one query, aligned with input order.

    Points ranked at or below the boundary get 0; points above it get the
    exact gradients of the kept prefix, each within eps of the full value.
    """
    _check_eps(eps)
    if k < 1:
        raise ValueError("k must be at least 1")
    u_sorted, w_sorted, order = _ranked_inputs(inst, weights)
    m = u_sorted.size
    b = find_boundary(w_sorted, k, eps).b
    g_ranked = np.zeros(m)
    if b > m:
        g_ranked[:] = exact_grad.ranked_gradients(u_sorted, w_sorted, int(k))
    else:
        kept = exact_grad.ranked_gradients(u_sorted[:b], w_sorted[:b], int(k))
        g_ranked[: b - 1] = kept[: b - 1]
    g = np.empty_like(g_ranked)
    g[order] = g_ranked
    return g


def approx_gradient(es: EvaluationSet, weights, k: int, eps: float) -> GradientVector:
    """Set-level truncated gradients (same averaging contract as the exact path)."""
    _check_eps(eps)
    return exact_grad.gradient(es, weights, k, eps=eps)


def boundary_index_cap(min_weight: float, k: int, eps: float) -> float:
    """Upper bound on the boundary index when all weights are at least min_weight."""
    if min_weight <= 0.0:
        return math.inf
    return (4.0 / min_weight) * math.log(1.0 / eps) + (2.0 * k - 2.0) / min_weight + 1.0
