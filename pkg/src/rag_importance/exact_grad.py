"""Exact gradients of the multilinear extension for top-K additive utilities.

For one query the gradient of a point's inclusion weight splits into two
cases, both read off the tables in :mod:`.pb_tables` after ranking:

* the sampled rest is smaller than K, so adding the point expels nothing and
  contributes ``u_i / K`` times the probability mass of all small samples;
* the sample already fills the top-K, so adding the point expels the current
  K-th neighbor, contributing ``(u_i - e) / K`` for each possible expelled
  value ``e`` weighted by the matching boundary value probability.

:func:`instance_gradients` is the readable single-instance path built
directly on the tables; :func:`gradient` is the set-level path that runs the
fused kernels and averages per point id with factor 1/N in instance order.
Both re-derive the ranking internally instead of trusting the input order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import kernels, pb_tables
from .corpus import EvaluationSet, ValidationInstance, expand_source_weights, ranking_order

__all__ = ["GradientVector", "AdditiveUtilityParams", "instance_gradients", "gradient"]


@dataclass(frozen=True)
class AdditiveUtilityParams:
    """Top-K size of the additive utility."""

    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")


@dataclass(frozen=True)
class GradientVector:
    """Gradient values plus the ids they align with.

    ``kind`` is ``"point"`` for per-point vectors (ids are point ids, sources
    carry each point's source key) and ``"source"`` for per-source vectors
    (ids are source keys, sources is identical to ids).
    """

    ids: tuple[str, ...]
    sources: tuple[str, ...]
    values: np.ndarray
    kind: str = "point"

    def as_dict(self) -> dict[str, float]:
        return {i: float(v) for i, v in zip(self.ids, self.values)}

    def __len__(self) -> int:
        return len(self.ids)


def _ranked_inputs(inst: ValidationInstance, weights: Sequence[float]):
    m = len(inst.candidates)
    if m == 0:
        raise ValueError(f"instance {inst.query_id!r} has no candidates")
    utils = [c.utility for c in inst.candidates]
    if any(u is None for u in utils):
        raise ValueError("instance has underived utilities; run derive_utilities first")
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (m,):
        raise ValueError("weights do not align with the candidate list")
    if w.min() < 0.0 or w.max() > 1.0:
        raise ValueError("weights must lie in [0, 1]")
    order = ranking_order([c.rank_score for c in inst.candidates])
    return np.asarray(utils, dtype=np.float64)[order], w[order], order


def ranked_gradients(u_sorted: np.ndarray, w_sorted: np.ndarray, k: int) -> np.ndarray:
    """Per-rank gradients from the subset-probability and boundary-value tables."""
    m = u_sorted.size
    tables = pb_tables.build_subset_prob(w_sorted, k)
    values = []
    for u in u_sorted.tolist():  # first-appearance order, matching the kernel
        if u not in values:
            values.append(u)
    bvp = pb_tables.build_bvp(u_sorted, w_sorted, k, values)
    pre, suf, bt = tables.prefix, tables.suffix, bvp.table

    mass_small = np.zeros(m)
    for kp in range(k):
        for j in range(kp + 1):
            mass_small += pre[0:m, j] * suf[2 : m + 2, kp - j]
    g = (u_sorted / k) * mass_small
    for v, e in enumerate(values):
        s = np.zeros(m)
        for j in range(k):
            s += pre[0:m, j] * bt[k - j, 2 : m + 2, v]
        g = g + ((u_sorted - e) / k) * s
    return g


def instance_gradients(inst: ValidationInstance, weights: Sequence[float], k: int) -> np.ndarray:
    """Exact per-point gradients for one query, aligned with the input candidate order."""
    if k < 1:
        raise ValueError("k must be at least 1")
    u_sorted, w_sorted, order = _ranked_inputs(inst, weights)
    g_ranked = ranked_gradients(u_sorted, w_sorted, int(k))
    g = np.empty_like(g_ranked)
    g[order] = g_ranked
    return g


def _point_weights(es: EvaluationSet, weights) -> np.ndarray:
    if isinstance(weights, Mapping):
        per_inst = expand_source_weights(es, weights)
    else:
        per_inst = [np.asarray(w, dtype=np.float64) for w in weights]
        if len(per_inst) != len(es.instances):
            raise ValueError("per-point weights do not align with the instance list")
        for inst, w in zip(es.instances, per_inst):
            if w.shape != (len(inst.candidates),):
                raise ValueError("per-point weights do not align with a candidate list")
    if per_inst:
        return np.concatenate(per_inst)
    return np.empty(0, dtype=np.float64)


def gradient(es: EvaluationSet, weights, k: int, *, eps: float = 0.0) -> GradientVector:
    """Per-point gradients averaged over the whole validation set.

    ``weights`` is either a source->weight mapping (expanded per point) or a
    sequence of per-instance weight arrays. Contributions are accumulated by
    point id in ascending instance order and scaled by 1/N, so the result is
    reproducible for any thread count. ``eps`` > 0 switches to the truncated
    approximation.
    """
    if len(es.instances) == 0:
        raise ValueError("evaluation set is empty")
    ps = kernels.pack(es)
    flat_w = _point_weights(es, weights)
    raw = kernels.set_gradients(ps, flat_w, int(k), float(eps))
    ids, sources, values = kernels.aggregate_by_point(ps, raw)
    return GradientVector(ids=tuple(ids), sources=tuple(sources), values=values, kind="point")
