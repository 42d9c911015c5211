"""Brute-force reference implementations by full subset enumeration.

Everything here enumerates all 2^M subsets (or all 2^m source-inclusion
patterns) with a plain binary counter over ranked indices, so results are
deterministic and usable as ground truth in tests. Performance is explicitly
not a goal; the caps in :class:`OracleLimits` keep enumeration tractable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .corpus import ValidationInstance, ranking_order

__all__ = [
    "OracleLimits",
    "brute_utility",
    "brute_multilinear",
    "brute_gradient",
    "brute_grouped_gradient",
]


@dataclass(frozen=True)
class OracleLimits:
    max_points: int = 20
    max_sources: int = 16


DEFAULT_LIMITS = OracleLimits()


def _ranked_arrays(inst: ValidationInstance):
    utils = [c.utility for c in inst.candidates]
    if any(u is None for u in utils):
        raise ValueError("instance has underived utilities; run derive_utilities first")
    scores = np.array([c.rank_score for c in inst.candidates], dtype=np.float64)
    order = ranking_order(scores)
    u = np.asarray(utils, dtype=np.float64)[order]
    return u, order


def _check_points(m: int, limits: OracleLimits):
    if m > limits.max_points:
        raise ValueError(f"{m} points exceed the enumeration cap of {limits.max_points}")


def _topk_utility(u_ranked: np.ndarray, members: np.ndarray, k: int) -> float:
    # members: sorted ranked indices of the subset
    take = members[:k]
    return float(u_ranked[take].sum() / k)


def _subset_masks(m: int) -> np.ndarray:
    idx = np.arange(1 << m, dtype=np.int64)
    return (idx[:, None] >> np.arange(m)) & 1 == 1  # (2^m, m) bool


def _all_subset_utilities(u_ranked: np.ndarray, k: int) -> np.ndarray:
    masks = _subset_masks(u_ranked.size)
    within = np.cumsum(masks, axis=1)
    contrib = masks & (within <= k)
    return (contrib * u_ranked).sum(axis=1) / k


def brute_utility(
    inst: ValidationInstance,
    subset: Sequence[int],
    k: int,
    limits: OracleLimits = DEFAULT_LIMITS,
) -> float:
    """Top-k additive utility of an explicit subset.

    ``subset`` holds indices into the ranked candidate list (0-based). The
    empty subset has utility 0; subsets smaller than k still divide by k.
    """
    u_ranked, _ = _ranked_arrays(inst)
    _check_points(u_ranked.size, limits)
    members = np.array(sorted(set(subset)), dtype=np.int64)
    if members.size and (members.min() < 0 or members.max() >= u_ranked.size):
        raise IndexError("subset index out of range")
    if members.size == 0:
        return 0.0
    return _topk_utility(u_ranked, members, k)


def brute_multilinear(
    inst: ValidationInstance,
    weights: Sequence[float],
    k: int,
    limits: OracleLimits = DEFAULT_LIMITS,
) -> float:
    """Expected top-k utility under independent inclusion, by full enumeration.

    ``weights`` align with the instance's candidate order as given.
    """
    u_ranked, order = _ranked_arrays(inst)
    m = u_ranked.size
    _check_points(m, limits)
    w = np.asarray(weights, dtype=np.float64)[order]
    masks = _subset_masks(m)
    probs = np.prod(np.where(masks, w, 1.0 - w), axis=1)
    utils = _all_subset_utilities(u_ranked, k)
    return float((utils * probs).sum())


def brute_gradient(
    inst: ValidationInstance,
    weights: Sequence[float],
    k: int,
    limits: OracleLimits = DEFAULT_LIMITS,
) -> np.ndarray:
    """Per-point partial derivatives of the extension, aligned with input order.

    For point i this sums (U(S + i) - U(S)) * P[S] over all subsets S of the
    other points; the result never depends on w_i itself.
    """
    u_ranked, order = _ranked_arrays(inst)
    m = u_ranked.size
    _check_points(m, limits)
    w = np.asarray(weights, dtype=np.float64)[order]
    masks = _subset_masks(m)
    utils = _all_subset_utilities(u_ranked, k)
    g_ranked = np.zeros(m)
    for j in range(m):
        without = ~masks[:, j]
        rows = np.nonzero(without)[0]
        others = np.arange(m) != j
        p_others = np.prod(np.where(masks[rows][:, others], w[others], 1.0 - w[others]), axis=1)
        g_ranked[j] = float(((utils[rows + (1 << j)] - utils[rows]) * p_others).sum())
    g = np.empty(m)
    g[order] = g_ranked
    return g


def brute_grouped_gradient(
    inst: ValidationInstance,
    source_weights: Mapping[str, float],
    k: int,
    grouping: Sequence[str] | None = None,
    limits: OracleLimits = DEFAULT_LIMITS,
) -> dict[str, float]:
    """Per-source gradients when each source is included or excluded atomically.

    Enumerates all source-inclusion bit patterns; ``grouping`` optionally
    overrides the candidates' source keys (aligned with input order).
    """
    if grouping is None:
        grouping = [c.source_key for c in inst.candidates]
    if len(grouping) != len(inst.candidates):
        raise ValueError("grouping must align with the candidate list")
    u_ranked, order = _ranked_arrays(inst)
    m = u_ranked.size
    _check_points(m, limits)
    groups: dict[str, None] = {}
    for key in grouping:
        groups.setdefault(key, None)
    names = list(groups)
    n_groups = len(names)
    if n_groups > limits.max_sources:
        raise ValueError(f"{n_groups} sources exceed the enumeration cap of {limits.max_sources}")
    gi = {name: j for j, name in enumerate(names)}
    try:
        w_src = np.array([float(source_weights[name]) for name in names])
    except KeyError as exc:
        raise ValueError(f"no weight for source {exc.args[0]!r}") from None
    # group membership per ranked point
    group_of_ranked = np.array([gi[grouping[orig]] for orig in order], dtype=np.int64)

    patterns = _subset_masks(n_groups)  # (2^n, n_groups)
    util_of = np.empty(patterns.shape[0])
    for p in range(patterns.shape[0]):
        members = np.nonzero(patterns[p][group_of_ranked])[0]
        util_of[p] = _topk_utility(u_ranked, members, k) if members.size else 0.0

    out: dict[str, float] = {}
    for j, name in enumerate(names):
        without = ~patterns[:, j]
        rows = np.nonzero(without)[0]
        others = np.arange(n_groups) != j
        p_others = np.prod(
            np.where(patterns[rows][:, others], w_src[others], 1.0 - w_src[others]), axis=1
        )
        out[name] = float(((util_of[rows + (1 << j)] - util_of[rows]) * p_others).sum())
    return out
