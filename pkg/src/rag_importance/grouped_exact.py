"""Exact source-level gradients when whole sources enter or leave atomically.

Reference path for small instances: a source's gradient sums, over all
inclusion patterns of the other sources, the change in top-K utility from
adding that source. Instead of enumerating patterns, the computation is
organized around pivot pairs (t, t'):

* t is the K-th ranked member of the sampled corpus without the source,
* t' is the K-th ranked member with the source added,

where either pivot may be the sentinel ``ABSENT`` when the corpus holds fewer
than K points (the utility then averages everything, so the sentinel's tally
covers the full sample and its own utility counts as 0). For a fixed pivot
pair, every source contributes a pair of tally vectors (per-utility-value
counts of its points ranked strictly above each pivot), and a dynamic program
over sources accumulates the probability of every reachable tally pair.
Tallies whose totals exceed K-1 can never satisfy a pivot condition and are
saturated into an overflow bucket, which keeps the state space small.

A pattern contributes to pivot t exactly when t's source is included and the
tally above t totals K-1 (for ABSENT: totals at most K-1), so each pattern is
counted once and the per-pair utility difference

    ((sum_v gamma'_v v + u(t')) - (sum_v gamma_v v + u(t))) / K

recovers the exact gradient. Cost is quadratic in the corpus size and
quadratic in the source count per instance; the trainer never calls this
path, it exists to cross-check the per-point machinery on grouped corpora.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .corpus import ValidationInstance, ranking_order

__all__ = ["TallyVector", "CountTable", "GroupedSizeError", "grouped_instance_gradients"]

ABSENT = -1  # sentinel pivot: sampled corpus smaller than K


class GroupedSizeError(ValueError):
    """Raised when the tally-pair state table would exceed the configured cap."""


# A tally vector is a tuple of per-value counts; None marks the saturated
# overflow bucket (total already above K-1, can never satisfy a pivot).
TallyVector = tuple[int, ...]


@dataclass(frozen=True)
class CountTable:
    """Probability mass per reachable (tally, tally') pair after the source sweep."""

    entries: dict[tuple[TallyVector | None, TallyVector | None], float]

    def mass(self) -> float:
        return sum(self.entries.values())


def _tally_add(a: TallyVector | None, b: TallyVector, cap: int) -> TallyVector | None:
    if a is None:
        return None
    total = 0
    out = []
    for x, y in zip(a, b):
        s = x + y
        total += s
        out.append(s)
    if total > cap:
        return None
    return tuple(out)


def build_count_table(
    pair_tallies: Sequence[tuple[TallyVector, TallyVector]],
    weights: Sequence[float],
    base: tuple[TallyVector | None, TallyVector | None],
    base_prob: float,
    cap: int,
    max_states: int,
) -> CountTable:
    """Sweep the free sources, mixing exclude (1-w) and include (w, add tallies)."""
    states: dict[tuple[TallyVector | None, TallyVector | None], float] = {base: base_prob}
    for (t_a, t_b), w in zip(pair_tallies, weights):
        nxt: dict[tuple[TallyVector | None, TallyVector | None], float] = {}
        for (ga, gb), p in states.items():
            key_skip = (ga, gb)
            nxt[key_skip] = nxt.get(key_skip, 0.0) + p * (1.0 - w)
            key_take = (_tally_add(ga, t_a, cap), _tally_add(gb, t_b, cap))
            nxt[key_take] = nxt.get(key_take, 0.0) + p * w
        if len(nxt) > max_states:
            raise GroupedSizeError(
                f"tally state table grew past {max_states} entries; "
                "this reference path only supports small grouped instances"
            )
        states = nxt
    return CountTable(entries=states)


def grouped_instance_gradients(
    inst: ValidationInstance,
    source_weights: Mapping[str, float],
    k: int,
    grouping: Sequence[str] | None = None,
    *,
    max_states: int = 4096,
) -> dict[str, float]:
    """Exact per-source gradients of one instance's grouped corpus.

    ``grouping`` optionally overrides the candidates' source keys (aligned
    with the input candidate order). Sources are returned in first-appearance
    order.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    m_pts = len(inst.candidates)
    if m_pts == 0:
        raise ValueError(f"instance {inst.query_id!r} has no candidates")
    if grouping is None:
        grouping = [c.source_key for c in inst.candidates]
    if len(grouping) != m_pts:
        raise ValueError("grouping must align with the candidate list")
    utils = [c.utility for c in inst.candidates]
    if any(u is None for u in utils):
        raise ValueError("instance has underived utilities; run derive_utilities first")

    order = ranking_order([c.rank_score for c in inst.candidates])
    u_ranked = np.asarray(utils, dtype=np.float64)[order]
    group_names: dict[str, None] = {}
    for key in grouping:
        group_names.setdefault(key, None)
    names = list(group_names)
    gid = {name: j for j, name in enumerate(names)}
    try:
        w_src = [float(source_weights[name]) for name in names]
    except KeyError as exc:
        raise ValueError(f"no weight for source {exc.args[0]!r}") from None
    if any(not (0.0 <= w <= 1.0) for w in w_src):
        raise ValueError("weights must lie in [0, 1]")
    group_of_rank = [gid[grouping[int(orig)]] for orig in order]

    values: list[float] = []
    for u in u_ranked.tolist():
        if u not in values:
            values.append(u)
    n_vals = len(values)
    vidx = [values.index(u) for u in u_ranked.tolist()]
    cap = k - 1

    # tally[g][p]: counts (per value) of group g's points ranked strictly above
    # pivot rank p; the ABSENT pivot (last column) counts all of g's points.
    n_groups = len(names)
    zeros: TallyVector = tuple([0] * n_vals)
    tally: list[list[TallyVector]] = []
    for g in range(n_groups):
        per_pivot = []
        running = [0] * n_vals
        for p in range(m_pts):
            per_pivot.append(tuple(running))
            if group_of_rank[p] == g:
                running[vidx[p]] += 1
        per_pivot.append(tuple(running))  # ABSENT pivot: everything is "above"
        tally.append(per_pivot)

    pivots = list(range(m_pts)) + [ABSENT]

    def pivot_tally(g: int, pivot: int) -> TallyVector:
        return tally[g][pivot if pivot != ABSENT else m_pts]

    def pivot_value(pivot: int) -> float:
        return 0.0 if pivot == ABSENT else float(u_ranked[pivot])

    def accepts(pivot: int, gamma: TallyVector | None) -> bool:
        if gamma is None:
            return False
        return sum(gamma) == cap if pivot != ABSENT else True

    out: dict[str, float] = {}
    for i, name in enumerate(names):
        total = 0.0
        for t in pivots:
            if t != ABSENT and group_of_rank[t] == i:
                continue  # the without-branch never contains source i
            for tp in pivots:
                # pivots can only improve when points are added
                if t != ABSENT and tp != ABSENT and tp > t:
                    continue
                if t != ABSENT and tp == ABSENT:
                    continue
                forced: list[int] = []
                if t != ABSENT:
                    forced.append(group_of_rank[t])
                if tp != ABSENT and group_of_rank[tp] != i and group_of_rank[tp] not in forced:
                    forced.append(group_of_rank[tp])
                base_prob = 1.0
                for f in forced:
                    base_prob *= w_src[f]
                if base_prob == 0.0:
                    continue
                gamma0: TallyVector | None = zeros
                gamma0p: TallyVector | None = _tally_add(zeros, pivot_tally(i, tp), cap)
                for f in forced:
                    gamma0 = _tally_add(gamma0, pivot_tally(f, t), cap)
                    gamma0p = _tally_add(gamma0p, pivot_tally(f, tp), cap)
                if gamma0 is None or gamma0p is None:
                    continue  # overflow is absorbing, nothing downstream can be accepted
                free = [g for g in range(n_groups) if g != i and g not in forced]
                table = build_count_table(
                    [(pivot_tally(g, t), pivot_tally(g, tp)) for g in free],
                    [w_src[g] for g in free],
                    (gamma0, gamma0p),
                    base_prob,
                    cap,
                    max_states,
                )
                du_base = pivot_value(tp) - pivot_value(t)
                for (ga, gb), p in table.entries.items():
                    if not (accepts(t, ga) and accepts(tp, gb)):
                        continue
                    du = du_base
                    for v in range(n_vals):
                        du += (gb[v] - ga[v]) * values[v]
                    total += (du / k) * p
        out[name] = total
    return out
