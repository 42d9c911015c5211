"""Sampled gradient estimates for arbitrary utility functions.

When the utility of a retrieved subset is not additive, the gradient of a
point's weight is estimated by Monte Carlo: sample the other points with
their inclusion probabilities, average the utility difference from adding
the point. With

    T = ceil((2 / eps^2) * ln(2 N / delta))

trials per estimated point, Hoeffding's inequality (differences lie in
[-1, 1]) gives |estimate - gradient| <= eps with probability >= 1 - delta
jointly. Points ranked at or below the truncation boundary are skipped and
reported as 0, exactly like the truncated additive path.

Randomness is counter-style: every (instance, point) pair derives its own
generator from (seed, instance index, point index), so results are
bit-reproducible no matter how work is scheduled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .approx import find_boundary
from .corpus import EvaluationSet, ValidationInstance, rank_candidates, ranking_order
from .exact_grad import GradientVector, _point_weights

__all__ = [
    "McmcConfig",
    "GeneralUtility",
    "sample_count",
    "mcmc_gradient",
    "additive_topk_utility",
    "majority_vote_utility",
]

# evaluator of one concrete subset: (ranked instance, ranked candidate indices) -> [0, 1]
GeneralUtility = Callable[[ValidationInstance, Sequence[int]], float]


@dataclass(frozen=True)
class McmcConfig:
    eps: float
    delta: float
    seed: int
    k: int

    def __post_init__(self):
        if not (0.0 < self.eps < 1.0):
            raise ValueError("eps must lie in (0, 1)")
        if not (0.0 < self.delta < 1.0):
            raise ValueError("delta must lie in (0, 1)")
        if self.k < 1:
            raise ValueError("k must be at least 1")

    def sample_count(self, n_instances: int) -> int:
        return sample_count(self.eps, self.delta, n_instances)


def sample_count(eps: float, delta: float, n_instances: int) -> int:
    """Trials per estimated point: ceil((2/eps^2) * ln(2N/delta))."""
    if n_instances < 1:
        raise ValueError("need at least one validation instance")
    return int(math.ceil((2.0 / (eps * eps)) * math.log(2.0 * n_instances / delta)))


def additive_topk_utility(k: int) -> GeneralUtility:
    """The built-in top-k additive utility as a subset evaluator."""

    def evaluate(ranked: ValidationInstance, members: Sequence[int]) -> float:
        if len(members) == 0:
            return 0.0
        top = sorted(members)[:k]
        return sum(ranked.candidates[i].utility for i in top) / k

    return evaluate


def majority_vote_utility(k: int) -> GeneralUtility:
    """1.0 when the majority vote of the subset's top-k answers hits gold."""

    def evaluate(ranked: ValidationInstance, members: Sequence[int]) -> float:
        if ranked.gold is None:
            raise ValueError("majority-vote utility needs a gold answer")
        top = sorted(members)[:k]
        counts: dict[str, int] = {}
        best = None
        for i in top:
            ans = ranked.candidates[i].answer
            if ans is None:
                continue
            counts[ans] = counts.get(ans, 0) + 1
            if best is None or counts[ans] > counts[best]:
                best = ans
        return 1.0 if best is not None and best.strip() == ranked.gold.strip() else 0.0

    return evaluate


def _estimate_instance(
    inst: ValidationInstance,
    weights: np.ndarray,
    util: GeneralUtility,
    cfg: McmcConfig,
    trials: int,
    instance_index: int,
) -> np.ndarray:
    """Per-point estimates for one instance, aligned with input candidate order."""
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (len(inst.candidates),):
        raise ValueError("weights do not align with the candidate list")
    if w.size and (w.min() < 0.0 or w.max() > 1.0):
        raise ValueError("weights must lie in [0, 1]")
    order = ranking_order([c.rank_score for c in inst.candidates])
    w_sorted = w[order]
    ranked = rank_candidates(inst)
    m = w_sorted.size
    boundary = find_boundary(w_sorted, cfg.k, cfg.eps).b
    n_est = min(boundary - 1, m)
    est_ranked = np.zeros(m)
    for i in range(n_est):
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=cfg.seed, spawn_key=(instance_index, i))
        )
        draws = rng.random((trials, m))
        included = draws < w_sorted  # column j: point j sampled in this trial
        total = 0.0
        for t in range(trials):
            members = [j for j in range(m) if j != i and included[t, j]]
            u_without = util(ranked, members)
            u_with = util(ranked, sorted(members + [i]))
            for val in (u_without, u_with):
                if not (0.0 <= val <= 1.0):
                    raise ValueError(f"utility evaluator returned {val!r}, outside [0, 1]")
            total += u_with - u_without
        est_ranked[i] = total / trials
    est = np.empty(m)
    est[order] = est_ranked
    return est


def mcmc_gradient(
    es: EvaluationSet,
    weights,
    util: GeneralUtility,
    cfg: McmcConfig,
    *,
    trials: int | None = None,
) -> GradientVector:
    """Estimated per-point gradients averaged over the validation set.

    ``trials`` overrides the Hoeffding sample count (testing hook, e.g. for
    convergence-rate checks); leave it None to honor the (eps, delta) bound.
    """
    n = len(es.instances)
    if n == 0:
        raise ValueError("evaluation set is empty")
    if any(len(inst.candidates) == 0 for inst in es.instances):
        raise ValueError("evaluation set contains an instance with no candidates")
    per_inst = _split_weights(es, weights)
    t = trials if trials is not None else cfg.sample_count(n)
    slot: dict[str, int] = {}
    ids: list[str] = []
    srcs: list[str] = []
    totals: list[float] = []
    for idx, inst in enumerate(es.instances):
        est = _estimate_instance(inst, per_inst[idx], util, cfg, t, idx)
        for c, val in zip(inst.candidates, est.tolist()):
            j = slot.get(c.point_id)
            if j is None:
                slot[c.point_id] = len(ids)
                ids.append(c.point_id)
                srcs.append(c.source_key)
                totals.append(val)
            else:
                totals[j] += val
    values = np.asarray(totals) * (1.0 / n)
    return GradientVector(ids=tuple(ids), sources=tuple(srcs), values=values, kind="point")


def _split_weights(es: EvaluationSet, weights) -> list[np.ndarray]:
    flat = _point_weights(es, weights)
    out = []
    pos = 0
    for inst in es.instances:
        m = len(inst.candidates)
        out.append(flat[pos : pos + m])
        pos += m
    return out
