"""Corpus refinement and evaluation protocols.

Prediction is a majority vote over the top-K ranked candidates' answers; an
instance counts as correct when the vote matches its gold answer exactly
(whitespace-trimmed). Refinement either prunes candidates whose learned
source weight falls below a threshold (tuned on a validation split), samples
candidates by their source weights and averages accuracy over trials
(reweighting), or removes sources with a low leave-one-out accuracy delta.

The noise-injection study clones every instance's candidate list once per
noise level, replaces correct answers with level-tagged wrong tokens with
the level's probability, and partitions each clone by rank into a fixed
number of sources, so learned weights can isolate the noisy copies. A
fabricated-source helper prepends synthetic top-ranked candidates with a
configurable correctness rate.

Candidates whose source has no learned weight are never pruned and are
always kept by reweighting: with no evidence about a source, refinement
leaves it alone.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import (
    Candidate,
    EvaluationSet,
    ValidationInstance,
    rank_candidates,
)

__all__ = [
    "RefinePlan",
    "RefineOutcome",
    "AccuracyReport",
    "majority_vote_predict",
    "evaluate",
    "prune",
    "remove_sources",
    "tune_threshold",
    "reweight_expected_accuracy",
    "loo_scores",
    "tune_loo_threshold",
    "apply_refinement",
    "inject_noise",
    "add_fabricated_source",
    "split_set",
    "synth_qa_set",
]

DEFAULT_NOISE_LEVELS = (0.0, 0.2, 0.4, 0.6, 0.8)


@dataclass(frozen=True)
class AccuracyReport:
    accuracy: float
    n_evaluated: int
    correct: float
    breakdown: tuple[tuple[str, float], ...] = ()

    def as_dict(self) -> dict:
        rec = {
            "accuracy": self.accuracy,
            "n": self.n_evaluated,
            "correct": self.correct,
        }
        if self.breakdown:
            rec["breakdown"] = dict(self.breakdown)
        return rec


@dataclass(frozen=True)
class RefinePlan:
    """How to refine: prune / reweight / loo-prune, with tuning knobs."""

    mode: str
    threshold: float | None = None  # None: tune on the validation split
    samples: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("prune", "reweight", "loo-prune"):
            raise ValueError(f"unknown refinement mode {self.mode!r}")
        if self.samples < 1:
            raise ValueError("samples must be at least 1")


@dataclass(frozen=True)
class RefineOutcome:
    mode: str
    threshold: float | None
    test_report: AccuracyReport
    val_report: AccuracyReport
    vanilla_test: AccuracyReport
    loo: tuple[tuple[str, float], ...] | None = None


def majority_vote_predict(inst: ValidationInstance, k: int) -> str:
    """Most frequent answer among the top-min(k, M) ranked candidates.

    Ties go to the answer whose best-ranked supporter ranks highest. Answers
    are compared whitespace-trimmed.
    """
    if len(inst.candidates) == 0:
        raise ValueError(f"instance {inst.query_id!r} has no candidates")
    if k < 1:
        raise ValueError("k must be at least 1")
    ranked = rank_candidates(inst)
    top = ranked.candidates[: min(k, len(ranked.candidates))]
    counts: dict[str, int] = {}
    first_rank: dict[str, int] = {}
    for pos, c in enumerate(top):
        if c.answer is None:
            raise ValueError(
                f"instance {inst.query_id!r}: candidate {c.point_id!r} has no answer"
            )
        token = c.answer.strip()
        counts[token] = counts.get(token, 0) + 1
        first_rank.setdefault(token, pos)
    return max(counts, key=lambda t: (counts[t], -first_rank[t]))


def evaluate(es: EvaluationSet, k: int) -> AccuracyReport:
    """Fraction of instances whose majority-vote prediction matches gold.

    Instances with no surviving candidates predict nothing and count as
    incorrect.
    """
    if len(es.instances) == 0:
        raise ValueError("evaluation set is empty")
    correct = 0
    for inst in es.instances:
        if inst.gold is None:
            raise ValueError(f"instance {inst.query_id!r} has no gold answer")
        if len(inst.candidates) == 0:
            continue
        if majority_vote_predict(inst, k) == inst.gold.strip():
            correct += 1
    n = len(es.instances)
    return AccuracyReport(accuracy=correct / n, n_evaluated=n, correct=correct)


def _weight_of(weights: Mapping[str, float], source: str) -> float | None:
    try:
        return float(weights[source])
    except KeyError:
        return None


def prune(es: EvaluationSet, weights: Mapping[str, float], threshold: float) -> EvaluationSet:
    """Drop candidates whose source weight is below the threshold.

    The instance list is preserved (instances may end up with no candidates);
    sources without a learned weight are kept.
    """
    instances = []
    for inst in es.instances:
        kept = tuple(
            c
            for c in inst.candidates
            if (w := _weight_of(weights, c.source_key)) is None or w >= threshold
        )
        instances.append(replace(inst, candidates=kept))
    return EvaluationSet.from_instances(instances)


def remove_sources(es: EvaluationSet, sources: Iterable[str]) -> EvaluationSet:
    drop = set(sources)
    instances = [
        replace(inst, candidates=tuple(c for c in inst.candidates if c.source_key not in drop))
        for inst in es.instances
    ]
    return EvaluationSet.from_instances(instances)


def tune_threshold(val_es: EvaluationSet, weights: Mapping[str, float], k: int) -> float:
    """Pick the pruning threshold maximizing validation accuracy.

    Candidates are 0 plus the distinct learned weights, scanned ascending;
    ties keep the smallest threshold (prune least).
    """
    candidates = sorted({0.0} | {float(weights[s]) for s in weights})
    best_t, best_acc = 0.0, -1.0
    for t in candidates:
        acc = evaluate(prune(val_es, weights, t), k).accuracy
        if acc > best_acc:
            best_t, best_acc = t, acc
    return best_t


def _sample_instance(inst: ValidationInstance, weights, draws) -> ValidationInstance:
    kept = tuple(
        c
        for j, c in enumerate(inst.candidates)
        if (w := _weight_of(weights, c.source_key)) is None or draws[j] < w
    )
    return replace(inst, candidates=kept)


def reweight_expected_accuracy(
    es: EvaluationSet,
    weights: Mapping[str, float],
    k: int,
    samples: int = 32,
    seed: int = 0,
) -> AccuracyReport:
    """Expected accuracy when candidates are sampled by their source weights.

    Each trial keeps every candidate independently with probability equal to
    its source weight, then evaluates the majority vote; the report averages
    the trial accuracies. Trial t draws from a generator spawned at
    (seed, t), instances in order, one uniform per candidate.
    """
    if samples < 1:
        raise ValueError("samples must be at least 1")
    if len(es.instances) == 0:
        raise ValueError("evaluation set is empty")
    accs = []
    for t in range(samples):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(t,)))
        correct = 0
        for inst in es.instances:
            if inst.gold is None:
                raise ValueError(f"instance {inst.query_id!r} has no gold answer")
            draws = rng.random(len(inst.candidates))
            sampled = _sample_instance(inst, weights, draws)
            if len(sampled.candidates) == 0:
                continue
            if majority_vote_predict(sampled, k) == inst.gold.strip():
                correct += 1
        accs.append(correct / len(es.instances))
    mean_acc = float(np.mean(accs))
    return AccuracyReport(
        accuracy=mean_acc,
        n_evaluated=len(es.instances),
        correct=mean_acc * len(es.instances),
        breakdown=(("samples", float(samples)),),
    )


def loo_scores(es: EvaluationSet, k: int) -> dict[str, float]:
    """Accuracy drop from removing each source: full minus without-source.

    Positive deltas mark helpful sources, negative deltas sources whose
    removal improves accuracy.
    """
    full = evaluate(es, k).accuracy
    return {
        source: full - evaluate(remove_sources(es, [source]), k).accuracy
        for source in es.sources
    }


def tune_loo_threshold(val_es: EvaluationSet, k: int) -> tuple[float, dict[str, float]]:
    """Threshold over leave-one-out deltas maximizing validation accuracy.

    Sources with delta below the threshold get removed; the smallest candidate
    threshold (pruning nothing) wins ties.
    """
    scores = loo_scores(val_es, k)
    best_t, best_acc = None, -1.0
    for t in sorted(set(scores.values())):
        drop = [s for s, d in scores.items() if d < t]
        acc = evaluate(remove_sources(val_es, drop), k).accuracy
        if acc > best_acc:
            best_t, best_acc = t, acc
    return float(best_t), scores


def apply_refinement(
    val_es: EvaluationSet,
    test_es: EvaluationSet,
    weights: Mapping[str, float],
    plan: RefinePlan,
    k: int,
) -> RefineOutcome:
    """Tune on the validation split, refine, and report test accuracy."""
    vanilla = evaluate(test_es, k)
    if plan.mode == "prune":
        threshold = plan.threshold
        if threshold is None:
            threshold = tune_threshold(val_es, weights, k)
        return RefineOutcome(
            mode=plan.mode,
            threshold=threshold,
            test_report=evaluate(prune(test_es, weights, threshold), k),
            val_report=evaluate(prune(val_es, weights, threshold), k),
            vanilla_test=vanilla,
        )
    if plan.mode == "reweight":
        return RefineOutcome(
            mode=plan.mode,
            threshold=None,
            test_report=reweight_expected_accuracy(test_es, weights, k, plan.samples, plan.seed),
            val_report=reweight_expected_accuracy(val_es, weights, k, plan.samples, plan.seed),
            vanilla_test=vanilla,
        )
    # loo-prune
    threshold = plan.threshold
    scores = loo_scores(val_es, k)
    if threshold is None:
        threshold, scores = tune_loo_threshold(val_es, k)
    drop = [s for s, d in scores.items() if d < threshold]
    return RefineOutcome(
        mode=plan.mode,
        threshold=threshold,
        test_report=evaluate(remove_sources(test_es, drop), k),
        val_report=evaluate(remove_sources(val_es, drop), k),
        vanilla_test=vanilla,
        loo=tuple(sorted(scores.items())),
    )


def _rank_blocks(inst: ValidationInstance, n_blocks: int) -> list[int]:
    """Contiguous rank-block index per candidate (input order)."""
    m = len(inst.candidates)
    order = sorted(range(m), key=lambda j: -inst.candidates[j].rank_score)
    block = [0] * m
    for pos, j in enumerate(order):
        block[j] = pos * n_blocks // m
    return block


def inject_noise(
    es: EvaluationSet,
    levels: Sequence[float] = DEFAULT_NOISE_LEVELS,
    sources_per_level: int = 10,
    seed: int = 0,
) -> EvaluationSet:
    """Clone every instance's candidates once per noise level.

    In the level-l clone each correct answer is replaced with a wrong token
    with probability l (drawn independently per candidate), and the clone's
    candidates are partitioned by rank into ``sources_per_level`` contiguous
    blocks named ``noise{level_index}.r{block}``. Wrong tokens embed the
    level index so corrupted copies never collude across levels. Clones keep
    the original rank scores; utilities are re-derived from the (possibly
    corrupted) answers.
    """
    levels = tuple(float(x) for x in levels)
    if any(not (0.0 <= x <= 1.0) for x in levels):
        raise ValueError("noise levels must lie in [0, 1]")
    if sources_per_level < 1:
        raise ValueError("sources_per_level must be at least 1")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed))
    instances = []
    for inst in es.instances:
        if inst.gold is None:
            raise ValueError(f"instance {inst.query_id!r} has no gold answer")
        gold = inst.gold.strip()
        blocks = _rank_blocks(inst, sources_per_level)
        clones: list[Candidate] = []
        for li, level in enumerate(levels):
            draws = rng.random(len(inst.candidates))
            for j, c in enumerate(inst.candidates):
                if c.answer is None:
                    raise ValueError(
                        f"instance {inst.query_id!r}: candidate {c.point_id!r} has no answer"
                    )
                answer = c.answer
                if answer.strip() == gold and draws[j] < level:
                    answer = f"WRONG::{li}::{c.answer}"
                clones.append(
                    Candidate(
                        point_id=f"{c.point_id}::n{li}",
                        source_key=f"noise{li}.r{blocks[j]}",
                        rank_score=c.rank_score,
                        answer=answer,
                        utility=None,
                    )
                )
        instances.append(replace(inst, candidates=tuple(clones)))
    return EvaluationSet.from_instances(instances)


def add_fabricated_source(
    es: EvaluationSet,
    correctness_rate: float,
    rank_policy: str = "top",
    seed: int = 0,
    *,
    count: int = 5,
    source_key: str = "fabricated",
) -> EvaluationSet:
    """Prepend synthetic top-ranked candidates to every instance.

    Each fabricated candidate answers gold with probability
    ``correctness_rate`` and a wrong token otherwise; all of them outrank the
    existing candidates.
    """
    if not (0.0 <= correctness_rate <= 1.0):
        raise ValueError("correctness rate must lie in [0, 1]")
    if rank_policy != "top":
        raise ValueError(f"unsupported rank policy {rank_policy!r}")
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed))
    instances = []
    for inst in es.instances:
        if inst.gold is None:
            raise ValueError(f"instance {inst.query_id!r} has no gold answer")
        top_score = max((c.rank_score for c in inst.candidates), default=0.0)
        draws = rng.random(count)
        fabricated = tuple(
            Candidate(
                point_id=f"fab{j}.{inst.query_id}",
                source_key=source_key,
                rank_score=top_score + (count - j),
                answer=inst.gold if draws[j] < correctness_rate else f"WRONG::fab::{inst.gold}",
                utility=None,
            )
            for j in range(count)
        )
        instances.append(replace(inst, candidates=fabricated + inst.candidates))
    return EvaluationSet.from_instances(instances)


def split_set(es: EvaluationSet, seed: int) -> tuple[EvaluationSet, EvaluationSet]:
    """Seeded 50/50 split into (validation, test), preserving instance order."""
    n = len(es.instances)
    if n < 2:
        raise ValueError("need at least two instances to split")
    perm = np.random.default_rng(np.random.SeedSequence(entropy=seed)).permutation(n)
    val_idx = sorted(int(i) for i in perm[: n // 2])
    test_idx = sorted(int(i) for i in perm[n // 2 :])
    return (
        EvaluationSet.from_instances(es.instances[i] for i in val_idx),
        EvaluationSet.from_instances(es.instances[i] for i in test_idx),
    )


def synth_qa_set(
    n_instances: int,
    per_instance: int = 50,
    seed: int = 0,
    *,
    top_correct: float = 0.9,
    bottom_correct: float = 0.2,
    n_distractors: int = 2,
) -> EvaluationSet:
    """Synthetic question-answering corpus for the refinement studies.

    Every instance gets ``per_instance`` candidates with strictly descending
    scores and a single source. Correctness decays linearly with rank from
    ``top_correct`` to ``bottom_correct`` (search-style rankings put better
    content first); wrong answers vote for one of ``n_distractors`` tokens.
    The steep profile matters for the noise study: a corrupted copy of a
    top-ranked candidate then displaces strictly better content, so even
    mildly noisy clones of the corpus earn clearly lower weights.
    """
    if n_instances < 0:
        raise ValueError("n_instances must be nonnegative")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed))
    instances = []
    for q in range(n_instances):
        gold = f"gold{q}"
        draws = rng.random(per_instance)
        distract = rng.integers(0, n_distractors, per_instance)
        cands = []
        for j in range(per_instance):
            p = top_correct - (top_correct - bottom_correct) * (j / max(per_instance - 1, 1))
            cands.append(
                Candidate(
                    point_id=f"q{q}.c{j}",
                    source_key="web",
                    rank_score=float(per_instance - j),
                    answer=gold if draws[j] < p else f"alt{int(distract[j])}::{q}",
                )
            )
        instances.append(ValidationInstance(query_id=f"q{q}", gold=gold, candidates=tuple(cands)))
    return EvaluationSet.from_instances(instances)
