"""Shared fixture builders for the test suite."""

import numpy as np

from rag_importance.corpus import Candidate, EvaluationSet, ValidationInstance


def make_instance(
    utilities=None,
    *,
    scores=None,
    answers=None,
    gold=None,
    sources=None,
    qid="q0",
):
    if utilities is not None:
        m = len(utilities)
    elif answers is not None:
        m = len(answers)
    else:
        raise ValueError("need utilities or answers")
    scores = list(scores) if scores is not None else [float(m - j) for j in range(m)]
    sources = list(sources) if sources is not None else [f"s{j % 3}" for j in range(m)]
    cands = []
    for j in range(m):
        cands.append(
            Candidate(
                point_id=f"{qid}.c{j}",
                source_key=sources[j],
                rank_score=float(scores[j]),
                answer=None if answers is None else answers[j],
                utility=None if utilities is None or utilities[j] is None else float(utilities[j]),
            )
        )
    return ValidationInstance(query_id=qid, gold=gold, candidates=tuple(cands))


def random_instance(rng, m=None, *, max_m=12, n_sources=3, binary=True, qid="q0", ties=False):
    m = int(rng.integers(1, max_m + 1)) if m is None else m
    if ties:
        scores = rng.integers(0, max(2, m // 2), m).astype(float)
    else:
        scores = rng.random(m)
    if binary:
        utils = rng.integers(0, 2, m).astype(float)
    else:
        utils = np.round(rng.random(m), 3)
    return make_instance(
        utils.tolist(),
        scores=scores.tolist(),
        qid=qid,
        sources=[f"s{int(x)}" for x in rng.integers(0, n_sources, m)],
    )


def make_set(*instances):
    return EvaluationSet.from_instances(instances)
