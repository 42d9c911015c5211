"""Data model for retrieval evaluation sets.

An evaluation set holds one record per query: the query id, an optional gold
answer, and the ranked candidate list the retriever returned for that query.
On disk this is one JSON object per line:

    {"query_id": str, "gold": str?, "candidates": [
        {"id": str, "source": str, "score": number,
         "answer": str?, "utility": number?}]}

Every candidate needs an ``answer`` or a precomputed ``utility`` in [0, 1].
When utilities are missing they are derived as exact-match correctness of the
answer against the instance's gold (whitespace-trimmed string equality, no
fuzzy matching). Candidates are grouped into sources (e.g. web domains) via
their ``source`` key; sources are the unit at which weights are learned, and
source indices are assigned in first-appearance order so that a file always
produces the same registry.

Learned weights are stored as one JSON object per line, sorted by source
index: ``{"source": str, "weight": number}``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "CorpusFormatError",
    "Candidate",
    "ValidationInstance",
    "EvaluationSet",
    "UtilityValueSet",
    "load_evaluation_set",
    "save_evaluation_set",
    "rank_candidates",
    "derive_utilities",
    "ensure_utilities",
    "expand_source_weights",
    "utility_value_set",
    "load_source_weights",
    "save_source_weights",
]


class CorpusFormatError(ValueError):
    """Raised when an evaluation-set record violates the line format."""


@dataclass(frozen=True, slots=True)
class Candidate:
    """One retrieved data point: id, grouping key, rank score, answer/utility."""

    point_id: str
    source_key: str
    rank_score: float
    answer: str | None = None
    utility: float | None = None

    def __post_init__(self):
        if self.answer is None and self.utility is None:
            raise CorpusFormatError(
                f"candidate {self.point_id!r} has neither answer nor utility"
            )
        if self.utility is not None and not (0.0 <= self.utility <= 1.0):
            raise CorpusFormatError(
                f"candidate {self.point_id!r} has utility {self.utility!r} outside [0, 1]"
            )


@dataclass(frozen=True, slots=True)
class ValidationInstance:
    """One query with its gold answer and the candidates retrieved for it."""

    query_id: str
    gold: str | None
    candidates: tuple[Candidate, ...]

    def __post_init__(self):
        if self.gold is None and any(c.utility is None for c in self.candidates):
            raise CorpusFormatError(
                f"instance {self.query_id!r} has candidates without utility but no gold answer"
            )


@dataclass(frozen=True)
class EvaluationSet:
    """All validation instances plus the stable source registry.

    ``sources`` lists distinct source keys in first-appearance order (instance
    by instance, candidate by candidate); a source's index is its position in
    that tuple. Instances and the registry are immutable after construction,
    so a set can be shared across threads read-only.
    """

    instances: tuple[ValidationInstance, ...]
    sources: tuple[str, ...]

    @classmethod
    def from_instances(cls, instances: Iterable[ValidationInstance]) -> "EvaluationSet":
        instances = tuple(instances)
        seen: dict[str, None] = {}
        for inst in instances:
            for cand in inst.candidates:
                seen.setdefault(cand.source_key, None)
        return cls(instances=instances, sources=tuple(seen))

    def source_index(self) -> dict[str, int]:
        return {s: i for i, s in enumerate(self.sources)}

    def __len__(self) -> int:
        return len(self.instances)


@dataclass(frozen=True, slots=True)
class UtilityValueSet:
    """The finite set of distinct utility values observed in one instance."""

    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.values) < 1:
            raise ValueError("utility value set must contain at least one value")
        if any(not (0.0 <= v <= 1.0) for v in self.values):
            raise ValueError("utility values must lie in [0, 1]")


def _parse_candidate(obj, line_no: int) -> Candidate:
    if not isinstance(obj, dict):
        raise CorpusFormatError(f"line {line_no}: candidate is not an object")
    try:
        point_id = obj["id"]
        source = obj["source"]
        score = obj["score"]
    except KeyError as exc:
        raise CorpusFormatError(f"line {line_no}: candidate missing field {exc}") from None
    if not isinstance(point_id, str) or not isinstance(source, str):
        raise CorpusFormatError(f"line {line_no}: candidate id/source must be strings")
    if not isinstance(score, (int, float)) or isinstance(score, bool) or not np.isfinite(score):
        raise CorpusFormatError(f"line {line_no}: candidate score must be a finite number")
    answer = obj.get("answer")
    utility = obj.get("utility")
    if answer is not None and not isinstance(answer, str):
        raise CorpusFormatError(f"line {line_no}: candidate answer must be a string")
    if utility is not None:
        if not isinstance(utility, (int, float)) or isinstance(utility, bool):
            raise CorpusFormatError(f"line {line_no}: candidate utility must be a number")
        utility = float(utility)
    try:
        return Candidate(
            point_id=point_id,
            source_key=source,
            rank_score=float(score),
            answer=answer,
            utility=utility,
        )
    except CorpusFormatError as exc:
        raise CorpusFormatError(f"line {line_no}: {exc}") from None


def _parse_instance(line: str, line_no: int) -> ValidationInstance:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise CorpusFormatError(f"line {line_no}: invalid JSON ({exc.msg})") from None
    if not isinstance(obj, dict):
        raise CorpusFormatError(f"line {line_no}: record is not an object")
    query_id = obj.get("query_id")
    if not isinstance(query_id, str):
        raise CorpusFormatError(f"line {line_no}: missing or non-string query_id")
    gold = obj.get("gold")
    if gold is not None and not isinstance(gold, str):
        raise CorpusFormatError(f"line {line_no}: gold must be a string")
    cands_obj = obj.get("candidates")
    if not isinstance(cands_obj, list):
        raise CorpusFormatError(f"line {line_no}: missing candidates list")
    candidates = tuple(_parse_candidate(c, line_no) for c in cands_obj)
    try:
        return ValidationInstance(query_id=query_id, gold=gold, candidates=candidates)
    except CorpusFormatError as exc:
        raise CorpusFormatError(f"line {line_no}: {exc}") from None


def load_evaluation_set(path) -> EvaluationSet:
    """Parse a line-delimited evaluation-set file.

    Candidate order is preserved exactly as read; whitespace-only lines are
    ignored. Malformed records raise :class:`CorpusFormatError` with the
    offending line number.
    """
    instances = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            instances.append(_parse_instance(line, line_no))
    return EvaluationSet.from_instances(instances)


def _candidate_record(c: Candidate) -> dict:
    rec: dict = {"id": c.point_id, "source": c.source_key, "score": c.rank_score}
    if c.answer is not None:
        rec["answer"] = c.answer
    if c.utility is not None:
        rec["utility"] = c.utility
    return rec


def instance_record(inst: ValidationInstance) -> dict:
    rec: dict = {"query_id": inst.query_id}
    if inst.gold is not None:
        rec["gold"] = inst.gold
    rec["candidates"] = [_candidate_record(c) for c in inst.candidates]
    return rec


def save_evaluation_set(es: EvaluationSet, path) -> None:
    """Write the canonical line-delimited form (round-trips bit-identically)."""
    with open(path, "w", encoding="utf-8") as fh:
        for inst in es.instances:
            fh.write(json.dumps(instance_record(inst), ensure_ascii=False, separators=(",", ":")))
            fh.write("\n")


def rank_candidates(inst: ValidationInstance) -> ValidationInstance:
    """Sort candidates by rank score descending; ties keep input order."""
    ranked = tuple(sorted(inst.candidates, key=lambda c: -c.rank_score))
    return replace(inst, candidates=ranked)


def ranking_order(scores: Sequence[float] | np.ndarray) -> np.ndarray:
    """Indices that sort scores descending, ties stable in input order."""
    s = np.asarray(scores, dtype=np.float64)
    return np.argsort(-s, kind="stable")


def derive_utilities(inst: ValidationInstance) -> ValidationInstance:
    """Fill missing utilities with exact-match correctness against gold.

    Matching is whitespace-trimmed string equality (1.0 on match, else 0.0).
    Candidates that already carry a utility are left untouched, which makes
    the operation idempotent.
    """
    if all(c.utility is not None for c in inst.candidates):
        return inst
    if inst.gold is None:
        raise CorpusFormatError(
            f"instance {inst.query_id!r}: cannot derive utilities without a gold answer"
        )
    gold = inst.gold.strip()
    new_cands = []
    for c in inst.candidates:
        if c.utility is not None:
            new_cands.append(c)
        else:
            match = c.answer is not None and c.answer.strip() == gold
            new_cands.append(replace(c, utility=1.0 if match else 0.0))
    return replace(inst, candidates=tuple(new_cands))


def ensure_utilities(es: EvaluationSet) -> EvaluationSet:
    """Return a set in which every candidate carries a utility."""
    if all(c.utility is not None for inst in es.instances for c in inst.candidates):
        return es
    return EvaluationSet(
        instances=tuple(derive_utilities(inst) for inst in es.instances),
        sources=es.sources,
    )


def expand_source_weights(
    es: EvaluationSet, weights: Mapping[str, float]
) -> list[np.ndarray]:
    """Per-instance arrays of per-point weights (each point gets its source's weight)."""
    out = []
    for inst in es.instances:
        w = np.empty(len(inst.candidates), dtype=np.float64)
        for j, c in enumerate(inst.candidates):
            try:
                w[j] = weights[c.source_key]
            except KeyError:
                raise ValueError(f"no weight for source {c.source_key!r}") from None
        out.append(w)
    return out


def utility_value_set(inst: ValidationInstance) -> UtilityValueSet:
    """Distinct utility values of one instance, ascending."""
    utils = [c.utility for c in inst.candidates]
    if any(u is None for u in utils):
        raise ValueError(
            f"instance {inst.query_id!r} has underived utilities; run derive_utilities first"
        )
    return UtilityValueSet(values=tuple(sorted(set(utils))))


def load_source_weights(path) -> dict[str, float]:
    """Read a weights file; mapping order is the file's line order."""
    weights: dict[str, float] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                source, weight = obj["source"], obj["weight"]
            except (json.JSONDecodeError, KeyError, TypeError):
                raise CorpusFormatError(f"line {line_no}: invalid weight record") from None
            weights[source] = float(weight)
    return weights


def save_source_weights(weights: Mapping[str, float], path, *, order: Sequence[str] | None = None) -> None:
    """Write one ``{"source", "weight"}`` line per source, sorted by source index.

    ``order`` supplies the source-index order (e.g. ``EvaluationSet.sources``);
    by default the mapping's own order is used.
    """
    keys = list(order) if order is not None else list(weights)
    with open(path, "w", encoding="utf-8") as fh:
        for key in keys:
            fh.write(json.dumps({"source": key, "weight": float(weights[key])}, separators=(",", ":")))
            fh.write("\n")
