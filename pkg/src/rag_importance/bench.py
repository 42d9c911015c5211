"""Synthetic corpus generation and epoch-runtime benchmarking.

The timed unit is one gradient epoch: a full truncated-gradient pass over
every instance plus the per-source mean projection, at fixed weights. Corpus
generation and packing happen before the timed region. Gradients are written
per (instance, point) slot and the projection reduces over a fixed chunk
grid, so timing is the only thing a thread count can change.

Synthetic corpora use uniform random scores (sorted descending within each
instance), Bernoulli(1/2) binary utilities, and uniformly assigned sources;
these distributions are recorded in the report header.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from io import StringIO

import numpy as np

from . import kernels
from .corpus import Candidate, EvaluationSet, ValidationInstance
from .kernels import PackedSet

__all__ = ["BenchConfig", "BenchRow", "BenchReport", "synth_packed", "synth_corpus", "run_benchmark"]

DISTRIBUTION_NOTE = (
    "scores~U(0,1) sorted desc per instance; utilities~Bernoulli(0.5) on {0,1}; "
    "sources uniform"
)

_BYTES_PER_POINT = 60  # scores + utilities + weights + gradients/update (f8) + source ids + slack


@dataclass(frozen=True)
class BenchConfig:
    n_instances: int
    per_instance: int = 50
    threads: int = 1
    repeats: int = 7
    seed: int = 0
    n_sources: int = 50

    def __post_init__(self):
        if self.n_instances < 0:
            raise ValueError("n_instances must be nonnegative")
        if self.per_instance < 1:
            raise ValueError("per_instance must be at least 1")
        if self.repeats < 1:
            raise ValueError("repeats must be at least 1")
        if self.n_sources < 1:
            raise ValueError("n_sources must be at least 1")

    @property
    def corpus_size(self) -> int:
        return self.n_instances * self.per_instance


@dataclass(frozen=True)
class BenchRow:
    corpus_size: int
    n_instances: int
    per_instance: int
    threads: int
    mean_ms: float
    min_ms: float


@dataclass(frozen=True)
class BenchReport:
    rows: tuple[BenchRow, ...]
    # per thread count: least-squares slope (ms per point) and R^2 of mean_ms vs M
    fits: dict[int, tuple[float, float]] = field(default_factory=dict)

    def to_csv(self) -> str:
        out = StringIO()
        out.write(f"# synthetic corpus: {DISTRIBUTION_NOTE}\n")
        out.write("M,N,b,threads,mean_ms,min_ms,r2_slope\n")
        for r in self.rows:
            r2 = self.fits.get(r.threads, (float("nan"), float("nan")))[1]
            out.write(
                f"{r.corpus_size},{r.n_instances},{r.per_instance},{r.threads},"
                f"{r.mean_ms:.3f},{r.min_ms:.3f},{r2:.4f}\n"
            )
        return out.getvalue()


def synth_packed(cfg: BenchConfig) -> PackedSet:
    """Generate the flat synthetic corpus directly (no per-candidate objects)."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed))
    n, b = cfg.n_instances, cfg.per_instance
    total = n * b
    scores = rng.random((n, b))
    scores.sort(axis=1)
    scores = np.ascontiguousarray(scores[:, ::-1]).reshape(-1)
    utilities = rng.integers(0, 2, total).astype(np.float64)
    source_idx = rng.integers(0, cfg.n_sources, total).astype(np.int32)
    offsets = np.arange(n + 1, dtype=np.int64) * b
    return PackedSet(
        offsets=offsets,
        scores=scores,
        utilities=utilities,
        source_idx=source_idx,
        source_keys=tuple(f"s{i}" for i in range(cfg.n_sources)),
        point_ids=None,
    )


def synth_corpus(cfg: BenchConfig) -> EvaluationSet:
    """The same synthetic corpus as an object-level evaluation set."""
    ps = synth_packed(cfg)
    instances = []
    for q in range(cfg.n_instances):
        a, b = int(ps.offsets[q]), int(ps.offsets[q + 1])
        cands = tuple(
            Candidate(
                point_id=f"q{q}.c{j - a}",
                source_key=ps.source_keys[ps.source_idx[j]],
                rank_score=float(ps.scores[j]),
                utility=float(ps.utilities[j]),
            )
            for j in range(a, b)
        )
        instances.append(ValidationInstance(query_id=f"q{q}", gold=None, candidates=cands))
    return EvaluationSet.from_instances(instances)


def estimated_footprint_bytes(cfg: BenchConfig) -> int:
    return cfg.corpus_size * _BYTES_PER_POINT


def _timed_epoch(ps: PackedSet, w_src, counts, k, eps, learning_rate) -> float:
    t0 = time.perf_counter()
    upd, _ = kernels.epoch_update(ps, w_src, k, eps, learning_rate)
    new_w = kernels.project_source_means(ps, upd, counts)
    elapsed = time.perf_counter() - t0
    if not np.all(np.isfinite(new_w)):  # keep the projection observable
        raise RuntimeError("projection produced non-finite weights")
    return elapsed


def run_benchmark(
    sizes,
    threads,
    k: int = 10,
    *,
    eps: float = 1e-3,
    repeats: int = 7,
    seed: int = 0,
    learning_rate: float = 500.0,
    init_weight: float = 0.5,
    n_sources: int = 50,
    mem_cap_bytes: int = 8 << 30,
) -> BenchReport:
    """Time gradient epochs over (n_instances, per_instance) sizes and thread counts.

    Refuses configurations whose estimated footprint exceeds ``mem_cap_bytes``.
    Returns per-configuration mean/min wall-clock times plus a linear fit of
    mean epoch time against corpus size for every thread count.
    """
    sizes = [(int(n), int(b)) for n, b in sizes]
    threads = [int(t) for t in threads]
    for n, b in sizes:
        cfg = BenchConfig(n_instances=n, per_instance=b, repeats=repeats, seed=seed,
                          n_sources=n_sources)
        if estimated_footprint_bytes(cfg) > mem_cap_bytes:
            raise ValueError(
                f"corpus of {cfg.corpus_size} points exceeds the memory cap "
                f"({estimated_footprint_bytes(cfg)} > {mem_cap_bytes} bytes)"
            )
    kernels.warm_up()
    rows = []
    for n, b in sizes:
        cfg = BenchConfig(n_instances=n, per_instance=b, repeats=repeats, seed=seed,
                          n_sources=n_sources)
        ps = synth_packed(cfg)
        w_src = np.full(n_sources, float(init_weight))
        counts = kernels.source_counts(ps)
        for t in threads:
            kernels.set_threads(t)
            _timed_epoch(ps, w_src, counts, k, eps, learning_rate)  # warm caches, untimed
            samples = [
                1e3 * _timed_epoch(ps, w_src, counts, k, eps, learning_rate)
                for _ in range(repeats)
            ]
            rows.append(
                BenchRow(
                    corpus_size=n * b,
                    n_instances=n,
                    per_instance=b,
                    threads=t,
                    mean_ms=float(np.mean(samples)),
                    min_ms=float(np.min(samples)),
                )
            )
    fits = {}
    for t in threads:
        pts = [(r.corpus_size, r.mean_ms) for r in rows if r.threads == t]
        if len(pts) >= 2:
            x = np.array([p[0] for p in pts], dtype=np.float64)
            y = np.array([p[1] for p in pts], dtype=np.float64)
            slope, intercept = np.polyfit(x, y, 1)
            resid = y - (slope * x + intercept)
            ss_tot = float(((y - y.mean()) ** 2).sum())
            r2 = 1.0 if ss_tot == 0.0 else 1.0 - float((resid**2).sum()) / ss_tot
            fits[t] = (float(slope), r2)
    return BenchReport(rows=tuple(rows), fits=fits)
