"""Projected gradient ascent over source-level weights.

All points of a source share one weight. Each iteration expands the source
weights to points, takes a clamped ascent step along the truncated per-point
gradients (already averaged by 1/N), and projects back onto the constraint
set by averaging the updated weights within each source. Clamping happens
before the mean, so every intermediate value stays feasible, and once points
within a source agree (which they do from the first broadcast on) the mean is
the exact Euclidean projection onto the equal-weights constraint intersected
with the box.

Defaults follow the reference protocol: top-10 utility, 50 iterations,
learning rate 500, initial weight 0.5, truncation eps 1e-3. The objective is
maximized, so the step adds the gradient. The iteration count is fixed; there
is no convergence test.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping

import numpy as np

from . import kernels
from .corpus import EvaluationSet, ensure_utilities

__all__ = ["TrainConfig", "SourceWeights", "FitResult", "fit"]


@dataclass(frozen=True)
class TrainConfig:
    k: int = 10
    iterations: int = 50
    learning_rate: float = 500.0
    init_weight: float = 0.5
    eps: float = 1e-3
    seed: int = 0  # reserved for stochastic variants; the ascent itself is deterministic

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.iterations < 0:
            raise ValueError("iterations must be nonnegative")
        if self.learning_rate <= 0.0:
            raise ValueError("learning rate must be positive")
        if not (0.0 <= self.init_weight <= 1.0):
            raise ValueError("init_weight must lie in [0, 1]")
        if not (0.0 < self.eps <= 1.0):
            raise ValueError("eps must lie in (0, 1]")


@dataclass(frozen=True)
class SourceWeights:
    """Weight per source, ordered by source index."""

    sources: tuple[str, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.sources) != len(self.values):
            raise ValueError("sources and values must align")
        if any(not (0.0 <= w <= 1.0) for w in self.values):
            raise ValueError("weights must lie in [0, 1]")

    @classmethod
    def uniform(cls, es: EvaluationSet, value: float) -> "SourceWeights":
        return cls(sources=es.sources, values=tuple([value] * len(es.sources)))

    @classmethod
    def from_dict(cls, weights: Mapping[str, float]) -> "SourceWeights":
        return cls(sources=tuple(weights), values=tuple(float(v) for v in weights.values()))

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.sources, self.values))

    def __getitem__(self, source: str) -> float:
        try:
            return self.values[self.sources.index(source)]
        except ValueError:
            raise KeyError(source) from None

    def __contains__(self, source: str) -> bool:
        return source in self.sources

    def __iter__(self) -> Iterator[str]:
        return iter(self.sources)

    def __len__(self) -> int:
        return len(self.sources)

    def keys(self):
        return self.as_dict().keys()

    def items(self):
        return self.as_dict().items()


@dataclass(frozen=True)
class FitResult:
    weights: SourceWeights
    telemetry: tuple[dict, ...] = field(default_factory=tuple)


def fit(
    es: EvaluationSet,
    cfg: TrainConfig = TrainConfig(),
    *,
    callback: Callable[[int, np.ndarray], None] | None = None,
) -> FitResult:
    """Learn source weights by projected ascent on the extension's value.

    ``callback(iteration, source_weight_array)`` runs after each projection,
    e.g. to assert invariants or log trajectories. Telemetry records one line
    per iteration: iter, mean/min/max weight, and the per-point gradient norm.
    The top-K size is capped at the largest per-instance candidate count so
    that undersized corpora still produce displacement gradients.
    """
    if len(es.instances) == 0:
        raise ValueError("evaluation set is empty")
    es = ensure_utilities(es)
    ps = kernels.pack(es)
    if ps.max_instance_size == 0 or np.any(np.diff(ps.offsets) == 0):
        raise ValueError("evaluation set contains an instance with no candidates")
    k_eff = min(cfg.k, ps.max_instance_size)
    counts = kernels.source_counts(ps)
    w_src = np.full(len(es.sources), float(cfg.init_weight))
    telemetry = []
    for it in range(cfg.iterations):
        upd, grad_sq = kernels.epoch_update(ps, w_src, k_eff, cfg.eps, cfg.learning_rate)
        w_src = kernels.project_source_means(ps, upd, counts)
        np.clip(w_src, 0.0, 1.0, out=w_src)  # guard against float drift at the box edge
        telemetry.append(
            {
                "iter": it,
                "mean_weight": float(w_src.mean()),
                "min": float(w_src.min()),
                "max": float(w_src.max()),
                "grad_norm": float(np.sqrt(grad_sq)),
            }
        )
        if callback is not None:
            callback(it, w_src.copy())
    weights = SourceWeights(sources=es.sources, values=tuple(float(x) for x in w_src))
    return FitResult(weights=weights, telemetry=tuple(telemetry))
