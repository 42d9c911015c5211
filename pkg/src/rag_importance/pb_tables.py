"""Dynamic programs over independently sampled ranked points.

Both tables assume a corpus of M points in ranked order, where point i is
included independently with probability ``weights[i]`` (a Poisson-binomial
model over any contiguous rank range).

Subset probabilities
    ``prefix[i, k]``  = probability that exactly k of the first i points are
    sampled (i = 0..M, row 0 is the empty range).
    ``suffix[i, k]``  = probability that exactly k of points i..M are sampled
    (i = 1..M+1, row M+1 is the empty range; row 0 is unused).
    Only sizes k <= K are stored; the include/exclude recurrence never reads
    larger sizes, so the stored entries are exact.

Boundary value probabilities
    ``bvp[k, i, v]`` = probability that a subset sampled from points i..M has
    at least k elements and that its k-th ranked element carries the v-th
    utility value. Rows i = 1..M+1 are valid and row M+1 is identically zero.

Probabilities are kept in plain 64-bit floats: every update is a convex
combination of values in [0, 1], so there is no underflow pressure that
would justify log space.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = ["SubsetProbTables", "BvpTable", "build_subset_prob", "build_bvp"]


@dataclass(frozen=True)
class SubsetProbTables:
    prefix: np.ndarray  # (M+1, K+1)
    suffix: np.ndarray  # (M+2, K+1)

    @property
    def n_points(self) -> int:
        return self.prefix.shape[0] - 1

    @property
    def max_size(self) -> int:
        return self.prefix.shape[1] - 1


@dataclass(frozen=True)
class BvpTable:
    values: tuple[float, ...]
    table: np.ndarray  # (K+1, M+2, V); k row 0 unused

    def at(self, k: int, i: int, value: float) -> float:
        return float(self.table[k, i, self.values.index(value)])


def _check_weights(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1:
        raise ValueError("weights must be one-dimensional")
    if w.size and (w.min() < 0.0 or w.max() > 1.0):
        raise ValueError("weights must lie in [0, 1]")
    return w


def build_subset_prob(weights: Sequence[float], k_max: int) -> SubsetProbTables:
    """Prefix and suffix subset-size probabilities for sizes 0..k_max, in O(M*K)."""
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    w = _check_weights(weights)
    m = w.size
    prefix = np.zeros((m + 1, k_max + 1))
    prefix[0, 0] = 1.0
    for i in range(1, m + 1):
        wi = w[i - 1]
        prev = prefix[i - 1]
        prefix[i] = prev * (1.0 - wi)
        prefix[i, 1:] += prev[:-1] * wi
    suffix = np.zeros((m + 2, k_max + 1))
    suffix[m + 1, 0] = 1.0
    for i in range(m, 0, -1):
        wi = w[i - 1]
        nxt = suffix[i + 1]
        suffix[i] = nxt * (1.0 - wi)
        suffix[i, 1:] += nxt[:-1] * wi
    return SubsetProbTables(prefix=prefix, suffix=suffix)


def build_bvp(
    utilities: Sequence[float],
    weights: Sequence[float],
    k_max: int,
    values: Sequence[float],
) -> BvpTable:
    """Boundary value probabilities in O(M*K*V).

    Recurrence, sweeping i from M down to 1:

        k = 1:  bvp[1, i, v] = bvp[1, i+1, v] * (1 - w_i) + [u_i = v] * w_i
        k > 1:  bvp[k, i, v] = bvp[k, i+1, v] * (1 - w_i) + bvp[k-1, i+1, v] * w_i

    with bvp[k, M+1, v] = 0 for all k, v.
    """
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    w = _check_weights(weights)
    u = np.asarray(utilities, dtype=np.float64)
    if u.shape != w.shape:
        raise ValueError("utilities and weights must have equal length")
    values = tuple(values)
    index = {v: j for j, v in enumerate(values)}
    try:
        vidx = np.array([index[x] for x in u.tolist()], dtype=np.int64)
    except KeyError as exc:
        raise ValueError(f"utility {exc.args[0]!r} not in the declared value set") from None
    m = w.size
    n_vals = len(values)
    table = np.zeros((k_max + 1, m + 2, n_vals))
    for i in range(m, 0, -1):
        wi = w[i - 1]
        table[1:, i, :] = table[1:, i + 1, :] * (1.0 - wi)
        table[1, i, vidx[i - 1]] += wi
        if k_max >= 2:
            table[2:, i, :] += table[1:k_max, i + 1, :] * wi
    return BvpTable(values=values, table=table)
