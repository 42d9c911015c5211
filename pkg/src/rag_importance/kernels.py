"""Flat-array gradient engine.

Evaluation sets are packed into contiguous struct-of-arrays buffers (CSR-style
``offsets`` per instance) and all set-level gradient work runs through the
jitted kernels below. Two properties the rest of the package relies on:

* results are bit-identical for any thread count: every (instance, point)
  gradient is written to its own output slot inside the parallel region, and
  every cross-instance reduction is either serial in instance order or runs
  over a fixed chunk grid whose boundaries do not depend on the scheduler;
* the per-instance kernel re-derives the ranking (verifying a presorted fast
  path), finds the truncation boundary when ``eps > 0``, builds the prefix /
  suffix / boundary-value tables over the kept prefix only, and assembles the
  two gradient cases, all from preallocated per-thread scratch.

``eps == 0.0`` is the internal sentinel for the exact (untruncated) path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
from numba import njit, prange

from .corpus import EvaluationSet

__all__ = [
    "PackedSet",
    "pack",
    "set_gradients",
    "epoch_update",
    "project_source_means",
    "source_counts",
    "aggregate_by_point",
    "available_threads",
    "set_threads",
    "warm_up",
]

_PROJECTION_CHUNKS = 256  # fixed grid so the merge order never depends on threads
_SCRATCH_VALUE_CAP = 16  # instances with more distinct utility values fall back to local tables


@dataclass
class PackedSet:
    offsets: np.ndarray  # int64 (N+1,)
    scores: np.ndarray  # float64 (T,)
    utilities: np.ndarray  # float64 (T,)
    source_idx: np.ndarray  # int32 (T,)
    source_keys: tuple[str, ...]
    point_ids: list[str] | None = None  # per occurrence; omitted for synthetic sets

    @property
    def n_instances(self) -> int:
        return self.offsets.shape[0] - 1

    @property
    def n_points(self) -> int:
        return int(self.offsets[-1])

    @property
    def max_instance_size(self) -> int:
        if self.n_instances == 0:
            return 0
        return int(np.diff(self.offsets).max())


def pack(es: EvaluationSet) -> PackedSet:
    """Flatten an evaluation set; requires utilities to be present."""
    sizes = [len(inst.candidates) for inst in es.instances]
    offsets = np.zeros(len(sizes) + 1, dtype=np.int64)
    np.cumsum(sizes, out=offsets[1:])
    total = int(offsets[-1])
    scores = np.empty(total, dtype=np.float64)
    utilities = np.empty(total, dtype=np.float64)
    source_idx = np.empty(total, dtype=np.int32)
    point_ids: list[str] = []
    index = es.source_index()
    pos = 0
    for inst in es.instances:
        for c in inst.candidates:
            if c.utility is None:
                raise ValueError(
                    f"instance {inst.query_id!r} has underived utilities; "
                    "run ensure_utilities first"
                )
            scores[pos] = c.rank_score
            utilities[pos] = c.utility
            source_idx[pos] = index[c.source_key]
            point_ids.append(c.point_id)
            pos += 1
    return PackedSet(
        offsets=offsets,
        scores=scores,
        utilities=utilities,
        source_idx=source_idx,
        source_keys=es.sources,
        point_ids=point_ids,
    )


@njit(cache=True)
def _boundary_index(w_sorted, k, eps):
    """Smallest 1-based b whose strict-prefix mass mu satisfies the tail bound.

    Returns m+1 when no b qualifies (or when the first qualifying b is m+1),
    i.e. when truncation would keep everything anyway.
    """
    m = w_sorted.shape[0]
    pre = np.empty(m + 2)
    pre[1] = 0.0
    for i in range(1, m + 1):
        pre[i + 1] = pre[i] + w_sorted[i - 1]
    lo = 1
    hi = m + 2  # exclusive sentinel: "no b qualifies"
    while lo < hi:
        mid = (lo + hi) // 2
        mu = pre[mid]
        ok = False
        if mu > k - 1.0:
            ok = math.exp(-((mu - k + 1.0) ** 2) / (2.0 * mu)) < eps
        if ok:
            hi = mid
        else:
            lo = mid + 1
    if lo > m + 1:
        return m + 1
    return lo


@njit(cache=True)
def _grad_core(scores, utils, weights, k, eps, out, ordbuf, u, w, vals, vidx, prefix, suffix, bvp):
    """Gradients of one instance into ``out`` (input order), using caller scratch.

    Scratch arrays must have at least m rows; rows are re-initialized on the
    fly, so stale contents are never read.
    """
    m = scores.shape[0]
    sorted_desc = True
    for i in range(m - 1):
        if scores[i] < scores[i + 1]:
            sorted_desc = False
            break
    if sorted_desc:
        for i in range(m):
            ordbuf[i] = i
        order = ordbuf
    else:
        neg = np.empty(m)
        for i in range(m):
            neg[i] = -scores[i]
        order = np.argsort(neg, kind="mergesort")
    for r in range(m):
        u[r] = utils[order[r]]
        w[r] = weights[order[r]]

    n_keep = m
    n_report = m
    if eps > 0.0:
        b = _boundary_index(w[:m], k, eps)
        if b <= m:
            n_keep = b
            n_report = b - 1

    # distinct utility values among kept points, first-appearance order
    n_vals = 0
    for r in range(n_keep):
        found = -1
        for t in range(n_vals):
            if vals[t] == u[r]:
                found = t
                break
        if found < 0:
            vals[n_vals] = u[r]
            found = n_vals
            n_vals += 1
        vidx[r] = found

    kp1 = k + 1
    L = n_keep
    prefix[0, 0] = 1.0
    for kk in range(1, kp1):
        prefix[0, kk] = 0.0
    for i in range(1, L + 1):
        wi = w[i - 1]
        prefix[i, 0] = prefix[i - 1, 0] * (1.0 - wi)
        for kk in range(1, kp1):
            prefix[i, kk] = prefix[i - 1, kk] * (1.0 - wi) + prefix[i - 1, kk - 1] * wi
    suffix[L + 1, 0] = 1.0
    for kk in range(1, kp1):
        suffix[L + 1, kk] = 0.0
    for i in range(L, 0, -1):
        wi = w[i - 1]
        suffix[i, 0] = suffix[i + 1, 0] * (1.0 - wi)
        for kk in range(1, kp1):
            suffix[i, kk] = suffix[i + 1, kk] * (1.0 - wi) + suffix[i + 1, kk - 1] * wi
    if n_vals > bvp.shape[2]:
        bvp_u = np.empty((kp1, L + 2, n_vals))
    else:
        bvp_u = bvp
    for kk in range(1, kp1):
        for v in range(n_vals):
            bvp_u[kk, L + 1, v] = 0.0
    for i in range(L, 0, -1):
        wi = w[i - 1]
        for kk in range(kp1 - 1, 1, -1):
            for v in range(n_vals):
                bvp_u[kk, i, v] = bvp_u[kk, i + 1, v] * (1.0 - wi) + bvp_u[kk - 1, i + 1, v] * wi
        for v in range(n_vals):
            bvp_u[1, i, v] = bvp_u[1, i + 1, v] * (1.0 - wi)
        bvp_u[1, i, vidx[i - 1]] += wi

    for r in range(m):
        out[order[r]] = 0.0
    for i in range(1, n_report + 1):
        ui = u[i - 1]
        # case 1: the rest of the sample is smaller than k, nothing is expelled
        mass_small = 0.0
        for kp in range(k):
            for j in range(kp + 1):
                mass_small += prefix[i - 1, j] * suffix[i + 1, kp - j]
        g = (ui / k) * mass_small
        # case 2: the current k-th neighbor (value v) gets expelled
        for v in range(n_vals):
            diff = (ui - vals[v]) / k
            if diff != 0.0:
                s = 0.0
                for j in range(k):
                    s += prefix[i - 1, j] * bvp_u[k - j, i + 1, v]
                g += diff * s
        out[order[i - 1]] = g


@njit(cache=True)
def _max_instance_size(offsets):
    n = offsets.shape[0] - 1
    max_m = 0
    for i in range(n):
        sz = offsets[i + 1] - offsets[i]
        if sz > max_m:
            max_m = sz
    return max_m


@njit(cache=True)
def _scratch_chunks(max_m, kp1, vcap):
    """Parallel chunk count, sized so the scratch pool stays under ~96 MiB.

    Outputs never depend on the chunk grid (each instance owns its slots), so
    this only trades scheduling granularity against scratch memory.
    """
    per_row = 8 * (7 * max_m + (max_m + 1) * kp1 + (max_m + 2) * kp1 * (1 + vcap))
    budget = 96 << 20
    chunks = budget // max(per_row, 1)
    if chunks > 256:
        return 256
    if chunks < 8:
        return 8
    return int(chunks)


@njit(parallel=True, cache=True)
def _set_grad(offsets, scores, utils, weights, k, eps, out):
    n = offsets.shape[0] - 1
    max_m = _max_instance_size(offsets)
    kp1 = k + 1
    vcap = min(max_m, _SCRATCH_VALUE_CAP)
    n_chunks = _scratch_chunks(max_m, kp1, vcap)
    ordbuf = np.empty((n_chunks, max_m), np.int64)
    ubuf = np.empty((n_chunks, max_m))
    wbuf = np.empty((n_chunks, max_m))
    valsbuf = np.empty((n_chunks, max_m))
    vidxbuf = np.empty((n_chunks, max_m), np.int64)
    prebuf = np.empty((n_chunks, max_m + 1, kp1))
    sufbuf = np.empty((n_chunks, max_m + 2, kp1))
    bvpbuf = np.empty((n_chunks, kp1, max_m + 2, vcap))
    for c in prange(n_chunks):
        lo = c * n // n_chunks
        hi = (c + 1) * n // n_chunks
        for idx in range(lo, hi):
            a = offsets[idx]
            b = offsets[idx + 1]
            _grad_core(
                scores[a:b], utils[a:b], weights[a:b], k, eps, out[a:b],
                ordbuf[c], ubuf[c], wbuf[c], valsbuf[c], vidxbuf[c],
                prebuf[c], sufbuf[c], bvpbuf[c],
            )


@njit(parallel=True, cache=True)
def _epoch_kernel(offsets, scores, utils, source_idx, w_src, k, eps, step, upd, sumsq):
    n = offsets.shape[0] - 1
    max_m = _max_instance_size(offsets)
    kp1 = k + 1
    vcap = min(max_m, _SCRATCH_VALUE_CAP)
    n_chunks = _scratch_chunks(max_m, kp1, vcap)
    ordbuf = np.empty((n_chunks, max_m), np.int64)
    ubuf = np.empty((n_chunks, max_m))
    wbuf = np.empty((n_chunks, max_m))
    wexp = np.empty((n_chunks, max_m))
    gbuf = np.empty((n_chunks, max_m))
    valsbuf = np.empty((n_chunks, max_m))
    vidxbuf = np.empty((n_chunks, max_m), np.int64)
    prebuf = np.empty((n_chunks, max_m + 1, kp1))
    sufbuf = np.empty((n_chunks, max_m + 2, kp1))
    bvpbuf = np.empty((n_chunks, kp1, max_m + 2, vcap))
    for c in prange(n_chunks):
        lo = c * n // n_chunks
        hi = (c + 1) * n // n_chunks
        for idx in range(lo, hi):
            a = offsets[idx]
            b = offsets[idx + 1]
            m = b - a
            wrow = wexp[c]
            for j in range(m):
                wrow[j] = w_src[source_idx[a + j]]
            g = gbuf[c]
            _grad_core(
                scores[a:b], utils[a:b], wrow[:m], k, eps, g[:m],
                ordbuf[c], ubuf[c], wbuf[c], valsbuf[c], vidxbuf[c],
                prebuf[c], sufbuf[c], bvpbuf[c],
            )
            acc = 0.0
            for j in range(m):
                gj = g[j]
                acc += gj * gj
                nw = wrow[j] + step * gj
                if nw < 0.0:
                    nw = 0.0
                elif nw > 1.0:
                    nw = 1.0
                upd[a + j] = nw
            sumsq[idx] = acc


@njit(parallel=True, cache=True)
def _chunked_bincount(source_idx, values, n_src):
    t = source_idx.shape[0]
    partial = np.zeros((_PROJECTION_CHUNKS, n_src))
    for c in prange(_PROJECTION_CHUNKS):
        lo = c * t // _PROJECTION_CHUNKS
        hi = (c + 1) * t // _PROJECTION_CHUNKS
        for i in range(lo, hi):
            partial[c, source_idx[i]] += values[i]
    out = np.zeros(n_src)
    for c in range(_PROJECTION_CHUNKS):
        for s in range(n_src):
            out[s] += partial[c, s]
    return out


def _validate(ps: PackedSet, k: int, eps: float):
    if ps.n_instances == 0:
        raise ValueError("evaluation set is empty")
    if np.any(np.diff(ps.offsets) == 0):
        raise ValueError("evaluation set contains an instance with no candidates")
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise ValueError("k must be a positive integer")
    if eps < 0.0 or eps > 1.0:
        raise ValueError("eps must lie in (0, 1]")


def set_gradients(ps: PackedSet, point_weights: np.ndarray, k: int, eps: float = 0.0) -> np.ndarray:
    """Raw per-occurrence gradient contributions G (no 1/N averaging applied).

    ``point_weights`` is flat over all occurrences; ``eps=0`` computes the
    exact values, ``eps`` in (0, 1] truncates at the per-instance boundary.
    """
    _validate(ps, k, eps)
    w = np.ascontiguousarray(point_weights, dtype=np.float64)
    if w.shape != ps.scores.shape:
        raise ValueError("point weights do not align with the packed set")
    if w.size and (w.min() < 0.0 or w.max() > 1.0):
        raise ValueError("weights must lie in [0, 1]")
    out = np.empty_like(ps.scores)
    _set_grad(ps.offsets, ps.scores, ps.utilities, w, int(k), float(eps), out)
    return out


def epoch_update(
    ps: PackedSet,
    w_src: np.ndarray,
    k: int,
    eps: float,
    learning_rate: float,
) -> tuple[np.ndarray, float]:
    """One fused ascent epoch: expand source weights, gradients, clamped step.

    Returns the updated per-occurrence weights (before the source projection)
    and the squared norm of the 1/N-averaged per-point gradient vector. The
    caller performs the per-source mean projection.
    """
    k = int(k)
    eps = float(eps)
    if not (0.0 < eps <= 1.0):
        raise ValueError("eps must lie in (0, 1]")
    _validate(ps, k, eps)
    n = ps.n_instances
    step = learning_rate / n
    upd = np.empty_like(ps.scores)
    sumsq = np.empty(n, dtype=np.float64)
    _epoch_kernel(
        ps.offsets, ps.scores, ps.utilities, ps.source_idx,
        np.ascontiguousarray(w_src, dtype=np.float64), k, eps, step, upd, sumsq,
    )
    grad_sq = float(sumsq.sum()) / (n * n)
    return upd, grad_sq


def source_counts(ps: PackedSet) -> np.ndarray:
    return np.bincount(ps.source_idx, minlength=len(ps.source_keys)).astype(np.float64)


def project_source_means(ps: PackedSet, point_values: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Per-source means of a per-occurrence vector (deterministic chunked sums)."""
    sums = _chunked_bincount(ps.source_idx, point_values, len(ps.source_keys))
    return sums / counts


def aggregate_by_point(ps: PackedSet, g_raw: np.ndarray) -> tuple[list[str], list[str], np.ndarray]:
    """Sum raw contributions by point id (instance order), then scale by 1/N.

    Returns point ids in first-appearance order, the source key of each
    point's first occurrence, and the averaged gradient values.
    """
    if ps.point_ids is None:
        raise ValueError("packed set carries no point ids")
    slot: dict[str, int] = {}
    ids: list[str] = []
    srcs: list[str] = []
    totals: list[float] = []
    for pos, pid in enumerate(ps.point_ids):
        j = slot.get(pid)
        if j is None:
            slot[pid] = len(ids)
            ids.append(pid)
            srcs.append(ps.source_keys[ps.source_idx[pos]])
            totals.append(float(g_raw[pos]))
        else:
            totals[j] += float(g_raw[pos])
    values = np.asarray(totals) * (1.0 / ps.n_instances)
    return ids, srcs, values


def available_threads() -> int:
    return int(numba.config.NUMBA_NUM_THREADS)


def set_threads(n: int) -> int:
    """Pin the kernel thread count, clamped to the launch-time maximum."""
    n = max(1, min(int(n), available_threads()))
    numba.set_num_threads(n)
    return n


def warm_up():
    """Force JIT compilation with a tiny instance (timing hygiene)."""
    offsets = np.array([0, 2], dtype=np.int64)
    scores = np.array([2.0, 1.0])
    utils = np.array([1.0, 0.0])
    w = np.array([0.5, 0.5])
    out = np.empty(2)
    _set_grad(offsets, scores, utils, w, 1, 0.0, out)
    _set_grad(offsets, scores, utils, w, 1, 1e-3, out)
    upd = np.empty(2)
    sumsq = np.empty(1)
    _epoch_kernel(offsets, scores, utils, np.array([0, 0], np.int32),
                  np.array([0.5]), 1, 1e-3, 1.0, upd, sumsq)
    _chunked_bincount(np.array([0, 0], np.int32), upd, 1)
