import itertools

import numpy as np
import pytest

from helpers import make_instance, random_instance
from rag_importance import oracle


def test_empty_subset_has_zero_utility():
    inst = make_instance([1.0, 1.0, 0.0])
    assert oracle.brute_utility(inst, [], 2) == 0.0


def test_full_topk_of_correct_points_is_one():
    inst = make_instance([1.0, 1.0, 1.0, 0.0])
    assert oracle.brute_utility(inst, [0, 1, 2], 3) == 1.0


def test_small_subset_still_divides_by_k():
    # two members with utilities {1, 0} at K=3: (1 + 0) / 3
    inst = make_instance([1.0, 0.0, 1.0])
    assert oracle.brute_utility(inst, [0, 1], 3) == pytest.approx(1.0 / 3.0)


def test_subset_index_out_of_range():
    inst = make_instance([1.0])
    with pytest.raises(IndexError):
        oracle.brute_utility(inst, [3], 1)


def test_multilinear_at_vertices_equals_subset_utility():
    rng = np.random.default_rng(3)
    inst = make_instance(rng.integers(0, 2, 5).astype(float).tolist())
    for bits in itertools.product([0.0, 1.0], repeat=5):
        w = np.array(bits)
        members = [j for j in range(5) if bits[j] == 1.0]
        # vertex weights indicate the subset in *ranked* positions here because
        # the fixture scores are descending in input order
        assert oracle.brute_multilinear(inst, w, 2) == pytest.approx(
            oracle.brute_utility(inst, members, 2), abs=1e-12
        )


def test_multilinear_mixed_weights_example():
    inst = make_instance([1.0, 0.0], scores=[2.0, 1.0])
    assert oracle.brute_multilinear(inst, [0.5, 0.5], 1) == pytest.approx(0.5)


def test_multilinear_zero_weights_is_zero():
    inst = make_instance([1.0, 1.0])
    assert oracle.brute_multilinear(inst, [0.0, 0.0], 1) == 0.0


def test_gradient_single_point_is_its_utility():
    inst = make_instance([0.7])
    g = oracle.brute_gradient(inst, [0.3], 1)
    assert g[0] == pytest.approx(0.7)


def test_gradient_matches_centered_difference_of_multilinear():
    rng = np.random.default_rng(11)
    for _ in range(10):
        inst = random_instance(rng, max_m=8, binary=False)
        m = len(inst.candidates)
        k = int(rng.integers(1, 4))
        w = 0.2 + 0.6 * rng.random(m)
        g = oracle.brute_gradient(inst, w, k)
        h = 0.05
        for i in range(m):
            up, dn = w.copy(), w.copy()
            up[i] += h
            dn[i] -= h
            fd = (oracle.brute_multilinear(inst, up, k) - oracle.brute_multilinear(inst, dn, k)) / (2 * h)
            # the extension is linear in each coordinate, so the centered
            # difference is exact up to float error
            assert g[i] == pytest.approx(fd, abs=1e-10)


def test_gradient_does_not_depend_on_own_weight():
    rng = np.random.default_rng(5)
    inst = random_instance(rng, 6)
    w = rng.random(6)
    g1 = oracle.brute_gradient(inst, w, 2)
    w2 = w.copy()
    w2[3] = 0.99
    g2 = oracle.brute_gradient(inst, w2, 2)
    assert g1[3] == pytest.approx(g2[3], abs=1e-12)


def test_point_cap_enforced():
    inst = make_instance([1.0] * 6)
    with pytest.raises(ValueError, match="cap"):
        oracle.brute_gradient(inst, [0.5] * 6, 1, limits=oracle.OracleLimits(max_points=5))


def test_source_cap_enforced():
    inst = make_instance([1.0] * 6, sources=[f"s{j}" for j in range(6)])
    weights = {f"s{j}": 0.5 for j in range(6)}
    with pytest.raises(ValueError, match="cap"):
        oracle.brute_grouped_gradient(inst, weights, 1, limits=oracle.OracleLimits(max_sources=5))


def test_grouped_identity_grouping_matches_pointwise():
    rng = np.random.default_rng(9)
    inst = random_instance(rng, 6, n_sources=6)
    # one point per source
    inst = make_instance(
        [c.utility for c in inst.candidates],
        scores=[c.rank_score for c in inst.candidates],
        sources=[f"g{j}" for j in range(6)],
    )
    w = rng.random(6)
    weights = {f"g{j}": float(w[j]) for j in range(6)}
    per_source = oracle.brute_grouped_gradient(inst, weights, 2)
    per_point = oracle.brute_gradient(inst, w, 2)
    for j in range(6):
        assert per_source[f"g{j}"] == pytest.approx(per_point[j], abs=1e-12)
