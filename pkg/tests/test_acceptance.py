"""End-to-end acceptance checks, one test per criterion.

Each test exercises its criterion at the stated tolerance and records a
pass/fail line that the terminal summary reprints.
"""

import os
import subprocess
import sys
import time

import numpy as np
import pytest

from conftest import record
from helpers import make_instance, make_set, random_instance
from rag_importance import bench, kernels, oracle
from rag_importance import refine_eval as rf
from rag_importance.approx import approx_instance_gradients, find_boundary, boundary_index_cap
from rag_importance.corpus import EvaluationSet, save_evaluation_set
from rag_importance.exact_grad import gradient, instance_gradients
from rag_importance.grouped_exact import grouped_instance_gradients
from rag_importance.mcmc_grad import McmcConfig, additive_topk_utility, mcmc_gradient, sample_count
from rag_importance.trainer import TrainConfig, fit


def test_criterion_1_exact_gradient_oracle_equivalence():
    kernels.warm_up()
    rng = np.random.default_rng(1001)
    t0 = time.perf_counter()
    worst = 0.0
    for trial in range(100):
        n = int(rng.integers(1, 5))
        k = int(rng.integers(1, 5))
        instances, per_w = [], []
        for q in range(n):
            m = int(rng.integers(1, 13))
            instances.append(random_instance(rng, m, qid=f"t{trial}q{q}"))
            per_w.append(rng.random(m))
        es = EvaluationSet.from_instances(instances)
        got = gradient(es, per_w, k)
        expected: dict[str, float] = {}
        for inst, w in zip(instances, per_w):
            gb = oracle.brute_gradient(inst, w, k)
            for c, val in zip(inst.candidates, gb.tolist()):
                expected[c.point_id] = expected.get(c.point_id, 0.0) + val / n
        worst = max(
            worst,
            max(abs(expected[i] - v) for i, v in zip(got.ids, got.values.tolist())),
        )
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-9 and elapsed < 10.0
    record(1, ok, f"100 random sets, max |exact - brute| = {worst:.3e} (<= 1e-9), {elapsed:.2f}s (< 10s)")
    assert worst <= 1e-9
    assert elapsed < 10.0


def test_criterion_2_eps_approximation_bound():
    rng = np.random.default_rng(1002)
    ks = [1, 5, 10]
    worst_err = {1e-2: 0.0, 1e-3: 0.0}
    cap_ok = True
    for trial in range(50):
        k = ks[trial % 3]
        m = 200
        inst = random_instance(rng, m, qid=f"q{trial}")
        w = 0.2 + 0.8 * rng.random(m)
        g_exact = instance_gradients(inst, w, k)
        order = np.argsort(-np.array([c.rank_score for c in inst.candidates]), kind="stable")
        ranked_w = w[order]
        for eps in (1e-2, 1e-3):
            g_apx = approx_instance_gradients(inst, w, k, eps)
            worst_err[eps] = max(worst_err[eps], float(np.abs(g_exact - g_apx).max()))
            b = find_boundary(ranked_w, k, eps).b
            cap_ok = cap_ok and b <= boundary_index_cap(float(ranked_w.min()), k, eps)
    ok = worst_err[1e-2] <= 1e-2 and worst_err[1e-3] <= 1e-3 and cap_ok
    record(
        2,
        ok,
        f"max err {worst_err[1e-2]:.2e} (eps 1e-2), {worst_err[1e-3]:.2e} (eps 1e-3); "
        f"boundary index bound held: {cap_ok}",
    )
    assert worst_err[1e-2] <= 1e-2
    assert worst_err[1e-3] <= 1e-3
    assert cap_ok


def test_criterion_3_eps_delta_estimator():
    t_formula = sample_count(0.1, 0.05, 100)
    inst = make_instance([1.0, 0.0, 1.0, 0.0, 1.0], scores=[5.0, 4.0, 3.0, 2.0, 1.0])
    w = np.full(5, 0.5)
    es = make_set(inst)
    exact = gradient(es, [w], 2).values
    eps, delta = 0.2, 0.1
    util = additive_topk_utility(2)
    failures = total = 0
    for seed in range(200):
        cfg = McmcConfig(eps=eps, delta=delta, seed=seed, k=2)
        est = mcmc_gradient(es, [w], util, cfg).values
        failures += int((np.abs(est - exact) > eps).sum())
        total += est.size
    rate = failures / total
    ok = rate <= delta + 0.05 and t_formula == 1659
    record(
        3,
        ok,
        f"per-point failure rate {rate:.4f} (<= {delta + 0.05}); "
        f"T(0.1, 0.05, 100) = {t_formula} (= 1659)",
    )
    assert t_formula == 1659
    assert rate <= delta + 0.05


def test_criterion_4_grouped_exact_equals_enumeration():
    rng = np.random.default_rng(1004)
    worst = 0.0
    checked = 0
    fixtures = []
    # structured edges: singleton sources, one atomic source, equal utilities
    fixtures.append((make_instance([1.0, 0.0, 1.0], sources=["a", "b", "c"]), 1))
    fixtures.append((make_instance([1.0, 0.0, 1.0, 0.0], sources=["a"] * 4), 2))
    fixtures.append((make_instance([1.0] * 6, sources=["a", "a", "b", "b", "c", "c"]), 2))
    for trial in range(60):
        n_points = int(rng.integers(1, 17))
        n_sources = int(rng.integers(1, 9))
        groups = [f"s{int(g)}" for g in rng.integers(0, n_sources, n_points)]
        inst = make_instance(
            rng.integers(0, 2, n_points).astype(float).tolist(),
            scores=rng.random(n_points).tolist(),
            sources=groups,
            qid=f"q{trial}",
        )
        fixtures.append((inst, 1 + trial % 2))
    for inst, k in fixtures:
        names = list(dict.fromkeys(c.source_key for c in inst.candidates))
        weights = {s: float(rng.random()) for s in names}
        got = grouped_instance_gradients(inst, weights, k)
        want = oracle.brute_grouped_gradient(inst, weights, k)
        worst = max(worst, max(abs(got[s] - want[s]) for s in names))
        checked += 1
    ok = worst <= 1e-9
    record(4, ok, f"{checked} grouped fixtures, max |dp - enumeration| = {worst:.3e} (<= 1e-9)")
    assert worst <= 1e-9


def test_criterion_5_projected_gd_separation():
    instances = []
    for q in range(6):
        utils = [0.0] * 12 + [1.0] * 12
        sources = ["wrong"] * 12 + ["good"] * 12
        instances.append(make_instance(utils, sources=sources, qid=f"q{q}"))
    es = EvaluationSet.from_instances(instances)
    box_ok = True

    def check(it, w_src):
        nonlocal box_ok
        box_ok = box_ok and bool(np.all(w_src >= 0.0) and np.all(w_src <= 1.0))

    result = fit(es, TrainConfig(), callback=check)  # protocol defaults: K=10, 50 iterations, learning rate 500
    gap = result.weights["good"] - result.weights["wrong"]
    ok = gap >= 0.8 and box_ok
    record(
        5,
        ok,
        f"final weights good={result.weights['good']:.3f} wrong={result.weights['wrong']:.3f}, "
        f"separation {gap:.3f} (>= 0.8); projection box held: {box_ok}",
    )
    assert box_ok
    assert gap >= 0.8


def test_criterion_6_noise_recovery():
    k = 10
    clean_accs, dirty_accs, pruned_accs = [], [], []
    for seed in range(16):
        es = rf.synth_qa_set(128, 50, seed)
        _, test = rf.split_set(es, seed)
        dirty = rf.inject_noise(es, seed=seed)
        dval, dtest = rf.split_set(dirty, seed)
        clean_accs.append(rf.evaluate(test, k).accuracy)
        dirty_accs.append(rf.evaluate(dtest, k).accuracy)
        weights = fit(dval, TrainConfig(k=k)).weights
        threshold = rf.tune_threshold(dval, weights, k)
        pruned_accs.append(rf.evaluate(rf.prune(dtest, weights, threshold), k).accuracy)
    clean, dirty, pruned = map(lambda a: float(np.mean(a)), (clean_accs, dirty_accs, pruned_accs))
    ok = pruned >= dirty and abs(pruned - clean) <= 0.02
    record(
        6,
        ok,
        f"16 seeds: clean {clean:.4f}, dirty {dirty:.4f}, pruned {pruned:.4f}; "
        f"pruned >= dirty and |pruned - clean| = {abs(pruned - clean):.4f} (<= 0.02)",
    )
    assert pruned >= dirty
    assert abs(pruned - clean) <= 0.02


# 50k, 500k, 5M, 10M points; constant per-instance depth so cost is linear in M
SIZES = [(500, 100), (5000, 100), (50000, 100), (100000, 100)]


@pytest.fixture(scope="module")
def bench_report():
    return bench.run_benchmark(SIZES, threads=[1, 4], k=10, eps=1e-3, repeats=3, seed=7)


def test_criterion_7_epoch_runtime_and_linearity(bench_report):
    big_4t = [r for r in bench_report.rows if r.corpus_size == 10_000_000 and r.threads == 4]
    epoch_s = big_4t[0].mean_ms / 1e3
    r2 = bench_report.fits[4][1]
    ok = epoch_s <= 10.0 and r2 >= 0.95
    record(
        7,
        ok,
        f"epoch at M=10M with 4 threads: {epoch_s:.2f}s (<= 10s); "
        f"linear fit over {{50k, 500k, 5M, 10M}}: R^2 = {r2:.4f} (>= 0.95)",
    )
    assert epoch_s <= 10.0
    assert r2 >= 0.95


def test_criterion_7_thread_speedup(bench_report):
    by_threads = {
        t: [r for r in bench_report.rows if r.corpus_size == 10_000_000 and r.threads == t][0]
        for t in (1, 4)
    }
    speedup = by_threads[1].mean_ms / by_threads[4].mean_ms
    cores = os.cpu_count() or 1
    ok = speedup >= 2.0
    record(
        7,
        ok,
        f"1 -> 4 thread speedup at M=10M: {speedup:.2f}x (>= 2.0x required; host has {cores} cores)",
    )
    if not ok and cores < 4:
        pytest.xfail(
            f"measured {speedup:.2f}x on a {cores}-core host; the criterion "
            "preconditions a >= 4-core machine"
        )
    assert speedup >= 2.0


def _run_cli(args, tag):
    env = dict(os.environ)
    env.pop("NUMBA_NUM_THREADS", None)  # let the CLI manage its own thread cap
    res = subprocess.run(
        [sys.executable, "-m", "rag_importance"] + args,
        capture_output=True,
        text=True,
        env=env,
        timeout=600,
    )
    assert res.returncode == 0, f"{tag}: {res.stderr}"
    return res


def test_criterion_8_cli_determinism(tmp_path):
    instances = []
    rng = np.random.default_rng(1008)
    for q in range(6):
        answers = ["wrong1", "wrong2", "x", "x", "x"]
        instances.append(
            make_instance(
                [None] * 5,
                answers=answers,
                gold="x",
                sources=[f"s{int(v)}" for v in rng.integers(0, 3, 5)],
                scores=[5.0, 4.0, 3.0, 2.0, 1.0],
                qid=f"q{q}",
            )
        )
    src = tmp_path / "eval.jsonl"
    save_evaluation_set(EvaluationSet.from_instances(instances), src)

    digests = {}
    for sub, extra in (("fit", ["--iters", "10", "--lr", "50"]), ("grad", ["--eps", "1e-2"])):
        outs = []
        for run, threads in (("r1", "1"), ("r2", "4"), ("r3", "2"), ("r4", "1")):
            out = tmp_path / f"{sub}_{run}.jsonl"
            _run_cli(
                [sub, "--input", str(src), "--k", "2", "--seed", "11",
                 "--threads", threads, "--out", str(out)] + extra,
                f"{sub}/{run}",
            )
            outs.append(out.read_bytes())
        digests[sub] = len(set(outs))
    ok = digests == {"fit": 1, "grad": 1}
    record(8, ok, f"fit/grad outputs byte-identical across --threads 1,4,2 and reruns: {ok}")
    assert ok
