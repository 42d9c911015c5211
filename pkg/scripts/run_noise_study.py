#!/usr/bin/env python3
"""Noise-robustness study on a synthetic QA corpus.

Per seed: generate a corpus, clone it at five noise levels split into ten
rank-block sources each, learn source weights on the validation half, then
compare clean / dirty / refined accuracies on the test half.
"""

import argparse

import numpy as np

from rag_importance import refine_eval as rf
from rag_importance.trainer import TrainConfig, fit


def run_seed(seed, n_instances, per_instance, k):
    es = rf.synth_qa_set(n_instances, per_instance, seed)
    _, test = rf.split_set(es, seed)
    dirty = rf.inject_noise(es, seed=seed)
    dval, dtest = rf.split_set(dirty, seed)
    weights = fit(dval, TrainConfig(k=k)).weights

    clean = rf.evaluate(test, k).accuracy
    vanilla = rf.evaluate(dtest, k).accuracy
    threshold = rf.tune_threshold(dval, weights, k)
    pruned = rf.evaluate(rf.prune(dtest, weights, threshold), k).accuracy
    reweighted = rf.reweight_expected_accuracy(dtest, weights, k, seed=seed).accuracy
    loo_t, loo = rf.tune_loo_threshold(dval, k)
    dropped = [s for s, d in loo.items() if d < loo_t]
    loo_acc = rf.evaluate(rf.remove_sources(dtest, dropped), k).accuracy
    return clean, vanilla, loo_acc, reweighted, pruned


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=16)
    ap.add_argument("--instances", type=int, default=128)
    ap.add_argument("--per-instance", type=int, default=50)
    ap.add_argument("--k", type=int, default=10)
    args = ap.parse_args()

    rows = np.array(
        [run_seed(seed, args.instances, args.per_instance, args.k) for seed in range(args.seeds)]
    )
    mean = rows.mean(axis=0)
    print(f"averaged over {args.seeds} seeds (K={args.k}):")
    print(f"{'clean corpus':>24}  {mean[0]:.3f}")
    for label, value in zip(("vanilla", "+ loo", "+ reweight", "+ prune"), mean[1:]):
        print(f"{'dirty ' + label:>24}  {value:.3f}")


if __name__ == "__main__":
    main()
