"""Command-line pipeline: load, fit, refine, evaluate, benchmark.

Subcommands
    grad    per-point gradients (exact, truncated, sampled, or brute-force)
    fit     learn source weights by projected gradient ascent
    refine  tune on a validation split, refine, evaluate on the test split
    eval    plain majority-vote accuracy (optionally after prune/reweight)
    noise   inject level-tagged noise copies and rank-block sources
    bench   epoch-runtime scaling report (CSV)
    oracle  brute-force gradients for small files

Exit codes: 0 success, 2 unknown flag / bad usage, 3 I/O failure,
4 validation failure. Every randomized path takes ``--seed``; ``--threads``
(default from ``RAG_IMPORTANCE_THREADS``) changes wall-clock only, never any
output byte.

Modules that pull in the JIT engine are imported lazily so the thread cap
can be raised before the compiler fixes its thread pool.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .corpus import (
    CorpusFormatError,
    load_evaluation_set,
    load_source_weights,
    save_evaluation_set,
    save_source_weights,
)
from .refine_eval import (
    DEFAULT_NOISE_LEVELS,
    RefinePlan,
    apply_refinement,
    evaluate,
    inject_noise,
    loo_scores,
    prune,
    reweight_expected_accuracy,
    split_set,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_VALIDATION = 4

THREADS_ENV = "RAG_IMPORTANCE_THREADS"


def _default_threads() -> int | None:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return None
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None


def _setup_threads(requested: int | None) -> int:
    """Raise the launch-time thread cap if possible, then pin the count."""
    want = requested if requested is not None else _default_threads()
    if want is not None and "numba" not in sys.modules:
        os.environ["NUMBA_NUM_THREADS"] = str(want)
    from . import kernels

    if want is None:
        return kernels.available_threads()
    return kernels.set_threads(want)


def _int_list(raw: str) -> list[int]:
    return [int(x) for x in raw.split(",") if x.strip()]


def _float_list(raw: str) -> list[float]:
    return [float(x) for x in raw.split(",") if x.strip()]


def _size_list(raw: str) -> list[tuple[int, int]]:
    sizes = []
    for part in raw.split(","):
        part = part.strip()
        if not part:
            continue
        n, _, b = part.partition("x")
        sizes.append((int(n), int(b)))
    return sizes


def _write_lines(records, path):
    text = "".join(json.dumps(r, ensure_ascii=False, separators=(",", ":")) + "\n" for r in records)
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rag-importance", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, k_default=10):
        p.add_argument("--input", required=True, help="evaluation-set file (one record per line)")
        p.add_argument("--k", type=int, default=k_default, help="top-K size")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--out", default=None, help="output file (default: stdout)")

    p = sub.add_parser("grad", help="per-point gradients")
    common(p)
    p.add_argument("--weights", default=None, help="weights file (default: uniform 0.5)")
    p.add_argument("--eps", type=float, default=None, help="truncation bound (omit for exact)")
    p.add_argument("--delta", type=float, default=None, help="enable the sampled estimator")
    p.add_argument("--utility", choices=("additive", "majority"), default="additive")
    p.add_argument("--oracle", action="store_true", help="brute-force enumeration (small files)")

    p = sub.add_parser("fit", help="learn source weights")
    common(p)
    p.add_argument("--iters", type=int, default=50)
    p.add_argument("--lr", type=float, default=500.0)
    p.add_argument("--init", type=float, default=0.5)
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--telemetry", default=None, help="write per-iteration records here")

    p = sub.add_parser("refine", help="tune, refine, evaluate")
    common(p)
    p.add_argument("--weights", default=None, help="learned weights file")
    p.add_argument("--mode", choices=("prune", "reweight", "loo-prune"), default="prune")
    p.add_argument("--threshold", type=float, default=None, help="fixed threshold (default: tune)")
    p.add_argument("--samples", type=int, default=32)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--test-input", default=None, help="separate test file (skip the split)")
    p.add_argument("--csv", default=None, help="write per-source weight/loo CSV here")

    p = sub.add_parser("eval", help="majority-vote accuracy")
    common(p)
    p.add_argument("--weights", default=None)
    p.add_argument("--mode", choices=("none", "prune", "reweight"), default="none")
    p.add_argument("--threshold", type=float, default=0.0)
    p.add_argument("--samples", type=int, default=32)

    p = sub.add_parser("noise", help="inject noise copies")
    common(p)
    p.add_argument("--noise-levels", type=_float_list, default=list(DEFAULT_NOISE_LEVELS))
    p.add_argument("--sources-per-level", type=int, default=10)

    p = sub.add_parser("bench", help="epoch-runtime scaling report")
    p.add_argument("--sizes", type=_size_list, default=[(1000, 50), (10000, 50)],
                   help="comma list of NxB sizes, e.g. 1000x50,10000x50")
    p.add_argument("--threads", type=_int_list, default=None, help="comma list, e.g. 1,2,4")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--repeats", type=int, default=7)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mem-cap-gib", type=float, default=8.0)
    p.add_argument("--out", default=None)

    p = sub.add_parser("oracle", help="brute-force gradients (small files)")
    common(p)
    p.add_argument("--weights", default=None)

    return parser


def _load_weight_map(args, es):
    if args.weights is not None:
        return load_source_weights(args.weights)
    return {s: 0.5 for s in es.sources}


def _gradient_records(ids, sources, values):
    return [
        {"id": i, "source": s, "gradient": float(v)}
        for i, s, v in zip(ids, sources, values)
    ]


def _brute_records(es, weight_map, k):
    from . import oracle
    from .corpus import ensure_utilities, expand_source_weights

    es = ensure_utilities(es)
    per_inst = expand_source_weights(es, weight_map)
    slot: dict[str, int] = {}
    ids: list[str] = []
    sources: list[str] = []
    totals: list[float] = []
    for inst, w in zip(es.instances, per_inst):
        g = oracle.brute_gradient(inst, w, k)
        for c, val in zip(inst.candidates, g.tolist()):
            j = slot.get(c.point_id)
            if j is None:
                slot[c.point_id] = len(ids)
                ids.append(c.point_id)
                sources.append(c.source_key)
                totals.append(val)
            else:
                totals[j] += val
    n = len(es.instances)
    return _gradient_records(ids, sources, [t / n for t in totals])


def _cmd_grad(args) -> int:
    _setup_threads(args.threads)
    es = load_evaluation_set(args.input)
    weight_map = _load_weight_map(args, es)
    if args.oracle:
        records = _brute_records(es, weight_map, args.k)
    elif args.delta is not None:
        from .corpus import ensure_utilities
        from .mcmc_grad import (
            McmcConfig,
            additive_topk_utility,
            majority_vote_utility,
            mcmc_gradient,
        )

        eps = args.eps if args.eps is not None else 1e-1
        cfg = McmcConfig(eps=eps, delta=args.delta, seed=args.seed, k=args.k)
        util = (
            additive_topk_utility(args.k)
            if args.utility == "additive"
            else majority_vote_utility(args.k)
        )
        es = ensure_utilities(es) if args.utility == "additive" else es
        vec = mcmc_gradient(es, weight_map, util, cfg)
        records = _gradient_records(vec.ids, vec.sources, vec.values)
    else:
        from .corpus import ensure_utilities
        from .exact_grad import gradient

        es = ensure_utilities(es)
        eps = 0.0 if args.eps is None else args.eps
        vec = gradient(es, weight_map, args.k, eps=eps)
        records = _gradient_records(vec.ids, vec.sources, vec.values)
    _write_lines(records, args.out)
    return EXIT_OK


def _cmd_fit(args) -> int:
    _setup_threads(args.threads)
    from .trainer import TrainConfig, fit

    es = load_evaluation_set(args.input)
    cfg = TrainConfig(
        k=args.k,
        iterations=args.iters,
        learning_rate=args.lr,
        init_weight=args.init,
        eps=args.eps,
        seed=args.seed,
    )
    result = fit(es, cfg)
    if args.telemetry is not None:
        _write_lines(result.telemetry, args.telemetry)
    if args.out is None:
        _write_lines(
            [{"source": s, "weight": w} for s, w in result.weights.items()], None
        )
    else:
        save_source_weights(result.weights.as_dict(), args.out, order=result.weights.sources)
    return EXIT_OK


def _cmd_refine(args) -> int:
    _setup_threads(args.threads)
    es = load_evaluation_set(args.input)
    if args.test_input is not None:
        val_es, test_es = es, load_evaluation_set(args.test_input)
    else:
        val_es, test_es = split_set(es, args.split_seed)
    weight_map = (
        load_source_weights(args.weights) if args.weights is not None else {}
    )
    if args.mode in ("prune", "reweight") and not weight_map:
        raise ValueError(f"--weights is required for mode {args.mode!r}")
    plan = RefinePlan(
        mode=args.mode, threshold=args.threshold, samples=args.samples, seed=args.seed
    )
    outcome = apply_refinement(val_es, test_es, weight_map, plan, args.k)
    table = [
        ("mode", outcome.mode),
        ("threshold", "-" if outcome.threshold is None else f"{outcome.threshold:.6g}"),
        ("test accuracy (vanilla)", f"{outcome.vanilla_test.accuracy:.4f}"),
        (f"test accuracy (+{outcome.mode})", f"{outcome.test_report.accuracy:.4f}"),
        (f"val accuracy (+{outcome.mode})", f"{outcome.val_report.accuracy:.4f}"),
    ]
    width = max(len(k) for k, _ in table)
    for key, val in table:
        print(f"{key:<{width}}  {val}")
    records = [
        {"split": "test", "mode": "vanilla", **outcome.vanilla_test.as_dict()},
        {"split": "test", "mode": outcome.mode, "threshold": outcome.threshold,
         **outcome.test_report.as_dict()},
        {"split": "val", "mode": outcome.mode, "threshold": outcome.threshold,
         **outcome.val_report.as_dict()},
    ]
    if args.out is not None:
        _write_lines(records, args.out)
    if args.csv is not None:
        deltas = dict(outcome.loo) if outcome.loo is not None else loo_scores(val_es, args.k)
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write("source,weight,loo_delta\n")
            for source in sorted(set(weight_map) | set(deltas)):
                w = weight_map.get(source, "")
                d = deltas.get(source, "")
                fh.write(f"{source},{w},{d}\n")
    return EXIT_OK


def _cmd_eval(args) -> int:
    _setup_threads(args.threads)
    es = load_evaluation_set(args.input)
    if args.mode == "none":
        report = evaluate(es, args.k)
    else:
        if args.weights is None:
            raise ValueError(f"--weights is required for mode {args.mode!r}")
        weight_map = load_source_weights(args.weights)
        if args.mode == "prune":
            report = evaluate(prune(es, weight_map, args.threshold), args.k)
        else:
            report = reweight_expected_accuracy(
                es, weight_map, args.k, samples=args.samples, seed=args.seed
            )
    print(f"accuracy  {report.accuracy:.4f}  ({report.correct:g}/{report.n_evaluated})")
    if args.out is not None:
        _write_lines([{"mode": args.mode, **report.as_dict()}], args.out)
    return EXIT_OK


def _cmd_noise(args) -> int:
    es = load_evaluation_set(args.input)
    dirty = inject_noise(
        es, levels=args.noise_levels, sources_per_level=args.sources_per_level, seed=args.seed
    )
    if args.out is None:
        raise ValueError("noise requires --out")
    save_evaluation_set(dirty, args.out)
    return EXIT_OK


def _cmd_bench(args) -> int:
    threads = args.threads
    if threads is None:
        env = _default_threads()
        threads = [env] if env is not None else [1]
    _setup_threads(max(threads))
    from .bench import run_benchmark

    report = run_benchmark(
        args.sizes,
        threads,
        args.k,
        eps=args.eps,
        repeats=args.repeats,
        seed=args.seed,
        mem_cap_bytes=int(args.mem_cap_gib * (1 << 30)),
    )
    csv_text = report.to_csv()
    if args.out is None:
        sys.stdout.write(csv_text)
    else:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(csv_text)
    return EXIT_OK


def _cmd_oracle(args) -> int:
    es = load_evaluation_set(args.input)
    weight_map = _load_weight_map(args, es)
    records = _brute_records(es, weight_map, args.k)
    _write_lines(records, args.out)
    return EXIT_OK


_COMMANDS = {
    "grad": _cmd_grad,
    "fit": _cmd_fit,
    "refine": _cmd_refine,
    "eval": _cmd_eval,
    "noise": _cmd_noise,
    "bench": _cmd_bench,
    "oracle": _cmd_oracle,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (CorpusFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
