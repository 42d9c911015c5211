import json
import os
import subprocess
import sys

import pytest

from helpers import make_instance
from rag_importance.corpus import EvaluationSet, save_evaluation_set

CLI = [sys.executable, "-m", "rag_importance"]


def run_cli(*args, env_extra=None, timeout=600):
    env = dict(os.environ)
    if env_extra:
        env.update(env_extra)
    return subprocess.run(
        CLI + list(args), capture_output=True, text=True, env=env, timeout=timeout
    )


def qa_instance(answers, gold="x", qid="q0", sources=None, scores=None):
    return make_instance(
        [None] * len(answers), answers=answers, gold=gold, qid=qid, sources=sources, scores=scores
    )


@pytest.fixture(scope="module")
def fixture_file(tmp_path_factory):
    # "bad" outranks "good"; pruning bad fixes every query
    tmp = tmp_path_factory.mktemp("cli")
    instances = []
    for q in range(8):
        instances.append(
            qa_instance(
                ["wrong", "wrong", "x", "x"],
                qid=f"q{q}",
                sources=["bad", "bad", "good", "good"],
                scores=[4.0, 3.0, 2.0, 1.0],
            )
        )
    path = tmp / "eval.jsonl"
    save_evaluation_set(EvaluationSet.from_instances(instances), path)
    return path


def test_fit_writes_weights_and_exits_zero(fixture_file, tmp_path):
    out = tmp_path / "weights.jsonl"
    telemetry = tmp_path / "telemetry.jsonl"
    res = run_cli(
        "fit", "--input", str(fixture_file), "--k", "1", "--iters", "20",
        "--out", str(out), "--telemetry", str(telemetry),
    )
    assert res.returncode == 0, res.stderr
    weights = {json.loads(l)["source"]: json.loads(l)["weight"] for l in out.read_text().splitlines()}
    assert weights["good"] > 0.9 and weights["bad"] < 0.1
    assert len(telemetry.read_text().splitlines()) == 20


def test_fit_defaults_match_protocol(fixture_file, tmp_path):
    # bare fit runs K=10 (capped), 50 iterations, lr 500, init 0.5, eps 1e-3
    out = tmp_path / "weights.jsonl"
    res = run_cli("fit", "--input", str(fixture_file), "--out", str(out))
    assert res.returncode == 0, res.stderr
    assert len(out.read_text().splitlines()) == 2


def test_grad_exact_and_oracle_agree(fixture_file, tmp_path):
    exact_out = tmp_path / "g1.jsonl"
    oracle_out = tmp_path / "g2.jsonl"
    res1 = run_cli("grad", "--input", str(fixture_file), "--k", "1", "--out", str(exact_out))
    res2 = run_cli("grad", "--input", str(fixture_file), "--k", "1", "--oracle", "--out", str(oracle_out))
    assert res1.returncode == 0 and res2.returncode == 0
    g1 = {json.loads(l)["id"]: json.loads(l)["gradient"] for l in exact_out.read_text().splitlines()}
    g2 = {json.loads(l)["id"]: json.loads(l)["gradient"] for l in oracle_out.read_text().splitlines()}
    assert g1.keys() == g2.keys()
    for pid in g1:
        assert g1[pid] == pytest.approx(g2[pid], abs=1e-9)


def test_grad_oracle_subcommand(fixture_file, tmp_path):
    out = tmp_path / "g.jsonl"
    res = run_cli("oracle", "--input", str(fixture_file), "--k", "1", "--out", str(out))
    assert res.returncode == 0
    assert len(out.read_text().splitlines()) == 32


def test_grad_mcmc_estimator(fixture_file, tmp_path):
    out = tmp_path / "g.jsonl"
    res = run_cli(
        "grad", "--input", str(fixture_file), "--k", "1",
        "--eps", "0.3", "--delta", "0.2", "--seed", "3", "--out", str(out),
    )
    assert res.returncode == 0, res.stderr
    rows = [json.loads(l) for l in out.read_text().splitlines()]
    assert all(abs(r["gradient"]) <= 1.0 for r in rows)


def test_refine_prune_pipeline(fixture_file, tmp_path):
    weights = tmp_path / "weights.jsonl"
    run_cli("fit", "--input", str(fixture_file), "--k", "1", "--iters", "20", "--out", str(weights))
    report = tmp_path / "report.jsonl"
    res = run_cli(
        "refine", "--input", str(fixture_file), "--weights", str(weights),
        "--mode", "prune", "--k", "1", "--split-seed", "7", "--out", str(report),
    )
    assert res.returncode == 0, res.stderr
    records = [json.loads(l) for l in report.read_text().splitlines()]
    by_mode = {(r["split"], r["mode"]): r for r in records}
    assert by_mode[("test", "prune")]["accuracy"] >= by_mode[("test", "vanilla")]["accuracy"]
    assert by_mode[("val", "prune")]["accuracy"] == 1.0
    assert "accuracy" in res.stdout or "test accuracy" in res.stdout


def test_refine_loo_and_csv(fixture_file, tmp_path):
    weights = tmp_path / "weights.jsonl"
    run_cli("fit", "--input", str(fixture_file), "--k", "1", "--iters", "20", "--out", str(weights))
    csv_path = tmp_path / "sources.csv"
    res = run_cli(
        "refine", "--input", str(fixture_file), "--weights", str(weights),
        "--mode", "loo-prune", "--k", "1", "--csv", str(csv_path),
    )
    assert res.returncode == 0, res.stderr
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "source,weight,loo_delta"
    assert len(lines) == 3


def test_eval_modes(fixture_file, tmp_path):
    res = run_cli("eval", "--input", str(fixture_file), "--k", "1")
    assert res.returncode == 0
    assert "accuracy" in res.stdout
    weights = tmp_path / "w.jsonl"
    weights.write_text('{"source":"bad","weight":0.0}\n{"source":"good","weight":1.0}\n')
    res = run_cli(
        "eval", "--input", str(fixture_file), "--k", "1",
        "--weights", str(weights), "--mode", "prune", "--threshold", "0.5",
    )
    assert res.returncode == 0
    assert "1.0000" in res.stdout
    res = run_cli(
        "eval", "--input", str(fixture_file), "--k", "1",
        "--weights", str(weights), "--mode", "reweight", "--samples", "4",
    )
    assert res.returncode == 0


def test_noise_subcommand_roundtrip(fixture_file, tmp_path):
    out = tmp_path / "dirty.jsonl"
    res = run_cli(
        "noise", "--input", str(fixture_file), "--out", str(out),
        "--noise-levels", "0,0.5", "--sources-per-level", "2", "--seed", "5",
    )
    assert res.returncode == 0, res.stderr
    from rag_importance.corpus import load_evaluation_set

    dirty = load_evaluation_set(out)
    assert len(dirty.sources) == 4
    assert all(len(i.candidates) == 8 for i in dirty.instances)


def test_bench_subcommand_csv(tmp_path):
    out = tmp_path / "bench.csv"
    res = run_cli(
        "bench", "--sizes", "50x10,100x10", "--threads", "1", "--repeats", "2",
        "--out", str(out),
    )
    assert res.returncode == 0, res.stderr
    lines = out.read_text().strip().splitlines()
    assert lines[1] == "M,N,b,threads,mean_ms,min_ms,r2_slope"
    assert len(lines) == 4


def test_unknown_flag_exits_two(fixture_file):
    res = run_cli("grad", "--input", str(fixture_file), "--nonsense")
    assert res.returncode == 2


def test_missing_input_exits_three(tmp_path):
    res = run_cli("grad", "--input", str(tmp_path / "missing.jsonl"))
    assert res.returncode == 3
    assert "error" in res.stderr


def test_malformed_input_exits_four(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text("{broken\n")
    res = run_cli("grad", "--input", str(path))
    assert res.returncode == 4
    assert "line 1" in res.stderr


def test_threads_env_var_default(fixture_file, tmp_path):
    out_env = tmp_path / "w_env.jsonl"
    out_flag = tmp_path / "w_flag.jsonl"
    res = run_cli(
        "fit", "--input", str(fixture_file), "--k", "1", "--iters", "5", "--out", str(out_env),
        env_extra={"RAG_IMPORTANCE_THREADS": "2"},
    )
    assert res.returncode == 0, res.stderr
    res = run_cli(
        "fit", "--input", str(fixture_file), "--k", "1", "--iters", "5",
        "--threads", "1", "--out", str(out_flag),
    )
    assert res.returncode == 0, res.stderr
    assert out_env.read_bytes() == out_flag.read_bytes()


def test_identical_invocations_are_byte_identical(fixture_file, tmp_path):
    outs = []
    for name, threads in (("a", "1"), ("b", "2"), ("c", "1")):
        out = tmp_path / f"w_{name}.jsonl"
        res = run_cli(
            "fit", "--input", str(fixture_file), "--k", "1", "--iters", "10",
            "--seed", "3", "--threads", threads, "--out", str(out),
        )
        assert res.returncode == 0, res.stderr
        outs.append(out.read_bytes())
    assert outs[0] == outs[1] == outs[2]
