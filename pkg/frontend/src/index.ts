/**
 * TypeScript frontend for the rag-importance core.
 *
 * The core ships as a Python package with a CLI; this wrapper contains zero
 * algorithmic logic and drives it strictly through that CLI and its
 * line-delimited file formats. Results are parsed from the same output files
 * the CLI writes, so anything returned here is byte-for-byte what a direct
 * invocation produces, and core failures surface as {@link CliError}
 * exceptions carrying the CLI's exit code and stderr.
 */

import { execFileSync } from "node:child_process";
import { mkdtempSync, readFileSync, rmSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

export interface CandidateRecord {
  id: string;
  source: string;
  score: number;
  answer?: string;
  utility?: number;
}

export interface EvaluationRecord {
  query_id: string;
  gold?: string;
  candidates: CandidateRecord[];
}

export interface RunOptions {
  /** Python interpreter that has the core installed (default "python3"). */
  python?: string;
  /** Kernel thread count; never changes any output byte. */
  threads?: number;
}

export interface FitConfig {
  k?: number;
  iters?: number;
  lr?: number;
  init?: number;
  eps?: number;
  seed?: number;
  /** Persist the learned-weights file here instead of a temp location. */
  out?: string;
}

export interface GradientConfig {
  k?: number;
  /** Truncation bound; omit for the exact path. */
  eps?: number;
  /** Enables the sampled (eps, delta) estimator. */
  delta?: number;
  utility?: "additive" | "majority";
  seed?: number;
  weights?: WeightsInput;
  out?: string;
}

export interface GradientRow {
  id: string;
  source: string;
  gradient: number;
}

export interface AccuracyReport {
  mode: string;
  accuracy: number;
  n: number;
  correct: number;
}

export type WeightsInput = string | Map<string, number> | Record<string, number>;

export class CliError extends Error {
  readonly exitCode: number;
  readonly stderr: string;

  constructor(message: string, exitCode: number, stderr: string) {
    super(message);
    this.name = "CliError";
    this.exitCode = exitCode;
    this.stderr = stderr;
  }
}

function runCli(args: string[], opts: RunOptions = {}): string {
  const python = opts.python ?? "python3";
  const full = ["-m", "rag_importance", ...args];
  if (opts.threads !== undefined) {
    full.push("--threads", String(opts.threads));
  }
  try {
    return execFileSync(python, full, { encoding: "utf-8" });
  } catch (err) {
    const e = err as { status?: number | null; stderr?: string | Buffer; message: string };
    const stderr = (e.stderr ?? "").toString().trim();
    const code = e.status ?? -1;
    throw new CliError(stderr === "" ? e.message : stderr, code, stderr);
  }
}

/** Parse a line-delimited evaluation-set file into records. */
export function load(path: string): EvaluationRecord[] {
  const text = readFileSync(path, "utf-8");
  return text
    .split("\n")
    .filter((line) => line.trim() !== "")
    .map((line) => JSON.parse(line) as EvaluationRecord);
}

/** Write records in the canonical line-delimited form. */
export function save(records: EvaluationRecord[], path: string): void {
  writeFileSync(path, records.map((r) => JSON.stringify(r)).join("\n") + "\n");
}

function withWorkdir<T>(body: (dir: string) => T): T {
  const dir = mkdtempSync(join(tmpdir(), "rag-importance-"));
  try {
    return body(dir);
  } finally {
    rmSync(dir, { recursive: true, force: true });
  }
}

function materializeInput(input: string | EvaluationRecord[], dir: string): string {
  if (typeof input === "string") {
    return input;
  }
  const path = join(dir, "eval.jsonl");
  save(input, path);
  return path;
}

function materializeWeights(weights: WeightsInput, dir: string): string {
  if (typeof weights === "string") {
    return weights;
  }
  const entries = weights instanceof Map ? [...weights.entries()] : Object.entries(weights);
  const path = join(dir, "weights.jsonl");
  writeFileSync(
    path,
    entries.map(([source, weight]) => JSON.stringify({ source, weight })).join("\n") + "\n",
  );
  return path;
}

function parseWeightsFile(path: string): Map<string, number> {
  const out = new Map<string, number>();
  for (const line of readFileSync(path, "utf-8").split("\n")) {
    if (line.trim() === "") continue;
    const rec = JSON.parse(line) as { source: string; weight: number };
    out.set(rec.source, rec.weight);
  }
  return out;
}

/**
 * Learn source weights (projected gradient ascent in the core).
 *
 * Numerically identical to `rag-importance fit` with the same seed: the map
 * is parsed from the very file the CLI writes, in source-index order.
 */
export function fit(
  input: string | EvaluationRecord[],
  config: FitConfig = {},
  opts: RunOptions = {},
): Map<string, number> {
  return withWorkdir((dir) => {
    const out = config.out ?? join(dir, "weights.jsonl");
    const args = ["fit", "--input", materializeInput(input, dir), "--out", out];
    if (config.k !== undefined) args.push("--k", String(config.k));
    if (config.iters !== undefined) args.push("--iters", String(config.iters));
    if (config.lr !== undefined) args.push("--lr", String(config.lr));
    if (config.init !== undefined) args.push("--init", String(config.init));
    if (config.eps !== undefined) args.push("--eps", String(config.eps));
    if (config.seed !== undefined) args.push("--seed", String(config.seed));
    runCli(args, opts);
    return parseWeightsFile(out);
  });
}

/** Per-point gradients; exact unless `eps` (truncated) or `delta` (sampled) is set. */
export function gradient(
  input: string | EvaluationRecord[],
  config: GradientConfig = {},
  opts: RunOptions = {},
): GradientRow[] {
  return withWorkdir((dir) => {
    const out = config.out ?? join(dir, "gradients.jsonl");
    const args = ["grad", "--input", materializeInput(input, dir), "--out", out];
    if (config.k !== undefined) args.push("--k", String(config.k));
    if (config.eps !== undefined) args.push("--eps", String(config.eps));
    if (config.delta !== undefined) args.push("--delta", String(config.delta));
    if (config.utility !== undefined) args.push("--utility", config.utility);
    if (config.seed !== undefined) args.push("--seed", String(config.seed));
    if (config.weights !== undefined) {
      args.push("--weights", materializeWeights(config.weights, dir));
    }
    runCli(args, opts);
    return readFileSync(out, "utf-8")
      .split("\n")
      .filter((line) => line.trim() !== "")
      .map((line) => JSON.parse(line) as GradientRow);
  });
}

function evalCommand(
  input: string | EvaluationRecord[],
  extra: string[],
  weights: WeightsInput | undefined,
  opts: RunOptions,
): AccuracyReport {
  return withWorkdir((dir) => {
    const out = join(dir, "report.jsonl");
    const args = ["eval", "--input", materializeInput(input, dir), "--out", out, ...extra];
    if (weights !== undefined) {
      args.push("--weights", materializeWeights(weights, dir));
    }
    runCli(args, opts);
    const rec = JSON.parse(readFileSync(out, "utf-8").split("\n")[0]) as AccuracyReport;
    return rec;
  });
}

/** Majority-vote accuracy of the corpus as-is. */
export function evaluate(
  input: string | EvaluationRecord[],
  k = 10,
  opts: RunOptions = {},
): AccuracyReport {
  return evalCommand(input, ["--k", String(k)], undefined, opts);
}

/** Accuracy after dropping candidates whose source weight falls below the threshold. */
export function prune(
  input: string | EvaluationRecord[],
  weights: WeightsInput,
  threshold: number,
  k = 10,
  opts: RunOptions = {},
): AccuracyReport {
  return evalCommand(
    input,
    ["--k", String(k), "--mode", "prune", "--threshold", String(threshold)],
    weights,
    opts,
  );
}

/** Expected accuracy when candidates are resampled by their source weights. */
export function reweight(
  input: string | EvaluationRecord[],
  weights: WeightsInput,
  k = 10,
  samples = 32,
  seed = 0,
  opts: RunOptions = {},
): AccuracyReport {
  return evalCommand(
    input,
    ["--k", String(k), "--mode", "reweight", "--samples", String(samples), "--seed", String(seed)],
    weights,
    opts,
  );
}
