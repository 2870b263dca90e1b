/**
 * In-process access to batchmine artifacts for JS/TS training loops.
 *
 * Batch manifests are parsed natively against the documented line format
 * (header with an FNV-1a body checksum, one key-value record per batch), so
 * iterating batches needs no subprocess. Running the mining pipeline goes
 * through the CLI, which is the one external interface the core exposes for
 * execution; no mining logic is reimplemented here.
 */

import { spawn } from "node:child_process";
import { readFileSync } from "node:fs";
import * as path from "node:path";

export const VERSION = "0.1.0";

const FNV_OFFSET = 0xcbf29ce484222325n;
const FNV_PRIME = 0x100000001b3n;
const MASK64 = 0xffffffffffffffffn;

/** 64-bit FNV-1a hash, matching the core's checksum convention. */
export function fnv1a64(data: Uint8Array): bigint {
  let h = FNV_OFFSET;
  for (let i = 0; i < data.length; i++) {
    h = ((h ^ BigInt(data[i])) * FNV_PRIME) & MASK64;
  }
  return h;
}

export interface BatchRecord {
  epoch: number;
  index: number;
  taskId: string;
  members: Int32Array;
  hardNegatives: Int32Array | null;
}

export interface PlanMetadata {
  taskId: string;
  n: number;
  K: number;
  batchSize: number;
  h: number;
  seed: number;
  epochs: number;
  bodyChecksum: string;
}

function parseKv(line: string, what: string): Map<string, string> {
  const out = new Map<string, string>();
  for (const tok of line.split(" ")) {
    if (!tok) continue;
    const eq = tok.indexOf("=");
    if (eq < 0) throw new Error(`malformed ${what} token: ${tok}`);
    out.set(tok.slice(0, eq), tok.slice(eq + 1));
  }
  return out;
}

function parseIntList(text: string): Int32Array {
  if (!text) return new Int32Array(0);
  const parts = text.split(",");
  const out = new Int32Array(parts.length);
  for (let i = 0; i < parts.length; i++) out[i] = Number(parts[i]);
  return out;
}

/** A loaded batch manifest; iteration order matches the file byte-for-byte. */
export class PlanHandle {
  readonly meta: PlanMetadata;
  private readonly lines: string[];

  constructor(meta: PlanMetadata, bodyLines: string[]) {
    this.meta = meta;
    this.lines = bodyLines;
  }

  /** Lazily yield batches, optionally restricted to one epoch. */
  *batches(epoch?: number): Generator<BatchRecord> {
    for (const line of this.lines) {
      if (!line.trim()) continue;
      const rec = parseKv(line, "record");
      const e = Number(rec.get("epoch"));
      if (epoch !== undefined && e !== epoch) continue;
      const negText = rec.get("negatives") ?? "";
      yield {
        epoch: e,
        index: Number(rec.get("batch")),
        taskId: rec.get("task") ?? "",
        members: parseIntList(rec.get("members") ?? ""),
        hardNegatives: negText ? parseIntList(negText) : null,
      };
    }
  }

  /** All member indices of one epoch, in batch order. */
  epochIndices(epoch: number): Int32Array {
    const chunks: Int32Array[] = [];
    let total = 0;
    for (const b of this.batches(epoch)) {
      chunks.push(b.members);
      total += b.members.length;
    }
    const out = new Int32Array(total);
    let pos = 0;
    for (const c of chunks) {
      out.set(c, pos);
      pos += c.length;
    }
    return out;
  }
}

/** Parse and checksum-validate a batch manifest written by the core. */
export function openPlan(manifestPath: string): PlanHandle {
  const text = readFileSync(manifestPath, "utf-8");
  const nl = text.indexOf("\n");
  const head = nl < 0 ? text : text.slice(0, nl);
  const body = nl < 0 ? "" : text.slice(nl + 1);
  const prefix = "#batch-manifest ";
  if (!head.startsWith(prefix)) {
    throw new Error(`${manifestPath}: missing #batch-manifest header line`);
  }
  const fields = parseKv(head.slice(prefix.length), "header");
  for (const key of ["format_version", "n", "K", "B", "h", "seed", "epochs", "body_fnv1a64"]) {
    if (!fields.has(key)) {
      throw new Error(`${manifestPath}: header missing field '${key}'`);
    }
  }
  const actual = fnv1a64(new TextEncoder().encode(body)).toString(16).padStart(16, "0");
  if (actual !== fields.get("body_fnv1a64")) {
    throw new Error(`${manifestPath}: manifest body checksum mismatch`);
  }
  const meta: PlanMetadata = {
    taskId: fields.get("task") ?? "",
    n: Number(fields.get("n")),
    K: Number(fields.get("K")),
    batchSize: Number(fields.get("B")),
    h: Number(fields.get("h")),
    seed: Number(fields.get("seed")),
    epochs: Number(fields.get("epochs")),
    bodyChecksum: actual,
  };
  return new PlanHandle(meta, body.split("\n"));
}

export interface MineOptions {
  out: string;
  seed?: number;
  p?: number;
  m?: number;
  similarity?: "cosine" | "dot";
  clusterSize?: number;
  batchSize?: number;
  epochs?: number;
  h?: number;
  /** Command used to invoke the core CLI; defaults to `python3 -m batchmine.cli`. */
  cli?: string[];
}

const FLAGS: Array<[keyof MineOptions, string]> = [
  ["seed", "--seed"],
  ["p", "--p"],
  ["m", "--m"],
  ["similarity", "--similarity"],
  ["clusterSize", "--cluster-size"],
  ["batchSize", "--batch-size"],
  ["epochs", "--epochs"],
  ["h", "--h"],
];

export function cliCommand(options?: { cli?: string[] }): string[] {
  if (options?.cli) return options.cli;
  if (process.env.BATCHMINE_CLI) return process.env.BATCHMINE_CLI.split(" ");
  return ["python3", "-m", "batchmine.cli"];
}

/** Run a core CLI subcommand; rejects with the CLI's stderr on failure. */
export function runCli(args: string[], options?: { cli?: string[] }): Promise<void> {
  const cmd = cliCommand(options);
  return new Promise((resolve, reject) => {
    const proc = spawn(cmd[0], [...cmd.slice(1), ...args], {
      stdio: ["ignore", "pipe", "pipe"],
    });
    let stderr = "";
    proc.stderr.on("data", (chunk) => (stderr += chunk));
    proc.on("error", reject);
    proc.on("close", (code) => {
      if (code === 0) resolve();
      else reject(new Error(`batchmine ${args[0]} exited with ${code}: ${stderr.trim()}`));
    });
  });
}

/**
 * Mine batches for a corpus by invoking the core pipeline; resolves to the
 * manifest path. Identical inputs and seed produce a byte-identical manifest
 * to a direct CLI run, since this is the same code path.
 */
export async function mine(corpusPath: string, options: MineOptions): Promise<string> {
  const args = ["pipeline", "--corpus", corpusPath, "--out", options.out, "--skip-diagnose"];
  for (const [key, flag] of FLAGS) {
    const val = options[key];
    if (val !== undefined) args.push(flag, String(val));
  }
  await runCli(args, options);
  return path.join(options.out, "manifest.txt");
}
