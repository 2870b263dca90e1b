import { mkdtempSync, readFileSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import * as path from "node:path";
import { beforeAll, describe, expect, it } from "vitest";

import { fnv1a64, mine, openPlan, runCli } from "../src/index.js";

const work = mkdtempSync(path.join(tmpdir(), "bindings-"));
const corpusDir = path.join(work, "corpus");
const corpusPath = path.join(corpusDir, "corpus.bin");

function bodyChecksumOf(manifestPath: string): string {
  const text = readFileSync(manifestPath, "utf-8");
  const header = text.slice(0, text.indexOf("\n"));
  const match = /body_fnv1a64=([0-9a-f]{16})/.exec(header);
  if (!match) throw new Error("no checksum in header");
  return match[1];
}

beforeAll(async () => {
  await runCli([
    "synth", "--out", corpusDir, "--clusters", "8", "--cluster-members", "8",
    "--dim", "32", "--noise", "0.2", "--seed", "5",
  ]);
}, 120_000);

describe("fnv1a64", () => {
  it("matches the published test vectors", () => {
    const enc = new TextEncoder();
    expect(fnv1a64(new Uint8Array(0))).toBe(0xcbf29ce484222325n);
    expect(fnv1a64(enc.encode("a"))).toBe(0xaf63dc4c8601ec8cn);
    expect(fnv1a64(enc.encode("foobar"))).toBe(0x85944171f73967e8n);
  });
});

describe("openPlan", () => {
  it("round-trips a mined manifest with matching metadata", async () => {
    const out = path.join(work, "meta");
    const manifest = await mine(corpusPath, {
      out, seed: 3, p: 0, m: 7, clusterSize: 8, batchSize: 16, epochs: 2,
    });
    const plan = openPlan(manifest);
    expect(plan.meta.n).toBe(64);
    expect(plan.meta.K).toBe(8);
    expect(plan.meta.batchSize).toBe(16);
    expect(plan.meta.epochs).toBe(2);
    expect(plan.meta.taskId).toBe("planted");
  }, 120_000);

  it("yields exact coverage of 0..n-1 per epoch", async () => {
    // m wider than the planted clusters so the unified negative support
    // reaches outside each batch
    const out = path.join(work, "coverage");
    const manifest = await mine(corpusPath, {
      out, seed: 9, p: 0, m: 12, clusterSize: 8, batchSize: 16, epochs: 2, h: 3,
    });
    const plan = openPlan(manifest);
    for (let epoch = 0; epoch < plan.meta.epochs; epoch++) {
      const seen = Array.from(plan.epochIndices(epoch)).sort((a, b) => a - b);
      expect(seen).toEqual(Array.from({ length: plan.meta.n }, (_, i) => i));
    }
    for (const batch of plan.batches(0)) {
      expect(batch.hardNegatives).not.toBeNull();
      expect(batch.hardNegatives!.length).toBe(3);
      for (const neg of batch.hardNegatives!) {
        expect(Array.from(batch.members)).not.toContain(neg);
      }
    }
  }, 120_000);

  it("represents an empty negative pool as absent negatives", async () => {
    // m smaller than the clusters: every preferred negative is already in the
    // batch, so the unified distribution is empty and sampling falls short
    const out = path.join(work, "shortfall");
    const manifest = await mine(corpusPath, {
      out, seed: 9, p: 0, m: 7, clusterSize: 8, batchSize: 16, h: 3,
    });
    for (const batch of openPlan(manifest).batches(0)) {
      expect(batch.hardNegatives).toBeNull();
    }
  }, 120_000);

  it("rejects a manifest with a corrupted body", async () => {
    const out = path.join(work, "corrupt");
    const manifest = await mine(corpusPath, {
      out, seed: 4, p: 0, m: 7, clusterSize: 8, batchSize: 16,
    });
    const tampered = readFileSync(manifest, "utf-8").replace("members=", "members=0,");
    const bad = path.join(out, "tampered.txt");
    writeFileSync(bad, tampered);
    expect(() => openPlan(bad)).toThrow(/checksum mismatch/);
  }, 120_000);

  it("surfaces the core's error text on pipeline failure", async () => {
    const out = path.join(work, "fail");
    await expect(
      mine(corpusPath, { out, seed: 1, p: 40, m: 60, clusterSize: 8, batchSize: 16 }),
    ).rejects.toThrow(/p \+ m/);
  }, 120_000);
});

describe("boundary parity", () => {
  it("mine() matches a direct CLI run for 5 seeded configurations", async () => {
    for (let seed = 0; seed < 5; seed++) {
      const viaBindings = path.join(work, `b${seed}`);
      const viaCli = path.join(work, `c${seed}`);
      const manifest = await mine(corpusPath, {
        out: viaBindings, seed, p: 0, m: 7, clusterSize: 8, batchSize: 16, epochs: 2, h: 2,
      });
      await runCli([
        "pipeline", "--corpus", corpusPath, "--out", viaCli, "--skip-diagnose",
        "--seed", String(seed), "--p", "0", "--m", "7", "--cluster-size", "8",
        "--batch-size", "16", "--epochs", "2", "--h", "2",
      ]);
      const a = bodyChecksumOf(manifest);
      const b = bodyChecksumOf(path.join(viaCli, "manifest.txt"));
      expect(a).toBe(b);
      expect(readFileSync(manifest, "utf-8")).toBe(
        readFileSync(path.join(viaCli, "manifest.txt"), "utf-8"),
      );
      expect(openPlan(manifest).meta.bodyChecksum).toBe(a);
    }
  }, 300_000);
});
