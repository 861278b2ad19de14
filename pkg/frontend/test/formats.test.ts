import assert from "node:assert/strict";
import { execFileSync } from "node:child_process";
import { mkdtempSync, readFileSync, rmSync } from "node:fs";
import os from "node:os";
import path from "node:path";
import { test } from "node:test";

import {
  decodeCoeff,
  decodeLut,
  decodeMatrix,
  encodeCoeff,
  encodeLut,
  encodeMatrix,
  FormatError,
} from "../src/index.js";
import { coreCommand } from "../src/layer.js";

function runCore(args: string[]): void {
  const [cmd, ...prefix] = coreCommand();
  execFileSync(cmd, [...prefix, ...args], { stdio: "pipe" });
}

function randomF32(n: number, seed: number): Float32Array {
  // xorshift so fixtures are reproducible without a dependency
  let state = seed >>> 0 || 1;
  const out = new Float32Array(n);
  for (let i = 0; i < n; i++) {
    state ^= state << 13; state >>>= 0;
    state ^= state >> 17;
    state ^= state << 5; state >>>= 0;
    out[i] = (state / 0xffffffff) * 2 - 1;
  }
  return out;
}

test("matrix encode/decode round-trips bit-exactly", () => {
  const m = { rows: 3, cols: 5, data: randomF32(15, 7) };
  const bytes = encodeMatrix(m);
  const back = decodeMatrix(bytes);
  assert.equal(back.rows, 3);
  assert.equal(back.cols, 5);
  assert.deepEqual(Buffer.from(encodeMatrix(back)), Buffer.from(bytes));
});

test("coefficient encode/decode round-trips bit-exactly", () => {
  const c = {
    layout: "doj" as const,
    dIn: 4,
    dOut: 3,
    degree: 2,
    data: randomF32(36, 11),
  };
  const bytes = encodeCoeff(c);
  const back = decodeCoeff(bytes);
  assert.equal(back.layout, "doj");
  assert.equal(back.dIn, 4);
  assert.deepEqual(Buffer.from(encodeCoeff(back)), Buffer.from(bytes));
});

test("length and magic mismatches are rejected", () => {
  assert.throws(() => encodeMatrix({ rows: 2, cols: 2, data: randomF32(3, 1) }), FormatError);
  const good = encodeMatrix({ rows: 1, cols: 1, data: randomF32(1, 2) });
  const bad = Buffer.from(good);
  bad.write("NOPE", 0, "ascii");
  assert.throws(() => decodeMatrix(bad), FormatError);
  assert.throws(() => decodeMatrix(good.subarray(0, good.length - 1)), FormatError);
  const coeffBytes = encodeCoeff({
    layout: "jod", dIn: 1, dOut: 1, degree: 0, data: randomF32(1, 3),
  });
  assert.throws(() => decodeCoeff(coeffBytes.subarray(0, 20)), FormatError);
});

test("core-written LUT files decode and re-encode byte-identically", () => {
  const dir = mkdtempSync(path.join(os.tmpdir(), "polykan-fmt-"));
  try {
    const lutPath = path.join(dir, "t.pklt");
    runCore(["lut-build", "--basis", "legendre", "--degree", "6", "--size", "257",
             "--out", lutPath]);
    const raw = new Uint8Array(readFileSync(lutPath));
    const table = decodeLut(raw);
    assert.equal(table.basis, "legendre");
    assert.equal(table.degree, 6);
    assert.equal(table.lutSize, 257);
    assert.equal(table.values.length, 7 * 257);
    assert.equal(table.slopes.length, 7 * 256);
    // P_n(1) = 1: the last column of every feature row
    for (let k = 0; k < 7; k++) {
      const last = table.values[k * 257 + 256];
      assert.ok(Math.abs(last - 1) <= 1e-6, `P_${k}(1) = ${last}`);
    }
    assert.deepEqual(Buffer.from(encodeLut(table)), Buffer.from(raw));
  } finally {
    rmSync(dir, { recursive: true, force: true });
  }
});

test("core-written checkpoints decode with the declared layout", () => {
  const dir = mkdtempSync(path.join(os.tmpdir(), "polykan-fmt-"));
  try {
    runCore(["train", "--data", "synthetic:cheb2", "--arch", "1,1", "--degree", "2",
             "--epochs", "2", "--out", dir]);
    const c = decodeCoeff(new Uint8Array(readFileSync(path.join(dir, "layer_0.pkck"))));
    assert.equal(c.layout, "jod"); // checkpoints export in the original orientation
    assert.equal(c.dIn, 1);
    assert.equal(c.dOut, 1);
    assert.equal(c.degree, 2);
  } finally {
    rmSync(dir, { recursive: true, force: true });
  }
});
