/**
 * BoundLayer: a handle over one operator layer whose compute runs in the
 * polykan core. The handle owns a scratch directory holding the encoded
 * coefficients; each forward/backward spawns the core's `apply` subcommand
 * asynchronously, so the host event loop is never blocked while the kernel
 * runs. Results are bitwise whatever the core produced: this client only
 * marshals.
 *
 * A BoundLayer must not be used concurrently: calls while one is in flight
 * throw HandleBusyError. Closed handles throw HandleClosedError, never crash.
 */
import { execFile } from "node:child_process";
import { promises as fs } from "node:fs";
import { mkdtempSync } from "node:fs";
import os from "node:os";
import path from "node:path";

import {
  CoreProcessError,
  HandleBusyError,
  HandleClosedError,
  ShapeError,
} from "./errors.js";
import {
  BasisName,
  CoeffLayout,
  decodeCoeff,
  decodeMatrix,
  encodeCoeff,
  encodeMatrix,
} from "./formats.js";

export type KernelPath = "lut" | "exact";

export interface LayerSpec {
  dIn: number;
  dOut: number;
  degree: number;
  basis?: BasisName;
  mode?: KernelPath;
  lutSize?: number;
  includeTanhJacobian?: boolean;
}

export interface LayerParams {
  /** Flat coefficients in the given layout (defaults to "jod"). */
  coeff: Float32Array;
  layout?: CoeffLayout;
  bias?: Float32Array;
}

export interface BackwardResult {
  /** Gradient in the core's DOJ layout. */
  coeffGrad: Float32Array;
  coeffGradLayout: CoeffLayout;
  xGrad: Float32Array;
}

/** The command used to reach the core; override with POLYKAN_CLI. */
export function coreCommand(): string[] {
  const env = process.env.POLYKAN_CLI;
  if (env && env.trim().length > 0) return env.trim().split(/\s+/);
  return ["polykan"];
}

function runCore(args: string[]): Promise<void> {
  const [cmd, ...prefix] = coreCommand();
  return new Promise((resolve, reject) => {
    execFile(cmd, [...prefix, ...args], { maxBuffer: 1 << 24 }, (error, _stdout, stderr) => {
      if (error) {
        const code = typeof error.code === "number" ? error.code : null;
        reject(new CoreProcessError(code, stderr || error.message));
      } else {
        resolve();
      }
    });
  });
}

let layerCounter = 0;

export class BoundLayer {
  readonly spec: Required<Pick<LayerSpec, "dIn" | "dOut" | "degree">> & LayerSpec;
  private readonly params: LayerParams;
  private dir: string | null = null; // lazily materialized scratch directory
  private closed = false;
  private busy = false;
  private callCounter = 0;

  constructor(spec: LayerSpec, params: LayerParams) {
    const { dIn, dOut, degree } = spec;
    if (!Number.isInteger(dIn) || dIn < 1 || !Number.isInteger(dOut) || dOut < 1) {
      throw new ShapeError(`layer dims must be positive integers, got ${dIn} x ${dOut}`);
    }
    if (!Number.isInteger(degree) || degree < 0) {
      throw new ShapeError(`degree must be a non-negative integer, got ${degree}`);
    }
    const basis = spec.basis ?? "chebyshev";
    const features = basis === "fourier" ? 2 * degree + 1 : degree + 1;
    const expected = dIn * dOut * features;
    if (!(params.coeff instanceof Float32Array)) {
      throw new ShapeError("coefficients must be a Float32Array (float32-only v1 boundary)");
    }
    if (params.coeff.length !== expected) {
      throw new ShapeError(
        `coefficient length ${params.coeff.length} does not match ` +
          `${dIn} x ${dOut} x ${features}`,
      );
    }
    if (params.bias !== undefined) {
      if (!(params.bias instanceof Float32Array) || params.bias.length !== dOut) {
        throw new ShapeError(`bias must be a Float32Array of length ${dOut}`);
      }
    }
    this.spec = { basis, mode: "lut", includeTanhJacobian: true, ...spec };
    this.params = { layout: "jod", ...params, coeff: params.coeff.slice() };
  }

  get isClosed(): boolean {
    return this.closed;
  }

  /** Release the scratch directory; further calls throw, never crash. */
  async dispose(): Promise<void> {
    this.closed = true;
    if (this.dir !== null) {
      const d = this.dir;
      this.dir = null;
      await fs.rm(d, { recursive: true, force: true });
    }
  }

  private async materialize(): Promise<string> {
    if (this.dir === null) {
      const features =
        this.spec.basis === "fourier" ? 2 * this.spec.degree + 1 : this.spec.degree + 1;
      this.dir = mkdtempSync(path.join(os.tmpdir(), `polykan-layer-${layerCounter++}-`));
      await fs.writeFile(
        path.join(this.dir, "layer.pkck"),
        encodeCoeff({
          layout: this.params.layout ?? "jod",
          dIn: this.spec.dIn,
          dOut: this.spec.dOut,
          degree: features - 1,
          data: this.params.coeff,
        }),
      );
      if (this.params.bias) {
        await fs.writeFile(
          path.join(this.dir, "bias.json"),
          JSON.stringify(Array.from(this.params.bias)),
        );
      }
    }
    return this.dir;
  }

  private checkInput(x: Float32Array, batch: number, name = "input"): void {
    if (this.closed) throw new HandleClosedError();
    if (!(x instanceof Float32Array)) {
      throw new ShapeError(`${name} must be a Float32Array (float32-only v1 boundary)`);
    }
    if (!Number.isInteger(batch) || batch < 1) {
      throw new ShapeError(`batch must be a positive integer, got ${batch}`);
    }
    if (x.length !== batch * this.spec.dIn) {
      throw new ShapeError(
        `${name} length ${x.length} does not match batch ${batch} x dIn ${this.spec.dIn}`,
      );
    }
  }

  private applyArgs(dir: string, callDir: string): string[] {
    const args = [
      "apply",
      "--coeff", path.join(dir, "layer.pkck"),
      "--input", path.join(callDir, "x.pkmx"),
      "--output", path.join(callDir, "y.pkmx"),
      "--mode", this.spec.mode ?? "lut",
      "--basis", this.spec.basis ?? "chebyshev",
    ];
    if (this.spec.lutSize) args.push("--lut-size", String(this.spec.lutSize));
    if (this.params.bias) args.push("--bias-json", path.join(dir, "bias.json"));
    if (this.spec.includeTanhJacobian === false) args.push("--no-tanh-jacobian");
    return args;
  }

  private async enter<T>(fn: () => Promise<T>): Promise<T> {
    if (this.busy) throw new HandleBusyError();
    this.busy = true;
    try {
      return await fn();
    } finally {
      this.busy = false;
    }
  }

  /** Run the layer forward; returns a (batch x dOut) row-major Float32Array. */
  forward(x: Float32Array, batch: number): Promise<Float32Array> {
    this.checkInput(x, batch);
    return this.enter(async () => {
      const dir = await this.materialize();
      const callDir = path.join(dir, `call-${this.callCounter++}`);
      await fs.mkdir(callDir);
      try {
        await fs.writeFile(
          path.join(callDir, "x.pkmx"),
          encodeMatrix({ rows: batch, cols: this.spec.dIn, data: x }),
        );
        await runCore(this.applyArgs(dir, callDir));
        const y = decodeMatrix(await fs.readFile(path.join(callDir, "y.pkmx")));
        return y.data.slice();
      } finally {
        await fs.rm(callDir, { recursive: true, force: true });
      }
    });
  }

  /** Forward plus gradients for upstream dY of shape (batch x dOut). */
  backward(x: Float32Array, dY: Float32Array, batch: number): Promise<BackwardResult> {
    this.checkInput(x, batch);
    if (!(dY instanceof Float32Array)) {
      throw new ShapeError("dY must be a Float32Array (float32-only v1 boundary)");
    }
    if (dY.length !== batch * this.spec.dOut) {
      throw new ShapeError(
        `dY length ${dY.length} does not match batch ${batch} x dOut ${this.spec.dOut}`,
      );
    }
    return this.enter(async () => {
      const dir = await this.materialize();
      const callDir = path.join(dir, `call-${this.callCounter++}`);
      await fs.mkdir(callDir);
      try {
        await fs.writeFile(
          path.join(callDir, "x.pkmx"),
          encodeMatrix({ rows: batch, cols: this.spec.dIn, data: x }),
        );
        await fs.writeFile(
          path.join(callDir, "dy.pkmx"),
          encodeMatrix({ rows: batch, cols: this.spec.dOut, data: dY }),
        );
        const args = this.applyArgs(dir, callDir);
        args.push(
          "--dy", path.join(callDir, "dy.pkmx"),
          "--coeff-grad", path.join(callDir, "cg.pkck"),
          "--x-grad", path.join(callDir, "xg.pkmx"),
        );
        await runCore(args);
        const cg = decodeCoeff(await fs.readFile(path.join(callDir, "cg.pkck")));
        const xg = decodeMatrix(await fs.readFile(path.join(callDir, "xg.pkmx")));
        return {
          coeffGrad: cg.data.slice(),
          coeffGradLayout: cg.layout,
          xGrad: xg.data.slice(),
        };
      } finally {
        await fs.rm(callDir, { recursive: true, force: true });
      }
    });
  }
}

/** Build a LUT file on disk through the core; returns the output path. */
export async function buildLut(
  basis: BasisName,
  degree: number,
  size: number,
  outPath: string,
): Promise<string> {
  await runCore([
    "lut-build",
    "--basis", basis,
    "--degree", String(degree),
    "--size", String(size),
    "--out", outPath,
  ]);
  return outPath;
}
