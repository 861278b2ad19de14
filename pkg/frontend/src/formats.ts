/**
 * Codecs for the core's little-endian binary formats.
 *
 * PKLT: basis lookup table   (version u32, basis tag u8, degree u32, size u32)
 * PKCK: coefficient tensor   (version u32, layout u32, dIn u32, dOut u32, degree u32)
 * PKMX: 2-D float matrix     (version u32, rows u32, cols u32)
 *
 * All payloads are float32. Decoders return zero-copy Float32Array views
 * when the header leaves the payload 4-byte aligned (it always does here);
 * encoders always copy.
 */
import { FormatError } from "./errors.js";

export type CoeffLayout = "jod" | "doj";

export type BasisName = "chebyshev" | "legendre" | "hermite" | "fourier";

const BASIS_TAGS: Record<BasisName, number> = {
  chebyshev: 0,
  legendre: 1,
  hermite: 2,
  fourier: 3,
};
const TAG_TO_BASIS: BasisName[] = ["chebyshev", "legendre", "hermite", "fourier"];

const LAYOUT_TAGS: Record<CoeffLayout, number> = { jod: 0, doj: 1 };
const TAG_TO_LAYOUT: CoeffLayout[] = ["jod", "doj"];

export interface MatrixFile {
  rows: number;
  cols: number;
  data: Float32Array; // row-major
}

export interface CoeffFile {
  layout: CoeffLayout;
  dIn: number;
  dOut: number;
  degree: number;
  data: Float32Array; // flat, in the tagged layout
}

export interface LutFile {
  basis: BasisName;
  degree: number;
  lutSize: number;
  /** (features x lutSize), row-major. */
  values: Float32Array;
  /** (features x (lutSize - 1)), row-major. */
  slopes: Float32Array;
}

function ascii(bytes: Uint8Array): string {
  return String.fromCharCode(...bytes);
}

function expectHeader(
  buf: Uint8Array,
  magic: string,
  headerBytes: number,
  what: string,
): void {
  if (buf.length < 4 || ascii(buf.subarray(0, 4)) !== magic) {
    throw new FormatError(`not a ${what} file (missing ${magic} magic)`);
  }
  if (buf.length < headerBytes) {
    throw new FormatError(`${what} file truncated inside the header`);
  }
}

function f32View(buf: Uint8Array, byteOffset: number, count: number): Float32Array {
  const absolute = buf.byteOffset + byteOffset;
  if (absolute % 4 === 0) {
    return new Float32Array(buf.buffer, absolute, count);
  }
  // Unaligned source (rare: caller sliced the buffer oddly); copy.
  const copy = buf.slice(byteOffset, byteOffset + 4 * count);
  return new Float32Array(copy.buffer, 0, count);
}

export function encodeMatrix(m: MatrixFile): Uint8Array {
  if (m.data.length !== m.rows * m.cols) {
    throw new FormatError(
      `matrix data length ${m.data.length} does not match ${m.rows} x ${m.cols}`,
    );
  }
  const out = new Uint8Array(16 + 4 * m.data.length);
  const view = new DataView(out.buffer);
  out.set([0x50, 0x4b, 0x4d, 0x58]); // "PKMX"
  view.setUint32(4, 1, true);
  view.setUint32(8, m.rows, true);
  view.setUint32(12, m.cols, true);
  out.set(new Uint8Array(m.data.buffer, m.data.byteOffset, 4 * m.data.length), 16);
  return out;
}

export function decodeMatrix(buf: Uint8Array): MatrixFile {
  expectHeader(buf, "PKMX", 16, "matrix");
  const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  const version = view.getUint32(4, true);
  if (version !== 1) throw new FormatError(`unsupported PKMX version ${version}`);
  const rows = view.getUint32(8, true);
  const cols = view.getUint32(12, true);
  if (buf.length !== 16 + 4 * rows * cols) {
    throw new FormatError(
      `PKMX length ${buf.length} does not match ${rows} x ${cols} payload`,
    );
  }
  return { rows, cols, data: f32View(buf, 16, rows * cols) };
}

export function encodeCoeff(c: CoeffFile): Uint8Array {
  const expected = c.dIn * c.dOut * (c.degree + 1);
  if (c.data.length !== expected) {
    throw new FormatError(
      `coefficient data length ${c.data.length} does not match ` +
        `${c.dIn} x ${c.dOut} x ${c.degree + 1}`,
    );
  }
  const out = new Uint8Array(24 + 4 * c.data.length);
  const view = new DataView(out.buffer);
  out.set([0x50, 0x4b, 0x43, 0x4b]); // "PKCK"
  view.setUint32(4, 1, true);
  view.setUint32(8, LAYOUT_TAGS[c.layout], true);
  view.setUint32(12, c.dIn, true);
  view.setUint32(16, c.dOut, true);
  view.setUint32(20, c.degree, true);
  out.set(new Uint8Array(c.data.buffer, c.data.byteOffset, 4 * c.data.length), 24);
  return out;
}

export function decodeCoeff(buf: Uint8Array): CoeffFile {
  expectHeader(buf, "PKCK", 24, "coefficient");
  const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  const version = view.getUint32(4, true);
  if (version !== 1) throw new FormatError(`unsupported PKCK version ${version}`);
  const layoutTag = view.getUint32(8, true);
  const layout = TAG_TO_LAYOUT[layoutTag];
  if (!layout) throw new FormatError(`unknown coefficient layout tag ${layoutTag}`);
  const dIn = view.getUint32(12, true);
  const dOut = view.getUint32(16, true);
  const degree = view.getUint32(20, true);
  const count = dIn * dOut * (degree + 1);
  if (buf.length !== 24 + 4 * count) {
    throw new FormatError(`PKCK length ${buf.length} does not match header dims`);
  }
  return { layout, dIn, dOut, degree, data: f32View(buf, 24, count) };
}

export function encodeLut(t: LutFile): Uint8Array {
  const features = t.values.length / t.lutSize;
  if (!Number.isInteger(features) || t.slopes.length !== features * (t.lutSize - 1)) {
    throw new FormatError("LUT value/slope lengths are inconsistent with lutSize");
  }
  const out = new Uint8Array(17 + 4 * (t.values.length + t.slopes.length));
  const view = new DataView(out.buffer);
  out.set([0x50, 0x4b, 0x4c, 0x54]); // "PKLT"
  view.setUint32(4, 1, true);
  view.setUint8(8, BASIS_TAGS[t.basis]);
  view.setUint32(9, t.degree, true);
  view.setUint32(13, t.lutSize, true);
  out.set(new Uint8Array(t.values.buffer, t.values.byteOffset, 4 * t.values.length), 17);
  out.set(
    new Uint8Array(t.slopes.buffer, t.slopes.byteOffset, 4 * t.slopes.length),
    17 + 4 * t.values.length,
  );
  return out;
}

export function decodeLut(buf: Uint8Array): LutFile {
  expectHeader(buf, "PKLT", 17, "lookup table");
  const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  const version = view.getUint32(4, true);
  if (version !== 1) throw new FormatError(`unsupported PKLT version ${version}`);
  const basis = TAG_TO_BASIS[view.getUint8(8)];
  if (!basis) throw new FormatError(`unknown basis tag ${view.getUint8(8)}`);
  const degree = view.getUint32(9, true);
  const lutSize = view.getUint32(13, true);
  const features = basis === "fourier" ? 2 * degree + 1 : degree + 1;
  const nValues = features * lutSize;
  const nSlopes = features * (lutSize - 1);
  if (buf.length !== 17 + 4 * (nValues + nSlopes)) {
    throw new FormatError(`PKLT length ${buf.length} does not match header dims`);
  }
  // 17-byte header leaves the payload unaligned; f32View copies in that case.
  return {
    basis,
    degree,
    lutSize,
    values: f32View(buf, 17, nValues),
    slopes: f32View(buf, 17 + 4 * nValues, nSlopes),
  };
}
