export {
  CoreProcessError,
  FormatError,
  HandleBusyError,
  HandleClosedError,
  ShapeError,
} from "./errors.js";
export {
  decodeCoeff,
  decodeLut,
  decodeMatrix,
  encodeCoeff,
  encodeLut,
  encodeMatrix,
} from "./formats.js";
export type {
  BasisName,
  CoeffFile,
  CoeffLayout,
  LutFile,
  MatrixFile,
} from "./formats.js";
export { BoundLayer, buildLut, coreCommand } from "./layer.js";
export type { BackwardResult, KernelPath, LayerParams, LayerSpec } from "./layer.js";
