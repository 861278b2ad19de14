/** Typed failures raised by the client; none of these crash the process. */

export class ShapeError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "ShapeError";
  }
}

export class FormatError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "FormatError";
  }
}

export class HandleClosedError extends Error {
  constructor() {
    super("layer handle is closed; create a new BoundLayer");
    this.name = "HandleClosedError";
  }
}

export class HandleBusyError extends Error {
  constructor() {
    super("layer handle is already running a call; BoundLayer is not reentrant");
    this.name = "HandleBusyError";
  }
}

/** Raised when the core process exits nonzero; carries its stderr. */
export class CoreProcessError extends Error {
  readonly exitCode: number | null;
  readonly stderr: string;

  constructor(exitCode: number | null, stderr: string) {
    super(`polykan core exited with code ${exitCode}: ${stderr.trim()}`);
    this.name = "CoreProcessError";
    this.exitCode = exitCode;
    this.stderr = stderr;
  }
}
