/** Errors raised at the binding boundary, before the core is involved. */
export class BoundaryError extends Error {
  readonly field: string;

  constructor(field: string, message: string) {
    super(`${field}: ${message}`);
    this.name = "BoundaryError";
    this.field = field;
  }
}

/** The spawned core CLI failed or returned a non-zero exit code. */
export class CliError extends Error {
  readonly exitCode: number | null;
  readonly stderr: string;

  constructor(message: string, exitCode: number | null, stderr: string) {
    super(message);
    this.name = "CliError";
    this.exitCode = exitCode;
    this.stderr = stderr;
  }
}

/** A file did not conform to one of the on-disk formats. */
export class FormatError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "FormatError";
  }
}
