/**
 * Foreign-function bridge to the core augmentation engine: inputs are
 * staged as GPC1/label files, the core CLI runs in a subprocess, and the
 * augmented cloud plus the per-box report are read back. Outputs are
 * element-exact core outputs by construction; fixture tests pin that.
 */

import { spawnSync } from "node:child_process";
import { mkdtempSync, readFileSync, rmSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { BoundaryError, CliError } from "./errors.js";
import {
  AugmentReportData,
  BoxLabel,
  formatLabels,
  parseAugmentReport,
  readCloud,
  writeCloud,
} from "./format.js";

export interface AugmentOptions {
  /** boxes carry no score column and bypass the score gate */
  labeled?: boolean;
  grid?: [number, number, number];
  cDecay?: number;
  dRange?: number;
  tauAug?: number;
  nPMin?: number;
  mode?: "sparsify" | "dropout" | "both";
  keepRatio?: number;
  seed?: number;
  workers?: number;
  /** core CLI executable; defaults to $GEODISTILL_CLI or "geodistill" */
  cli?: string;
}

export interface AugmentResult {
  points: Float32Array;
  report: AugmentReportData;
}

function checkPoints(points: unknown): Float32Array {
  if (!(points instanceof Float32Array)) {
    throw new BoundaryError("points", "expected a Float32Array");
  }
  if (points.length % 4 !== 0) {
    throw new BoundaryError(
      "points",
      `length ${points.length} is not a multiple of 4 (x, y, z, intensity)`,
    );
  }
  return points;
}

function checkBoxes(boxes: unknown, labeled: boolean): BoxLabel[] {
  if (!(boxes instanceof Float64Array)) {
    throw new BoundaryError("boxes", "expected a Float64Array");
  }
  const cols = labeled ? 8 : 9;
  if (boxes.length % cols !== 0) {
    throw new BoundaryError(
      "boxes",
      `length ${boxes.length} is not a multiple of ${cols} ` +
        `(class + 7 box params${labeled ? "" : " + score"})`,
    );
  }
  const labels: BoxLabel[] = [];
  for (let r = 0; r < boxes.length / cols; r++) {
    const row = boxes.subarray(r * cols, (r + 1) * cols);
    labels.push({
      classId: row[0],
      center: [row[1], row[2], row[3]],
      dims: [row[4], row[5], row[6]],
      yaw: row[7],
      score: labeled ? 1.0 : row[8],
    });
  }
  return labels;
}

/**
 * Run the core augmentation on in-memory arrays.
 *
 * ``points`` is interleaved (N*4) float32; ``boxes`` is row-major float64
 * with 8 columns when ``labeled`` (class + box params) or 9 otherwise
 * (+ teacher score). Inputs are never mutated.
 */
export function boundAugment(
  points: Float32Array,
  boxes: Float64Array,
  options: AugmentOptions = {},
): AugmentResult {
  const labeled = options.labeled ?? false;
  const cloud = checkPoints(points);
  const labels = checkBoxes(boxes, labeled);
  const cli = options.cli ?? process.env.GEODISTILL_CLI ?? "geodistill";

  const workdir = mkdtempSync(join(tmpdir(), "geodistill-"));
  try {
    const inputPath = join(workdir, "input.gpc");
    const labelsPath = join(workdir, "labels.txt");
    const outputPath = join(workdir, "output.gpc");
    const reportPath = join(workdir, "report.txt");
    writeFileSync(inputPath, writeCloud(cloud));
    writeFileSync(labelsPath, formatLabels(labels));

    const grid = options.grid ?? [4, 2, 1];
    const args = [
      "augment",
      "--input", inputPath,
      "--labels", labelsPath,
      "--output", outputPath,
      "--report", reportPath,
      "--grid", grid.join("x"),
      "--c-decay", String(options.cDecay ?? 0.05),
      "--d-range", String(options.dRange ?? 100.0),
      "--tau-aug", String(options.tauAug ?? 0.7),
      "--np-min", String(options.nPMin ?? 5),
      "--mode", options.mode ?? "both",
      "--keep-ratio", String(options.keepRatio ?? 0.5),
      "--seed", String(options.seed ?? 0),
      "--workers", String(options.workers ?? 1),
    ];
    if (labeled) args.push("--labeled");

    const run = spawnSync(cli, args, { encoding: "utf-8" });
    if (run.error) {
      throw new CliError(`failed to spawn ${cli}: ${run.error.message}`, null, "");
    }
    if (run.status !== 0) {
      throw new CliError(
        `${cli} exited with code ${run.status}`,
        run.status,
        run.stderr ?? "",
      );
    }
    const outPoints = readCloud(readFileSync(outputPath));
    const report = parseAugmentReport(readFileSync(reportPath, "utf-8"));
    return { points: outPoints, report };
  } finally {
    rmSync(workdir, { recursive: true, force: true });
  }
}
