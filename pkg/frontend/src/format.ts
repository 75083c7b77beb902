/**
 * On-disk formats shared with the core: GPC1 binary clouds, text label
 * files, and augmentation report parsing. All integers little-endian.
 */

import { FormatError } from "./errors.js";

const CLOUD_MAGIC = "GPC1";

export interface BoxLabel {
  classId: number;
  /** x, y, z in meters */
  center: [number, number, number];
  /** l, w, h in meters */
  dims: [number, number, number];
  yaw: number;
  score: number;
}

export interface ReportRow {
  index: number;
  p: number;
  /** "skipped" (score gate), "yes" (points removed), "no" (processed, none removed) */
  applied: "skipped" | "yes" | "no";
  pointsBefore: number;
  pointsAfter: number;
}

export interface AugmentReportData {
  header: Record<string, string>;
  rows: ReportRow[];
}

/** Decode a GPC1 cloud buffer into an interleaved (N*4) x,y,z,i array. */
export function readCloud(data: Buffer): Float32Array {
  if (data.length < 12 || data.toString("ascii", 0, 4) !== CLOUD_MAGIC) {
    throw new FormatError("not a GPC1 cloud buffer");
  }
  const count = Number(data.readBigUInt64LE(4));
  if (data.length !== 12 + 16 * count) {
    throw new FormatError(
      `payload holds ${data.length - 12} bytes, expected ${16 * count}`,
    );
  }
  const view = new DataView(data.buffer, data.byteOffset + 12, 16 * count);
  const points = new Float32Array(count * 4);
  for (let i = 0; i < points.length; i++) {
    points[i] = view.getFloat32(i * 4, true);
  }
  return points;
}

/** Encode an interleaved (N*4) float32 array as a GPC1 cloud buffer. */
export function writeCloud(points: Float32Array): Buffer {
  if (points.length % 4 !== 0) {
    throw new FormatError(`point array length ${points.length} is not N*4`);
  }
  const count = points.length / 4;
  const out = Buffer.alloc(12 + 16 * count);
  out.write(CLOUD_MAGIC, 0, "ascii");
  out.writeBigUInt64LE(BigInt(count), 4);
  const view = new DataView(out.buffer, out.byteOffset + 12, 16 * count);
  for (let i = 0; i < points.length; i++) {
    view.setFloat32(i * 4, points[i], true);
  }
  return out;
}

/** One label per line: class_id x y z l w h yaw score. */
export function formatLabels(labels: BoxLabel[]): string {
  const lines = ["# class_id x y z l w h yaw score"];
  for (const label of labels) {
    lines.push(
      [
        label.classId.toString(),
        ...label.center.map(String),
        ...label.dims.map(String),
        String(label.yaw),
        String(label.score),
      ].join(" "),
    );
  }
  return lines.join("\n") + "\n";
}

export function parseLabels(text: string): BoxLabel[] {
  const labels: BoxLabel[] = [];
  const lines = text.split("\n");
  for (let i = 0; i < lines.length; i++) {
    const line = lines[i].trim();
    if (!line || line.startsWith("#")) continue;
    const parts = line.split(/\s+/);
    if (parts.length !== 9) {
      throw new FormatError(`line ${i + 1}: expected 9 fields, got ${parts.length}`);
    }
    const values = parts.map(Number);
    if (values.some((v) => Number.isNaN(v))) {
      throw new FormatError(`line ${i + 1}: non-numeric field`);
    }
    labels.push({
      classId: values[0],
      center: [values[1], values[2], values[3]],
      dims: [values[4], values[5], values[6]],
      yaw: values[7],
      score: values[8],
    });
  }
  return labels;
}

/** Parse the text report written by the core CLI's augment subcommand. */
export function parseAugmentReport(text: string): AugmentReportData {
  const header: Record<string, string> = {};
  const rows: ReportRow[] = [];
  for (const raw of text.split("\n")) {
    const line = raw.trim();
    if (!line) continue;
    if (line.startsWith("#")) {
      for (const token of line.slice(1).trim().split(/\s+/)) {
        const eq = token.indexOf("=");
        if (eq > 0) header[token.slice(0, eq)] = token.slice(eq + 1);
      }
      continue;
    }
    const parts = line.split(/\s+/);
    if (parts.length !== 5) {
      throw new FormatError(`malformed report row: ${line}`);
    }
    const applied = parts[2];
    if (applied !== "skipped" && applied !== "yes" && applied !== "no") {
      throw new FormatError(`unknown applied state ${applied}`);
    }
    rows.push({
      index: Number(parts[0]),
      p: Number(parts[1]),
      applied,
      pointsBefore: Number(parts[3]),
      pointsAfter: Number(parts[4]),
    });
  }
  return { header, rows };
}
