/**
 * Keypoint relation losses and gradients, re-implemented natively in
 * float64 so training pipelines can evaluate them in-process. Formulas
 * and summation order mirror the core library; equivalence is enforced
 * against core-generated fixtures to 1e-12.
 */

import { BoundaryError } from "./errors.js";

export interface RelationOptions {
  /** objects with score below this are excluded from the loss */
  scoreThreshold?: number;
  /** zero-norm guard inside the cosine denominator */
  epsilonNorm?: number;
  /** pair student rows with student columns instead of teacher columns */
  selfPairing?: boolean;
}

export interface RelationResult {
  loss: number;
  /** same nesting as the student features */
  gradient: number[][][] | number[][];
  perObject: { score: number; loss: number; included: boolean }[];
}

type Matrix = number[][];

const DEFAULT_EPSILON = 1e-8;

function checkFeatureRows(features: unknown, name: string): Matrix {
  if (!Array.isArray(features) || features.length === 0) {
    throw new BoundaryError(name, "expected a non-empty (K, C) array");
  }
  const rows = features as number[][];
  const width = Array.isArray(rows[0]) ? rows[0].length : -1;
  for (const row of rows) {
    if (!Array.isArray(row) || row.length !== width || width < 1) {
      throw new BoundaryError(name, "rows must be equal-length numeric vectors");
    }
  }
  return rows;
}

function clip(value: number): number {
  return Math.min(1.0, Math.max(-1.0, value));
}

function dot(u: number[], v: number[]): number {
  let total = 0.0;
  for (let c = 0; c < u.length; c++) total += u[c] * v[c];
  return total;
}

function norms(rows: Matrix): number[] {
  return rows.map((row) => Math.sqrt(dot(row, row)));
}

/** Clamped cosine of two equal-length vectors. */
export function cosineSimilarity(
  u: number[],
  v: number[],
  epsilonNorm: number = DEFAULT_EPSILON,
): number {
  if (u.length !== v.length || u.length === 0) {
    throw new BoundaryError("vectors", "expected two equal-length vectors");
  }
  const denom = Math.max(Math.sqrt(dot(u, u)) * Math.sqrt(dot(v, v)), epsilonNorm);
  return clip(dot(u, v) / denom);
}

function cosineMatrix(a: Matrix, b: Matrix, epsilonNorm: number): Matrix {
  const na = norms(a);
  const nb = a === b ? na : norms(b);
  return a.map((row, i) =>
    b.map((col, j) => clip(dot(row, col) / Math.max(na[i] * nb[j], epsilonNorm))),
  );
}

/** Student relations: entry (i, j) pairs student row i with teacher row j. */
export function studentRelationMatrix(
  fS: number[][],
  fT: number[][],
  epsilonNorm: number = DEFAULT_EPSILON,
  selfPairing = false,
): Matrix {
  const s = checkFeatureRows(fS, "fS");
  const t = checkFeatureRows(fT, "fT");
  if (s.length !== t.length || s[0].length !== t[0].length) {
    throw new BoundaryError("fT", "student/teacher shapes differ");
  }
  return cosineMatrix(s, selfPairing ? s : t, epsilonNorm);
}

/** Teacher self-relations; symmetric with unit diagonal for nonzero rows. */
export function teacherRelationMatrix(
  fT: number[][],
  epsilonNorm: number = DEFAULT_EPSILON,
): Matrix {
  const t = checkFeatureRows(fT, "fT");
  return cosineMatrix(t, t, epsilonNorm);
}

/** Mean absolute difference over all K^2 relation entries. */
export function relationLoss(mS: Matrix, mT: Matrix): number {
  if (mS.length !== mT.length || mS.length === 0 || mS[0].length !== mT[0].length) {
    throw new BoundaryError("matrices", "relation matrix shapes differ");
  }
  let total = 0.0;
  for (let i = 0; i < mS.length; i++) {
    for (let j = 0; j < mS[i].length; j++) {
      total += Math.abs(mS[i][j] - mT[i][j]);
    }
  }
  return total / (mS.length * mS[0].length);
}

/** Sum of score * per-object loss over objects at or above the threshold. */
export function weightedRelationLoss(
  perObject: [number, number][],
  scoreThreshold = 0.0,
): number {
  let total = 0.0;
  for (const [score, loss] of perObject) {
    if (score < 0.0 || score > 1.0) {
      throw new BoundaryError("scores", `score ${score} outside [0, 1]`);
    }
    if (score >= scoreThreshold) total += score * loss;
  }
  return total;
}

/** Combined objective: base loss plus lambda1-weighted relation loss. */
export function totalLoss(lBase: number, lGrs: number, lambda1: number): number {
  if (!Number.isFinite(lBase) || !Number.isFinite(lGrs) || lBase < 0 || lGrs < 0) {
    throw new BoundaryError("losses", "losses must be finite and non-negative");
  }
  return lBase + lambda1 * lGrs;
}

function lossAndGradSingle(
  u: Matrix,
  fT: Matrix,
  epsilonNorm: number,
  selfPairing: boolean,
): { loss: number; grad: Matrix } {
  const v = selfPairing ? u : fT;
  const k = u.length;
  const nu = norms(u);
  const nv = selfPairing ? nu : norms(v);
  const mT = cosineMatrix(fT, fT, epsilonNorm);

  const grad: Matrix = u.map((row) => row.map(() => 0.0));
  let lossSum = 0.0;
  const rowScale = new Array(k).fill(0.0);
  const colScale = new Array(k).fill(0.0);

  for (let i = 0; i < k; i++) {
    for (let j = 0; j < k; j++) {
      const prod = nu[i] * nv[j];
      const denom = Math.max(prod, epsilonNorm);
      const raw = dot(u[i], v[j]) / denom;
      const diff = clip(raw) - mT[i][j];
      lossSum += Math.abs(diff);

      const coef = Math.sign(diff) * (Math.abs(raw) <= 1.0 ? 1.0 : 0.0) / (k * k);
      if (coef === 0.0) continue;
      const a = coef / denom;
      for (let c = 0; c < u[i].length; c++) grad[i][c] += a * v[j][c];
      if (selfPairing) {
        for (let c = 0; c < u[i].length; c++) grad[j][c] += a * u[i][c];
      }
      if (prod > epsilonNorm) {
        const scaled = coef * raw;
        rowScale[i] += scaled / (nu[i] > 0 ? nu[i] * nu[i] : 1.0);
        if (selfPairing) {
          colScale[j] += scaled / (nv[j] > 0 ? nv[j] * nv[j] : 1.0);
        }
      }
    }
  }
  for (let i = 0; i < k; i++) {
    const scale = rowScale[i] + (selfPairing ? colScale[i] : 0.0);
    if (scale === 0.0) continue;
    for (let c = 0; c < u[i].length; c++) grad[i][c] -= scale * u[i][c];
  }
  return { loss: lossSum / (k * k), grad };
}

function isBatch(features: unknown): features is number[][][] {
  return Array.isArray(features) && Array.isArray((features as unknown[][])[0]?.[0]);
}

/**
 * Score-weighted relation loss over objects with its exact gradient with
 * respect to the student features. Accepts a single (K, C) object or an
 * (n, K, C) batch; the teacher is a constant. Inputs are never mutated.
 */
export function relationLossGradient(
  fS: number[][] | number[][][],
  fT: number[][] | number[][][],
  scores: number | number[],
  options: RelationOptions = {},
): RelationResult {
  const threshold = options.scoreThreshold ?? 0.0;
  const epsilon = options.epsilonNorm ?? DEFAULT_EPSILON;
  const selfPairing = options.selfPairing ?? false;
  if (!(epsilon > 0)) {
    throw new BoundaryError("epsilonNorm", "must be > 0");
  }

  const single = !isBatch(fS);
  const batchS = (single ? [fS] : fS) as number[][][];
  const batchT = (isBatch(fT) ? fT : [fT]) as number[][][];
  const scoreList = typeof scores === "number" ? [scores] : scores;
  if (batchS.length !== batchT.length || batchS.length !== scoreList.length) {
    throw new BoundaryError(
      "scores",
      `expected ${batchS.length} teacher objects and scores`,
    );
  }

  let loss = 0.0;
  const gradient: number[][][] = [];
  const perObject: RelationResult["perObject"] = [];
  for (let n = 0; n < batchS.length; n++) {
    const u = checkFeatureRows(batchS[n], `fS[${n}]`);
    const t = checkFeatureRows(batchT[n], `fT[${n}]`);
    if (u.length !== t.length || u[0].length !== t[0].length) {
      throw new BoundaryError(`fT[${n}]`, "student/teacher shapes differ");
    }
    const score = scoreList[n];
    if (score < 0.0 || score > 1.0) {
      throw new BoundaryError("scores", `score ${score} outside [0, 1]`);
    }
    const { loss: lDelta, grad } = lossAndGradSingle(u, t, epsilon, selfPairing);
    const included = score >= threshold;
    if (included) {
      loss += score * lDelta;
      gradient.push(grad.map((row) => row.map((g) => score * g)));
    } else {
      gradient.push(u.map((row) => row.map(() => 0.0)));
    }
    perObject.push({ score, loss: lDelta, included });
  }
  return { loss, gradient: single ? gradient[0] : gradient, perObject };
}
