import { readFileSync } from "node:fs";
import { join } from "node:path";

import { describe, expect, it } from "vitest";

import {
  BoundaryError,
  cosineSimilarity,
  relationLoss,
  relationLossGradient,
  studentRelationMatrix,
  teacherRelationMatrix,
  totalLoss,
  weightedRelationLoss,
} from "../src/index.js";

const FIXTURES = join(__dirname, "..", "fixtures", "relation.json");

interface RelationCase {
  fS: number[][][];
  fT: number[][][];
  scores: number[];
  scoreThreshold: number;
  epsilonNorm: number;
  selfPairing: boolean;
  loss: number;
  gradient: number[][][];
  perObjectLoss: number[];
}

function closeTo(a: number, b: number, tol = 1e-12): boolean {
  return Math.abs(a - b) <= tol * Math.max(1.0, Math.abs(a), Math.abs(b));
}

describe("relation primitives", () => {
  it("cosine of identical vectors is 1", () => {
    expect(cosineSimilarity([0.3, -1.2, 4.0], [0.3, -1.2, 4.0])).toBeCloseTo(1.0, 12);
  });

  it("cosine of orthogonal vectors is 0", () => {
    expect(cosineSimilarity([1, 0], [0, 2])).toBe(0);
  });

  it("zero vectors are guarded, not NaN", () => {
    expect(cosineSimilarity([0, 0], [1, 0])).toBe(0);
  });

  it("reproduces the K=2 cross-pairing matrices", () => {
    const rootHalf = 1 / Math.sqrt(2);
    const fS = [
      [1, 0],
      [0, 1],
    ];
    const fT = [
      [1, 0],
      [rootHalf, rootHalf],
    ];
    const mS = studentRelationMatrix(fS, fT);
    expect(mS[0][0]).toBeCloseTo(1, 12);
    expect(mS[0][1]).toBeCloseTo(rootHalf, 12);
    expect(mS[1][0]).toBeCloseTo(0, 12);
    expect(mS[1][1]).toBeCloseTo(rootHalf, 12);

    const mT = teacherRelationMatrix([
      [1, 0],
      [1, 1],
    ]);
    expect(mT[0][1]).toBeCloseTo(rootHalf, 12);
    expect(mT[1][0]).toBeCloseTo(rootHalf, 12);
    expect(mT[0][0]).toBeCloseTo(1, 12);
    expect(mT[1][1]).toBeCloseTo(1, 12);
  });

  it("relation loss of equal matrices is 0, unit gap is 1", () => {
    const ones = [
      [1, 1],
      [1, 1],
    ];
    const zeros = [
      [0, 0],
      [0, 0],
    ];
    expect(relationLoss(ones, ones)).toBe(0);
    expect(relationLoss(ones, zeros)).toBe(1);
  });

  it("weighted loss applies the threshold and the weights", () => {
    expect(weightedRelationLoss([[0.8, 0.5]], 0)).toBeCloseTo(0.4, 12);
    expect(weightedRelationLoss([[0.9, 1.0], [0.2, 1.0]], 0.3)).toBeCloseTo(0.9, 12);
    expect(weightedRelationLoss([], 0)).toBe(0);
  });

  it("total loss follows base + lambda1 * relation", () => {
    expect(totalLoss(1.0, 0.5, 2.0)).toBe(2.0);
    expect(totalLoss(1.3, 0.7, 0.0)).toBe(1.3);
  });
});

describe("relation gradient", () => {
  it("is zero at identity", () => {
    const f = [
      [0.5, -1.0, 2.0],
      [1.5, 0.25, -0.75],
    ];
    const copy = f.map((row) => [...row]);
    const { loss, gradient } = relationLossGradient(f, copy, 0.9, {
      scoreThreshold: 0,
    });
    expect(loss).toBe(0);
    for (const row of gradient as number[][]) {
      for (const g of row) expect(g).toBe(0);
    }
  });

  it("returns zeros for zero scores", () => {
    const fS = [
      [1.0, 2.0],
      [3.0, -1.0],
    ];
    const fT = [
      [0.5, 0.5],
      [-2.0, 1.0],
    ];
    const { loss, gradient } = relationLossGradient(fS, fT, 0.0, {
      scoreThreshold: 0.3,
    });
    expect(loss).toBe(0);
    for (const row of gradient as number[][]) {
      for (const g of row) expect(g).toBe(0);
    }
  });

  it("does not mutate its inputs", () => {
    const fS = [
      [1.0, 2.0],
      [3.0, -1.0],
    ];
    const fT = [
      [0.5, 0.5],
      [-2.0, 1.0],
    ];
    const sCopy = JSON.stringify(fS);
    const tCopy = JSON.stringify(fT);
    relationLossGradient(fS, fT, 0.7, {});
    expect(JSON.stringify(fS)).toBe(sCopy);
    expect(JSON.stringify(fT)).toBe(tCopy);
  });

  it("rejects mismatched shapes with a typed error", () => {
    expect(() =>
      relationLossGradient([[1, 0]], [[1, 0, 0]], 1.0, {}),
    ).toThrow(BoundaryError);
    expect(() =>
      relationLossGradient([[1, 0]], [[1, 0]], [0.5, 0.5], {}),
    ).toThrow(BoundaryError);
  });

  it("matches the core on 200 fixture cases to 1e-12", () => {
    const data = JSON.parse(readFileSync(FIXTURES, "utf-8")) as {
      cases: RelationCase[];
    };
    expect(data.cases).toHaveLength(200);
    let worst = 0;
    for (const c of data.cases) {
      const result = relationLossGradient(c.fS, c.fT, c.scores, {
        scoreThreshold: c.scoreThreshold,
        epsilonNorm: c.epsilonNorm,
        selfPairing: c.selfPairing,
      });
      expect(closeTo(result.loss, c.loss)).toBe(true);
      worst = Math.max(worst, Math.abs(result.loss - c.loss));
      const grad = result.gradient as number[][][];
      for (let n = 0; n < c.gradient.length; n++) {
        for (let i = 0; i < c.gradient[n].length; i++) {
          for (let j = 0; j < c.gradient[n][i].length; j++) {
            const got = grad[n][i][j];
            const want = c.gradient[n][i][j];
            expect(closeTo(got, want)).toBe(true);
            worst = Math.max(worst, Math.abs(got - want));
          }
        }
      }
      result.perObject.forEach((obj, n) => {
        expect(closeTo(obj.loss, c.perObjectLoss[n])).toBe(true);
      });
    }
    // eslint-disable-next-line no-console
    console.log(`relation fixtures: worst absolute deviation ${worst.toExponential(2)}`);
  });
});
