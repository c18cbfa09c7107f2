/**
 * Closed-form softmax-regression gradient: the browser volunteer's task.
 *
 * This mirrors the native handler operation for operation. exp() is the
 * portable polynomial version (same literals, same order) because library
 * exp differs between runtimes at the last bit and the whole point is that
 * a browser's result bytes equal a native worker's.
 */

const INV_LN2 = 1.4426950408889634;
const LN2 = 0.6931471805599453;
// 1/k! for k = 0..12, shortest-round-trip doubles, identical to the Python side
const EXP_COEFFS = [
  1.0, 1.0, 0.5, 0.16666666666666666, 0.041666666666666664,
  0.008333333333333333, 0.001388888888888889, 0.0001984126984126984,
  2.48015873015873e-5, 2.7557319223985893e-6, 2.755731922398589e-7,
  2.505210838544172e-8, 2.08767569878681e-9,
];

export function portableExp(x: number): number {
  if (Number.isNaN(x)) return x;
  if (x > 709.0) return Infinity;
  if (x < -745.0) return 0.0;
  const k = Math.floor(x * INV_LN2 + 0.5);
  const r = x - k * LN2;
  let p = EXP_COEFFS[12];
  for (let i = 11; i >= 0; i--) {
    p = p * r + EXP_COEFFS[i];
  }
  return p * Math.pow(2, k);
}

/** d/dW of mean softmax cross-entropy for logits = X @ W; fixed loop order. */
export function softmaxGradient(
  weights: number[][], xs: number[][], ys: number[],
): number[][] {
  const nFeatures = weights.length;
  const nClasses = weights[0].length;
  const n = xs.length;
  const grad: number[][] = [];
  for (let f = 0; f < nFeatures; f++) {
    grad.push(new Array<number>(nClasses).fill(0.0));
  }
  for (let i = 0; i < n; i++) {
    const x = xs[i];
    const logits = new Array<number>(nClasses);
    for (let c = 0; c < nClasses; c++) {
      let s = 0.0;
      for (let f = 0; f < nFeatures; f++) {
        s += x[f] * weights[f][c];
      }
      logits[c] = s;
    }
    let m = logits[0];
    for (let c = 1; c < nClasses; c++) {
      if (logits[c] > m) m = logits[c];
    }
    const exps = new Array<number>(nClasses);
    for (let c = 0; c < nClasses; c++) {
      exps[c] = portableExp(logits[c] - m);
    }
    let denom = 0.0;
    for (let c = 0; c < nClasses; c++) {
      denom += exps[c];
    }
    for (let c = 0; c < nClasses; c++) {
      const p = exps[c] / denom;
      const d = p - (c === ys[i] ? 1.0 : 0.0);
      for (let f = 0; f < nFeatures; f++) {
        grad[f][c] += x[f] * d;
      }
    }
  }
  for (let f = 0; f < nFeatures; f++) {
    for (let c = 0; c < nClasses; c++) {
      grad[f][c] = grad[f][c] / n;
    }
  }
  return grad;
}

export interface SoftmaxTaskPayload {
  dim_f: number;
  dim_c: number;
  w_b64: string;
  x_b64: string;
  y: number[];
  result_key: string;
}
