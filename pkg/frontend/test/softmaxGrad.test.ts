/**
 * Bit-identity of the browser-side math against fixtures generated by the
 * native handler. Equal base64 means equal float64 bytes, not just close.
 */

import assert from "node:assert/strict";
import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { test } from "node:test";
import { fileURLToPath } from "node:url";

import {
  b64ToBytes,
  bytesToB64,
  bytesToFloats,
  floatsToBytes,
} from "../src/protocol.js";
import { portableExp, softmaxGradient } from "../src/softmaxGrad.js";

interface GradientCase {
  name: string;
  dim_f: number;
  dim_c: number;
  w_b64: string;
  x_b64: string;
  y: number[];
  expected_grad_b64: string;
}

interface Fixture {
  gradient_cases: GradientCase[];
  exp_cases: { x: number; expected_bits: string }[];
}

const here = dirname(fileURLToPath(import.meta.url));
// dist/test/ -> fixtures live next to the TypeScript sources
const fixture = JSON.parse(
  readFileSync(join(here, "..", "..", "test", "fixtures", "softmax_grad.json"), "utf-8"),
) as Fixture;

test("portable exp matches native bit patterns", () => {
  for (const { x, expected_bits } of fixture.exp_cases) {
    const got = portableExp(x);
    const buffer = new ArrayBuffer(8);
    new DataView(buffer).setFloat64(0, got, true);
    const gotBytes = bytesToB64(new Uint8Array(buffer));

    const expected = pythonHexToNumber(expected_bits);
    const expectedBuffer = new ArrayBuffer(8);
    new DataView(expectedBuffer).setFloat64(0, expected, true);
    const expectedBytes = bytesToB64(new Uint8Array(expectedBuffer));
    assert.equal(gotBytes, expectedBytes, `exp(${x}): ${got} != ${expected}`);
  }
});

test("gradient bytes are identical to the native implementation", () => {
  for (const c of fixture.gradient_cases) {
    const weights = bytesToFloats(b64ToBytes(c.w_b64), c.dim_f, c.dim_c);
    const xs = bytesToFloats(b64ToBytes(c.x_b64), c.y.length, c.dim_f);
    const grad = softmaxGradient(weights, xs, c.y);
    const gradB64 = bytesToB64(floatsToBytes(grad));
    assert.equal(gradB64, c.expected_grad_b64, c.name);
  }
});

test("float matrix codec round-trips exactly", () => {
  const rows = [
    [0.1, -2.5e-300, 1.7976931348623157e308],
    [Number.MIN_VALUE, -0.0, 42.42],
  ];
  const bytes = floatsToBytes(rows);
  assert.equal(bytes.length, 6 * 8);
  const back = bytesToFloats(bytes, 2, 3);
  for (let r = 0; r < 2; r++) {
    for (let col = 0; col < 3; col++) {
      assert.ok(Object.is(back[r][col], rows[r][col]), `(${r},${col})`);
    }
  }
});

/** Parse python float.hex() format, e.g. "0x1.5bf0a8b145769p+1". */
function pythonHexToNumber(hex: string): number {
  if (hex === "inf") return Infinity;
  if (hex === "-inf") return -Infinity;
  const match = /^(-?)0x([0-9a-f]+)\.([0-9a-f]+)p([+-]\d+)$/.exec(hex);
  if (!match) {
    // zero and integers can print without a fraction
    const simple = /^(-?)0x([0-9a-f]+)(?:\.([0-9a-f]*))?p([+-]\d+)$/.exec(hex);
    if (!simple) throw new Error(`unparseable float hex: ${hex}`);
    return buildFloat(simple[1] === "-", simple[2], simple[3] ?? "", Number(simple[4]));
  }
  return buildFloat(match[1] === "-", match[2], match[3], Number(match[4]));
}

function buildFloat(negative: boolean, intPart: string, fraction: string, exp2: number): number {
  let value = parseInt(intPart, 16);
  let scale = 1 / 16;
  for (const digit of fraction) {
    value += parseInt(digit, 16) * scale;
    scale /= 16;
  }
  const result = value * Math.pow(2, exp2);
  return negative ? -result : result;
}
