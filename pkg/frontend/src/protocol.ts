/**
 * Wire types and codecs for the coordinator's framed-JSON protocol.
 *
 * One JSON object per WebSocket text message; responses are either
 * {ok: ...} or {err: code, detail: ...}. Binary payloads travel base64;
 * float matrices are packed row-major as little-endian float64, bit-exactly
 * what the native side reads and writes.
 */

export interface TaskEnvelope {
  task_id: number;
  job_id: string;
  kind: string;
  payload_b64: string;
  required_model_version: number;
  delivery_count: number;
  max_duration_ms: number;
}

export interface LeaseMsg {
  lease_id: string;
  task: TaskEnvelope;
  worker_id: string;
  issued_at: number;
  deadline: number;
}

export interface DepthMsg {
  pending: number;
  leased: number;
}

export class WireError extends Error {
  constructor(public code: string, detail: string) {
    super(`${code}: ${detail}`);
  }
}

export function customKind(name: string): string {
  return `custom:${name}`;
}

const textEncoder = new TextEncoder();
const textDecoder = new TextDecoder();

export function bytesToB64(bytes: Uint8Array): string {
  let binary = "";
  for (let i = 0; i < bytes.length; i++) {
    binary += String.fromCharCode(bytes[i]);
  }
  return btoa(binary);
}

export function b64ToBytes(b64: string): Uint8Array {
  const binary = atob(b64);
  const bytes = new Uint8Array(binary.length);
  for (let i = 0; i < binary.length; i++) {
    bytes[i] = binary.charCodeAt(i);
  }
  return bytes;
}

export function textToB64(text: string): string {
  return bytesToB64(textEncoder.encode(text));
}

export function b64ToText(b64: string): string {
  return textDecoder.decode(b64ToBytes(b64));
}

/** Pack a row-major matrix as little-endian float64 bytes. */
export function floatsToBytes(rows: number[][]): Uint8Array {
  const cols = rows.length > 0 ? rows[0].length : 0;
  const out = new Uint8Array(rows.length * cols * 8);
  const view = new DataView(out.buffer);
  let offset = 0;
  for (const row of rows) {
    for (const value of row) {
      view.setFloat64(offset, value, true);
      offset += 8;
    }
  }
  return out;
}

export function bytesToFloats(bytes: Uint8Array, nRows: number, nCols: number): number[][] {
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  const rows: number[][] = [];
  let offset = 0;
  for (let r = 0; r < nRows; r++) {
    const row: number[] = [];
    for (let c = 0; c < nCols; c++) {
      row.push(view.getFloat64(offset, true));
      offset += 8;
    }
    rows.push(row);
  }
  return rows;
}

export function parseResponse(text: string): unknown {
  const obj = JSON.parse(text) as { ok?: unknown; err?: string; detail?: string };
  if (obj && typeof obj === "object" && "err" in obj && obj.err !== undefined) {
    throw new WireError(obj.err, obj.detail ?? "");
  }
  return obj.ok;
}
