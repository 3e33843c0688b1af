/**
 * Deterministic stroke rasterizer and PNG writer.
 *
 * Exports are always 256x256 regardless of the on-screen canvas size, so the
 * service sees the same input no matter how the page is laid out. Rendering
 * is done in plain arithmetic (point-to-segment distance, no anti-aliasing,
 * no platform 2D context), which makes the bytes reproducible everywhere.
 */

import { CanvasSize, CanvasStroke } from "./types.js";

export const EXPORT_SIZE = 256;

/** White RGBA canvas with the strokes drawn in solid black. */
export function rasterizeStrokes(
  strokes: CanvasStroke[],
  canvasSize: CanvasSize,
  size: number = EXPORT_SIZE,
): Uint8Array {
  const pixels = new Uint8Array(size * size * 4).fill(255);
  const sx = size / canvasSize.width;
  const sy = size / canvasSize.height;
  const widthScale = (sx + sy) / 2;
  for (const stroke of strokes) {
    const radius = Math.max((stroke.width * widthScale) / 2, 0.5);
    for (let i = 0; i + 1 < stroke.points.length; i++) {
      const a = stroke.points[i]!;
      const b = stroke.points[i + 1]!;
      drawSegment(pixels, size, a.x * sx, a.y * sy, b.x * sx, b.y * sy, radius);
    }
  }
  return pixels;
}

function drawSegment(
  pixels: Uint8Array, size: number,
  x0: number, y0: number, x1: number, y1: number, radius: number,
): void {
  const minX = Math.max(0, Math.floor(Math.min(x0, x1) - radius - 1));
  const maxX = Math.min(size - 1, Math.ceil(Math.max(x0, x1) + radius + 1));
  const minY = Math.max(0, Math.floor(Math.min(y0, y1) - radius - 1));
  const maxY = Math.min(size - 1, Math.ceil(Math.max(y0, y1) + radius + 1));
  const dx = x1 - x0;
  const dy = y1 - y0;
  const lenSq = dx * dx + dy * dy;
  const r2 = radius * radius;
  for (let py = minY; py <= maxY; py++) {
    for (let px = minX; px <= maxX; px++) {
      const cx = px + 0.5;
      const cy = py + 0.5;
      // closest point on the segment, with round caps at both ends
      let t = lenSq > 0 ? ((cx - x0) * dx + (cy - y0) * dy) / lenSq : 0;
      t = Math.min(1, Math.max(0, t));
      const ex = cx - (x0 + t * dx);
      const ey = cy - (y0 + t * dy);
      if (ex * ex + ey * ey <= r2) {
        const o = (py * size + px) * 4;
        pixels[o] = 0;
        pixels[o + 1] = 0;
        pixels[o + 2] = 0;
        pixels[o + 3] = 255;
      }
    }
  }
}

export function countNonWhite(pixels: Uint8Array): number {
  let n = 0;
  for (let o = 0; o < pixels.length; o += 4) {
    if (pixels[o] !== 255 || pixels[o + 1] !== 255 || pixels[o + 2] !== 255) n++;
  }
  return n;
}

// -- PNG writing -------------------------------------------------------------
// Minimal writer: 8-bit RGBA, filter 0 on every row, IDAT holds a zlib stream
// of stored (uncompressed) deflate blocks. No timestamps or ancillary chunks,
// so identical pixels give identical bytes.

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    table[n] = c >>> 0;
  }
  return table;
})();

function crc32(bytes: Uint8Array): number {
  let c = 0xffffffff;
  for (let i = 0; i < bytes.length; i++) {
    c = CRC_TABLE[(c ^ bytes[i]!) & 0xff]! ^ (c >>> 8);
  }
  return (c ^ 0xffffffff) >>> 0;
}

function adler32(bytes: Uint8Array): number {
  let a = 1;
  let b = 0;
  for (let i = 0; i < bytes.length; i++) {
    a = (a + bytes[i]!) % 65521;
    b = (b + a) % 65521;
  }
  return ((b << 16) | a) >>> 0;
}

function be32(value: number): Uint8Array {
  return new Uint8Array([(value >>> 24) & 0xff, (value >>> 16) & 0xff,
                         (value >>> 8) & 0xff, value & 0xff]);
}

function chunk(type: string, data: Uint8Array): Uint8Array {
  const typeBytes = new Uint8Array([...type].map((ch) => ch.charCodeAt(0)));
  const body = concat([typeBytes, data]);
  return concat([be32(data.length), body, be32(crc32(body))]);
}

function concat(parts: Uint8Array[]): Uint8Array {
  const total = parts.reduce((n, p) => n + p.length, 0);
  const out = new Uint8Array(total);
  let o = 0;
  for (const p of parts) {
    out.set(p, o);
    o += p.length;
  }
  return out;
}

function zlibStored(raw: Uint8Array): Uint8Array {
  const parts: Uint8Array[] = [new Uint8Array([0x78, 0x01])];
  const maxBlock = 65535;
  for (let o = 0; o < raw.length || o === 0; o += maxBlock) {
    const piece = raw.subarray(o, Math.min(o + maxBlock, raw.length));
    const final = o + maxBlock >= raw.length ? 1 : 0;
    const len = piece.length;
    parts.push(new Uint8Array([final, len & 0xff, (len >>> 8) & 0xff,
                               ~len & 0xff, (~len >>> 8) & 0xff]));
    parts.push(piece);
    if (raw.length === 0) break;
  }
  parts.push(be32(adler32(raw)));
  return concat(parts);
}

/** Encode 8-bit RGBA pixels (row-major) as a PNG file. */
export function encodePng(pixels: Uint8Array, width: number, height: number): Uint8Array {
  if (pixels.length !== width * height * 4) {
    throw new Error(`expected ${width * height * 4} RGBA bytes, got ${pixels.length}`);
  }
  const stride = width * 4;
  const raw = new Uint8Array((stride + 1) * height);
  for (let y = 0; y < height; y++) {
    raw[y * (stride + 1)] = 0; // filter: none
    raw.set(pixels.subarray(y * stride, (y + 1) * stride), y * (stride + 1) + 1);
  }
  const ihdr = concat([be32(width), be32(height),
                       new Uint8Array([8, 6, 0, 0, 0])]);
  return concat([
    new Uint8Array([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a]),
    chunk("IHDR", ihdr),
    chunk("IDAT", zlibStored(raw)),
    chunk("IEND", new Uint8Array(0)),
  ]);
}

/** Rasterize and encode in one step: the canvas-export used on submit. */
export function exportStrokesPng(strokes: CanvasStroke[], canvasSize: CanvasSize): Uint8Array {
  return encodePng(rasterizeStrokes(strokes, canvasSize), EXPORT_SIZE, EXPORT_SIZE);
}

// -- base64 ------------------------------------------------------------------
// Own implementation so the same bytes encode identically in the browser and
// in the node test runner.

const B64_ALPHABET = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
const B64_LOOKUP = (() => {
  const lookup = new Int8Array(128).fill(-1);
  for (let i = 0; i < B64_ALPHABET.length; i++) lookup[B64_ALPHABET.charCodeAt(i)] = i;
  return lookup;
})();

export function toBase64(bytes: Uint8Array): string {
  let out = "";
  for (let i = 0; i < bytes.length; i += 3) {
    const b0 = bytes[i]!;
    const b1 = i + 1 < bytes.length ? bytes[i + 1]! : 0;
    const b2 = i + 2 < bytes.length ? bytes[i + 2]! : 0;
    out += B64_ALPHABET[b0 >> 2]! + B64_ALPHABET[((b0 & 3) << 4) | (b1 >> 4)]!;
    out += i + 1 < bytes.length ? B64_ALPHABET[((b1 & 15) << 2) | (b2 >> 6)]! : "=";
    out += i + 2 < bytes.length ? B64_ALPHABET[b2 & 63]! : "=";
  }
  return out;
}

export function fromBase64(text: string): Uint8Array {
  if (text.length % 4 !== 0) throw new Error("invalid base64: length not a multiple of 4");
  const pad = text.endsWith("==") ? 2 : text.endsWith("=") ? 1 : 0;
  const out = new Uint8Array((text.length / 4) * 3 - pad);
  let o = 0;
  for (let i = 0; i < text.length; i += 4) {
    if (text[i + 2] === "=" && text[i + 3] !== "=") {
      throw new Error("invalid base64: data after padding");
    }
    const values: number[] = [];
    for (let j = 0; j < 4; j++) {
      const ch = text.charCodeAt(i + j);
      if (text[i + j] === "=") {
        if (i + 4 < text.length || j < 2) throw new Error("invalid base64: stray padding");
        values.push(0);
        continue;
      }
      const v = ch < 128 ? B64_LOOKUP[ch]! : -1;
      if (v < 0) throw new Error(`invalid base64: bad character ${text[i + j]}`);
      values.push(v);
    }
    const [v0, v1, v2, v3] = values as [number, number, number, number];
    const triple = (v0 << 18) | (v1 << 12) | (v2 << 6) | v3;
    if (o < out.length) out[o++] = (triple >> 16) & 0xff;
    if (o < out.length) out[o++] = (triple >> 8) & 0xff;
    if (o < out.length) out[o++] = triple & 0xff;
  }
  return out;
}

/** FNV-1a over the bytes; used for cheap snapshot comparisons. */
export function hashBytes(bytes: Uint8Array): number {
  let h = 0x811c9dc5;
  for (let i = 0; i < bytes.length; i++) {
    h ^= bytes[i]!;
    h = Math.imul(h, 0x01000193);
  }
  return h >>> 0;
}
