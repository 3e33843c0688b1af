import { describe, expect, it } from "vitest";

import {
  EXPORT_SIZE,
  countNonWhite,
  encodePng,
  exportStrokesPng,
  fromBase64,
  hashBytes,
  rasterizeStrokes,
  toBase64,
} from "../src/raster.js";
import { CanvasStroke } from "../src/types.js";

const CANVAS = { width: 512, height: 512 };

function stroke(points: Array<[number, number]>, width = 4): CanvasStroke {
  return { points: points.map(([x, y]) => ({ x, y })), width };
}

// Independent reader for the writer's output: walks the chunk list, inflates
// the stored-block zlib stream by hand, strips the per-row filter bytes.
function decodeStoredPng(png: Uint8Array): {
  width: number;
  height: number;
  pixels: Uint8Array;
} {
  const be32 = (o: number) =>
    (png[o]! << 24 | png[o + 1]! << 16 | png[o + 2]! << 8 | png[o + 3]!) >>> 0;
  expect([...png.subarray(0, 8)]).toEqual([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a]);
  let o = 8;
  let width = 0;
  let height = 0;
  const idat: number[] = [];
  let sawEnd = false;
  while (o < png.length) {
    const len = be32(o);
    const type = String.fromCharCode(...png.subarray(o + 4, o + 8));
    const data = png.subarray(o + 8, o + 8 + len);
    if (type === "IHDR") {
      width = be32(o + 8);
      height = be32(o + 12);
      // bit depth 8, RGBA, default compression/filter/interlace
      expect([...data.subarray(8)]).toEqual([8, 6, 0, 0, 0]);
    } else if (type === "IDAT") {
      idat.push(...data);
    } else if (type === "IEND") {
      expect(len).toBe(0);
      sawEnd = true;
    }
    o += 12 + len;
  }
  expect(sawEnd).toBe(true);
  expect(o).toBe(png.length);

  expect(idat[0]! & 0x0f).toBe(8); // zlib: deflate method
  const raw: number[] = [];
  let p = 2;
  for (;;) {
    const final = idat[p]! & 1;
    expect(idat[p]! >> 1).toBe(0); // stored block
    const blockLen = idat[p + 1]! | (idat[p + 2]! << 8);
    const nlen = idat[p + 3]! | (idat[p + 4]! << 8);
    expect((blockLen ^ nlen) & 0xffff).toBe(0xffff);
    raw.push(...idat.slice(p + 5, p + 5 + blockLen));
    p += 5 + blockLen;
    if (final === 1) break;
  }
  // adler32 trailer over the decompressed bytes
  let a = 1;
  let b = 0;
  for (const byte of raw) {
    a = (a + byte) % 65521;
    b = (b + a) % 65521;
  }
  const adler = (idat[p]! << 24 | idat[p + 1]! << 16 | idat[p + 2]! << 8 | idat[p + 3]!) >>> 0;
  expect(adler).toBe((((b << 16) | a) >>> 0));

  const stride = width * 4;
  expect(raw.length).toBe((stride + 1) * height);
  const pixels = new Uint8Array(stride * height);
  for (let y = 0; y < height; y++) {
    expect(raw[y * (stride + 1)]).toBe(0); // filter byte: none
    pixels.set(raw.slice(y * (stride + 1) + 1, (y + 1) * (stride + 1)), y * stride);
  }
  return { width, height, pixels };
}

describe("rasterizeStrokes", () => {
  it("renders an empty stroke list as solid white", () => {
    const pixels = rasterizeStrokes([], CANVAS);
    expect(pixels.length).toBe(EXPORT_SIZE * EXPORT_SIZE * 4);
    expect(countNonWhite(pixels)).toBe(0);
    expect(pixels.every((v) => v === 255)).toBe(true);
  });

  it("puts ink on the canvas for a single stroke", () => {
    const pixels = rasterizeStrokes([stroke([[100, 100], [400, 400]])], CANVAS);
    expect(countNonWhite(pixels)).toBeGreaterThan(0);
  });

  it("draws only pure black pixels over the white background", () => {
    const pixels = rasterizeStrokes([stroke([[50, 250], [450, 250]], 10)], CANVAS);
    for (let o = 0; o < pixels.length; o += 4) {
      const rgb = [pixels[o], pixels[o + 1], pixels[o + 2]];
      expect(rgb.every((v) => v === 0) || rgb.every((v) => v === 255)).toBe(true);
      expect(pixels[o + 3]).toBe(255);
    }
  });

  it("scales canvas coordinates into the fixed export grid", () => {
    // horizontal line halfway down a 512-canvas -> ink at export row ~128
    const pixels = rasterizeStrokes([stroke([[0, 256], [512, 256]], 8)], CANVAS);
    const rowHasInk = (y: number) => {
      for (let x = 0; x < EXPORT_SIZE; x++) {
        if (pixels[(y * EXPORT_SIZE + x) * 4] === 0) return true;
      }
      return false;
    };
    expect(rowHasInk(128) || rowHasInk(127)).toBe(true);
    expect(rowHasInk(10)).toBe(false);
    expect(rowHasInk(245)).toBe(false);
  });

  it("covers more pixels with a wider stroke", () => {
    const thin = rasterizeStrokes([stroke([[50, 250], [450, 250]], 2)], CANVAS);
    const wide = rasterizeStrokes([stroke([[50, 250], [450, 250]], 16)], CANVAS);
    expect(countNonWhite(wide)).toBeGreaterThan(countNonWhite(thin));
  });

  it("is deterministic for an identical stroke list", () => {
    const strokes = [stroke([[10, 20], [200, 220], [400, 100]]), stroke([[5, 5], [5, 100]], 2)];
    const first = exportStrokesPng(strokes, CANVAS);
    const second = exportStrokesPng(strokes, CANVAS);
    expect(hashBytes(first)).toBe(hashBytes(second));
    expect([...first]).toEqual([...second]);
  });

  it("produces different bytes for different sketches", () => {
    const one = exportStrokesPng([stroke([[10, 10], [100, 100]])], CANVAS);
    const two = exportStrokesPng([stroke([[10, 10], [100, 101]])], CANVAS);
    expect(hashBytes(one)).not.toBe(hashBytes(two));
  });
});

describe("encodePng", () => {
  it("writes a decodable all-white export for an empty canvas", () => {
    const png = exportStrokesPng([], CANVAS);
    const decoded = decodeStoredPng(png);
    expect(decoded.width).toBe(EXPORT_SIZE);
    expect(decoded.height).toBe(EXPORT_SIZE);
    expect(decoded.pixels.every((v) => v === 255)).toBe(true);
  });

  it("round-trips stroke pixels exactly through the file format", () => {
    const strokes = [stroke([[30, 40], [300, 460]], 6), stroke([[400, 50], [100, 90]], 3)];
    const pixels = rasterizeStrokes(strokes, CANVAS);
    const decoded = decodeStoredPng(encodePng(pixels, EXPORT_SIZE, EXPORT_SIZE));
    expect([...decoded.pixels]).toEqual([...pixels]);
  });

  it("ends with the canonical IEND chunk", () => {
    const png = exportStrokesPng([], CANVAS);
    expect([...png.subarray(png.length - 12)]).toEqual(
      [0x00, 0x00, 0x00, 0x00, 0x49, 0x45, 0x4e, 0x44, 0xae, 0x42, 0x60, 0x82]);
  });

  it("rejects a pixel buffer that does not match the dimensions", () => {
    expect(() => encodePng(new Uint8Array(10), 4, 4)).toThrow(/RGBA bytes/);
  });
});

describe("base64", () => {
  it("encodes exactly like the platform encoder", () => {
    for (let len = 0; len <= 67; len++) {
      const bytes = new Uint8Array(len);
      for (let i = 0; i < len; i++) bytes[i] = (i * 37 + len * 101) % 256;
      expect(toBase64(bytes)).toBe(Buffer.from(bytes).toString("base64"));
    }
  });

  it("round-trips binary data", () => {
    const png = exportStrokesPng([stroke([[1, 2], [100, 200]])], CANVAS);
    expect([...fromBase64(toBase64(png))]).toEqual([...png]);
  });

  it("rejects malformed input", () => {
    expect(() => fromBase64("abc")).toThrow(/multiple of 4/);
    expect(() => fromBase64("ab!=")).toThrow(/bad character/);
    expect(() => fromBase64("a=bc")).toThrow(/padding/);
    expect(() => fromBase64("ab=c")).toThrow(/padding/);
    expect(() => fromBase64("====")).toThrow(/padding/);
    expect(() => fromBase64("AAAA====")).toThrow(/padding/);
  });
});
