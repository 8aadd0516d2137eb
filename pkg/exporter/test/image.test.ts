import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { describe, expect, it } from "vitest";

import {
  CHANNEL_MEAN,
  CHANNEL_STD,
  readMask,
  readPgm,
  readPpm,
  resizeBicubic,
  standardize,
} from "../src/image.js";
import { writePgm, writePpm } from "./toydata.js";

const tmp = () => mkdtempSync(join(tmpdir(), "img-"));

describe("netpbm parsing", () => {
  it("reads P6 pixel data back exactly", () => {
    const dir = tmp();
    const pixels = new Uint8Array([0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11]);
    writePpm(join(dir, "a.ppm"), 2, 2, pixels);
    const img = readPpm(join(dir, "a.ppm"));
    expect(img.width).toBe(2);
    expect(img.height).toBe(2);
    expect([...img.pixels]).toEqual([...pixels]);
  });

  it("tolerates comments in the header", () => {
    const dir = tmp();
    const body = Buffer.from([9, 8, 7, 6]);
    writeFileSync(
      join(dir, "c.pgm"),
      Buffer.concat([Buffer.from("P5\n# a comment\n2 2\n255\n", "ascii"), body]),
    );
    const img = readPgm(join(dir, "c.pgm"));
    expect([...img.pixels]).toEqual([9, 8, 7, 6]);
  });

  it("rejects a wrong magic", () => {
    const dir = tmp();
    writeFileSync(join(dir, "bad.ppm"), Buffer.from("P3\n1 1\n255\n000", "ascii"));
    expect(() => readPpm(join(dir, "bad.ppm"))).toThrow(/not a P6/);
  });

  it("thresholds masks at 128", () => {
    const dir = tmp();
    writePgm(join(dir, "m.pgm"), 2, 2, new Uint8Array([0, 127, 128, 255]));
    const mask = readMask(join(dir, "m.pgm"));
    expect([...mask.values]).toEqual([0, 0, 1, 1]);
  });
});

describe("standardization", () => {
  it("maps a pixel through (v/255 - mean) / std per channel", () => {
    const img = { width: 1, height: 1, pixels: new Uint8Array([255, 0, 128]) };
    const out = standardize(img);
    expect(out[0]).toBeCloseTo((1.0 - CHANNEL_MEAN[0]) / CHANNEL_STD[0], 12);
    expect(out[1]).toBeCloseTo((0.0 - CHANNEL_MEAN[1]) / CHANNEL_STD[1], 12);
    expect(out[2]).toBeCloseTo((128 / 255 - CHANNEL_MEAN[2]) / CHANNEL_STD[2], 12);
  });
});

describe("bicubic resize", () => {
  it("preserves constants", () => {
    const src = new Float64Array(4 * 4).fill(0.37);
    const out = resizeBicubic(src, 4, 4, 1, 11, 7);
    for (const v of out) expect(v).toBeCloseTo(0.37, 12);
  });

  it("is the identity at equal sizes", () => {
    const src = Float64Array.from({ length: 9 }, (_, i) => i * 0.1);
    const out = resizeBicubic(src, 3, 3, 1, 3, 3);
    for (let i = 0; i < 9; i++) expect(out[i]).toBeCloseTo(src[i], 12);
  });

  it("interpolates monotone ramps monotonically", () => {
    const src = new Float64Array([0, 1, 2, 3].flatMap((v) => [v, v, v, v]));
    const out = resizeBicubic(src, 4, 4, 1, 9, 4);
    for (let y = 1; y < 9; y++) {
      expect(out[y * 4]).toBeGreaterThanOrEqual(out[(y - 1) * 4] - 1e-12);
    }
  });

  it("handles multi-channel planes independently", () => {
    const src = new Float64Array([1, -1, 1, -1, 1, -1, 1, -1]); // 2x2, 2 channels
    const out = resizeBicubic(src, 2, 2, 2, 5, 5);
    for (let i = 0; i < out.length; i += 2) {
      expect(out[i]).toBeCloseTo(1, 12);
      expect(out[i + 1]).toBeCloseTo(-1, 12);
    }
  });
});
