import { copyFileSync, mkdtempSync, readFileSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { describe, expect, it } from "vitest";

import { createBackbone } from "../src/backbone.js";
import { readFeatureFile, readPrototypeFile } from "../src/container.js";
import { exportFeatures, exportTextPrototypes, specWithDefaults } from "../src/export.js";
import { writePpm } from "./toydata.js";

const tmp = () => mkdtempSync(join(tmpdir(), "export-"));

function solidImage(dir: string, name: string, rgb: [number, number, number], size = 32) {
  const pixels = new Uint8Array(size * size * 3);
  for (let i = 0; i < size * size; i++) {
    pixels[3 * i] = rgb[0];
    pixels[3 * i + 1] = rgb[1];
    pixels[3 * i + 2] = rgb[2];
  }
  writePpm(join(dir, name), size, size, pixels);
}

function manifestOf(dir: string, rows: object[]): string {
  const path = join(dir, "manifest.jsonl");
  writeFileSync(path, rows.map((r) => JSON.stringify(r)).join("\n") + "\n");
  return path;
}

describe("feature export", () => {
  it("gives identical records for identical image files", () => {
    const dir = tmp();
    solidImage(dir, "one.ppm", [120, 80, 200]);
    copyFileSync(join(dir, "one.ppm"), join(dir, "two.ppm"));
    const manifest = manifestOf(dir, [
      { id: "a", path: "one.ppm", class_name: "panel", label: 0 },
      { id: "b", path: "two.ppm", class_name: "panel", label: 0 },
    ]);
    const spec = specWithDefaults({
      manifest,
      resolution: [64, 64],
      featuresOut: join(dir, "f.gadsft"),
      protosOut: join(dir, "p.gadstp"),
    });
    exportFeatures(spec);
    const set = readFeatureFile(spec.featuresOut);
    expect([...set.records[0].classEmbed]).toEqual([...set.records[1].classEmbed]);
    for (const l of set.layers) {
      expect([...set.records[0].patchGrids.get(l)!]).toEqual([
        ...set.records[1].patchGrids.get(l)!,
      ]);
    }
  });

  it("emits the dims the spec implies", () => {
    const dir = tmp();
    solidImage(dir, "one.ppm", [10, 20, 30]);
    const manifest = manifestOf(dir, [
      { id: "a", path: "one.ppm", class_name: "panel", label: 0 },
    ]);
    const spec = specWithDefaults({
      manifest,
      featuresOut: join(dir, "f.gadsft"),
      protosOut: join(dir, "p.gadstp"),
    });
    exportFeatures(spec);
    const set = readFeatureFile(spec.featuresOut);
    // 240x240 input with 16px patches -> 15x15 grid; seeded-b16-d64 dims
    expect([set.gridH, set.gridW]).toEqual([15, 15]);
    expect(set.dCls).toBe(64);
    expect(set.dPatch).toBe(64);
    expect(set.layers).toEqual([2, 5, 8, 11]);
    expect(set.records[0].imageDims).toEqual([32, 32]);
  });

  it("solid colors are invariant to rotation", () => {
    const dir = tmp();
    solidImage(dir, "solid.ppm", [200, 100, 50]);
    // a 90-degree rotation of a solid color is the same pixel array
    copyFileSync(join(dir, "solid.ppm"), join(dir, "rotated.ppm"));
    const manifest = manifestOf(dir, [
      { id: "orig", path: "solid.ppm", class_name: "panel", label: 0 },
      { id: "rot", path: "rotated.ppm", class_name: "panel", label: 0 },
    ]);
    const spec = specWithDefaults({
      manifest,
      resolution: [48, 48],
      featuresOut: join(dir, "f.gadsft"),
      protosOut: join(dir, "p.gadstp"),
    });
    exportFeatures(spec);
    const set = readFeatureFile(spec.featuresOut);
    expect([...set.records[0].classEmbed]).toEqual([...set.records[1].classEmbed]);
  });

  it("is byte-identical across independent export runs", () => {
    const dir = tmp();
    solidImage(dir, "one.ppm", [33, 66, 99]);
    const manifest = manifestOf(dir, [
      { id: "a", path: "one.ppm", class_name: "panel", label: 0 },
    ]);
    const mk = (out: string) =>
      specWithDefaults({
        manifest,
        resolution: [48, 48],
        featuresOut: join(dir, out),
        protosOut: join(dir, "p.gadstp"),
      });
    exportFeatures(mk("run1.gadsft"));
    exportFeatures(mk("run2.gadsft"));
    expect(readFileSync(join(dir, "run1.gadsft")).equals(readFileSync(join(dir, "run2.gadsft")))).toBe(
      true,
    );
  });

  it("rejects resolutions smaller than one patch", () => {
    const dir = tmp();
    solidImage(dir, "one.ppm", [1, 2, 3]);
    const manifest = manifestOf(dir, [
      { id: "a", path: "one.ppm", class_name: "panel", label: 0 },
    ]);
    const spec = specWithDefaults({
      manifest,
      resolution: [8, 8],
      featuresOut: join(dir, "f.gadsft"),
      protosOut: join(dir, "p.gadstp"),
    });
    expect(() => exportFeatures(spec)).toThrow(/smaller than one/);
  });

  it("rejects out-of-range layer taps", () => {
    const dir = tmp();
    solidImage(dir, "one.ppm", [1, 2, 3]);
    const manifest = manifestOf(dir, [
      { id: "a", path: "one.ppm", class_name: "panel", label: 0 },
    ]);
    const spec = specWithDefaults({
      manifest,
      layers: [99],
      featuresOut: join(dir, "f.gadsft"),
      protosOut: join(dir, "p.gadstp"),
    });
    expect(() => exportFeatures(spec)).toThrow(/out of range/);
  });

  it("rejects unknown backbone identifiers", () => {
    expect(() => createBackbone("resnet-50")).toThrow(/unknown backbone/);
  });
});

describe("prototype export", () => {
  it("a single template and class equals that embedding", () => {
    const dir = tmp();
    const spec = specWithDefaults({
      manifest: join(dir, "unused.jsonl"),
      classNames: ["bolt"],
      normalTemplates: ["a photo of a [c]"],
      abnormalTemplates: ["a damaged [c]"],
      featuresOut: join(dir, "f.gadsft"),
      protosOut: join(dir, "p.gadstp"),
    });
    exportTextPrototypes(spec);
    const { normal, abnormal } = readPrototypeFile(spec.protosOut);
    const backbone = createBackbone(spec.backbone);
    const expectNormal = new Float32Array(backbone.encodeText("a photo of a bolt"));
    const expectAbnormal = new Float32Array(backbone.encodeText("a damaged bolt"));
    expect([...normal]).toEqual([...expectNormal]);
    expect([...abnormal]).toEqual([...expectAbnormal]);
  });

  it("duplicating the whole template list leaves the prototype unchanged", () => {
    const dir = tmp();
    const templates = ["a photo of a [c]", "a perfect [c]"];
    const base = specWithDefaults({
      manifest: join(dir, "unused.jsonl"),
      classNames: ["gear", "cable"],
      normalTemplates: templates,
      abnormalTemplates: ["a broken [c]"],
      featuresOut: join(dir, "f.gadsft"),
      protosOut: join(dir, "p1.gadstp"),
    });
    exportTextPrototypes(base);
    const doubled = { ...base, normalTemplates: [...templates, ...templates], protosOut: join(dir, "p2.gadstp") };
    exportTextPrototypes(doubled);
    const a = readPrototypeFile(base.protosOut).normal;
    const b = readPrototypeFile(doubled.protosOut).normal;
    for (let i = 0; i < a.length; i++) expect(Math.abs(a[i] - b[i])).toBeLessThan(1e-6);
  });

  it("rejects an empty template set", () => {
    const dir = tmp();
    const spec = specWithDefaults({
      manifest: join(dir, "unused.jsonl"),
      classNames: ["bolt"],
      normalTemplates: [],
      featuresOut: join(dir, "f.gadsft"),
      protosOut: join(dir, "p.gadstp"),
    });
    expect(() => exportTextPrototypes(spec)).toThrow(/empty template set/);
  });

  it("prototypes have nonzero norm (engine invariant)", () => {
    const dir = tmp();
    const spec = specWithDefaults({
      manifest: join(dir, "unused.jsonl"),
      classNames: ["bracket", "panel"],
      featuresOut: join(dir, "f.gadsft"),
      protosOut: join(dir, "p.gadstp"),
    });
    exportTextPrototypes(spec);
    const { normal, abnormal } = readPrototypeFile(spec.protosOut);
    const norm = (v: Float32Array) => Math.sqrt([...v].reduce((s, x) => s + x * x, 0));
    expect(norm(normal)).toBeGreaterThan(0);
    expect(norm(abnormal)).toBeGreaterThan(0);
  });
});
