/** The two export operations: feature containers from an image manifest, and
 *  text prototype files from prompt templates with "[c]" class substitution. */

import { createBackbone } from "./backbone.js";
import {
  FeatureRecord,
  writeFeatureFile,
  writePrototypeFile,
} from "./container.js";
import { preprocess, readImage, readMask } from "./image.js";
import { ManifestEntry, readManifest } from "./manifest.js";

export interface ExportSpec {
  manifest: string;
  backbone: string;
  /** model input resolution, default [240, 240] */
  resolution: [number, number];
  /** backbone block indices to tap; default: four evenly spaced blocks */
  layers: number[];
  featuresOut: string;
  protosOut: string;
  /** classes to expand "[c]" with; defaults to the classes in the manifest */
  classNames: string[] | null;
  normalTemplates: string[];
  abnormalTemplates: string[];
}

export const DEFAULT_NORMAL_TEMPLATES = [
  "a photo of a flawless [c] for visual inspection.",
  "a cropped photo of a perfect [c].",
  "a blurry photo of the [c] without defect.",
  "a dark photo of the unblemished [c].",
  "a jpeg corrupted photo of a [c] without flaw.",
];

export const DEFAULT_ABNORMAL_TEMPLATES = [
  "a photo of a [c] with flaw for visual inspection.",
  "a cropped photo of a [c] with damage.",
  "a blurry photo of the [c] with defect.",
  "a dark photo of the [c] with flaw.",
  "a jpeg corrupted photo of a [c] with defect.",
];

export function specWithDefaults(partial: Partial<ExportSpec> & { manifest: string }): ExportSpec {
  return {
    backbone: "seeded-b16-d64",
    resolution: [240, 240],
    layers: [2, 5, 8, 11],
    featuresOut: "features.gadsft",
    protosOut: "protos.gadstp",
    classNames: null,
    normalTemplates: DEFAULT_NORMAL_TEMPLATES,
    abnormalTemplates: DEFAULT_ABNORMAL_TEMPLATES,
    ...partial,
  };
}

function validateSpec(spec: ExportSpec): void {
  if (spec.resolution[0] <= 0 || spec.resolution[1] <= 0) {
    throw new Error("resolution must be positive");
  }
  if (spec.layers.length === 0) throw new Error("at least one layer must be tapped");
}

/** Run the backbone over every manifest entry and write the feature container. */
export function exportFeatures(spec: ExportSpec): void {
  validateSpec(spec);
  const backbone = createBackbone(spec.backbone);
  const entries = readManifest(spec.manifest);
  const [gridH, gridW] = backbone.gridSize(spec.resolution);
  const layers = [...spec.layers].sort((a, b) => a - b);

  const records: FeatureRecord[] = entries.map((entry: ManifestEntry) => {
    const pixels = preprocess(entry.path, spec.resolution);
    const encoded = backbone.encodeImage(pixels, spec.resolution, layers);
    let mask: Uint8Array | null = null;
    let imageDims: [number, number];
    if (entry.maskPath) {
      const m = readMask(entry.maskPath);
      mask = m.values;
      imageDims = [m.height, m.width];
    } else {
      // masks are copied through at source resolution; without one, carry the
      // source dims so pixel maps are rendered at the native size
      const img = readImage(entry.path);
      imageDims = [img.height, img.width];
    }
    return {
      id: entry.id,
      className: entry.className,
      label: entry.label,
      imageDims,
      mask,
      classEmbed: encoded.classEmbed,
      patchGrids: encoded.patchGrids,
    };
  });

  writeFeatureFile(
    {
      dCls: backbone.dCls,
      dPatch: backbone.dPatch,
      gridH,
      gridW,
      layers,
      records,
    },
    spec.featuresOut,
  );
}

function meanEmbedding(texts: string[], encode: (t: string) => Float64Array): Float64Array {
  if (texts.length === 0) throw new Error("empty template set");
  const first = encode(texts[0]);
  const mean = new Float64Array(first.length);
  for (const text of texts) {
    const emb = encode(text);
    for (let i = 0; i < mean.length; i++) mean[i] += emb[i];
  }
  for (let i = 0; i < mean.length; i++) mean[i] /= texts.length;
  return mean;
}

/** Expand every template over every class name, encode, average per polarity. */
export function exportTextPrototypes(spec: ExportSpec): void {
  validateSpec(spec);
  const backbone = createBackbone(spec.backbone);
  let classNames = spec.classNames;
  if (!classNames) {
    const seen = new Set<string>();
    classNames = [];
    for (const entry of readManifest(spec.manifest)) {
      if (!seen.has(entry.className)) {
        seen.add(entry.className);
        classNames.push(entry.className);
      }
    }
  }
  if (classNames.length === 0) throw new Error("no class names to expand templates with");
  if (spec.normalTemplates.length === 0 || spec.abnormalTemplates.length === 0) {
    throw new Error("empty template set");
  }

  const expand = (templates: string[]) =>
    classNames!.flatMap((name) => templates.map((t) => t.replaceAll("[c]", name)));
  const normal = meanEmbedding(expand(spec.normalTemplates), (t) => backbone.encodeText(t));
  const abnormal = meanEmbedding(expand(spec.abnormalTemplates), (t) => backbone.encodeText(t));
  writePrototypeFile(normal, abnormal, spec.protosOut);
}
