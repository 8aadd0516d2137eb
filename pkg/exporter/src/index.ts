export { createBackbone } from "./backbone.js";
export type { Backbone, BackboneOutput } from "./backbone.js";
export {
  readFeatureFile,
  readPrototypeFile,
  writeFeatureFile,
  writePrototypeFile,
  packMask,
} from "./container.js";
export type { FeatureRecord, FeatureSet } from "./container.js";
export {
  DEFAULT_ABNORMAL_TEMPLATES,
  DEFAULT_NORMAL_TEMPLATES,
  exportFeatures,
  exportTextPrototypes,
  specWithDefaults,
} from "./export.js";
export type { ExportSpec } from "./export.js";
export { preprocess, readImage, readMask, readPgm, readPpm, resizeBicubic, standardize } from "./image.js";
export { readManifest } from "./manifest.js";
export type { ManifestEntry } from "./manifest.js";
