#!/usr/bin/env node
/** Command line: read an export spec (JSON) and write the feature container
 *  and/or text prototype file.
 *
 *    gads-export all      --spec export.json
 *    gads-export features --spec export.json
 *    gads-export protos   --spec export.json
 *
 *  Spec fields: manifest (required), backbone, resolution, layers,
 *  featuresOut, protosOut, classNames, normalTemplates, abnormalTemplates.
 */

import { readFileSync } from "node:fs";
import { dirname, resolve } from "node:path";

import { ExportSpec, exportFeatures, exportTextPrototypes, specWithDefaults } from "./export.js";

export function loadSpec(path: string): ExportSpec {
  const raw = JSON.parse(readFileSync(path, "utf-8"));
  if (typeof raw.manifest !== "string") {
    throw new Error(`${path}: spec needs a "manifest" path`);
  }
  const base = dirname(resolve(path));
  const spec = specWithDefaults(raw);
  spec.manifest = resolve(base, spec.manifest);
  spec.featuresOut = resolve(base, spec.featuresOut);
  spec.protosOut = resolve(base, spec.protosOut);
  return spec;
}

export function main(argv: string[]): number {
  const command = argv[0];
  const specFlag = argv.indexOf("--spec");
  if (!command || specFlag < 0 || !argv[specFlag + 1]) {
    console.error("usage: gads-export {all|features|protos} --spec <export.json>");
    return 2;
  }
  try {
    const spec = loadSpec(argv[specFlag + 1]);
    if (command === "features" || command === "all") {
      exportFeatures(spec);
      console.log(`features: ${spec.featuresOut}`);
    }
    if (command === "protos" || command === "all") {
      exportTextPrototypes(spec);
      console.log(`protos: ${spec.protosOut}`);
    }
    if (!["features", "protos", "all"].includes(command)) {
      console.error(`unknown command ${command}`);
      return 2;
    }
    return 0;
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : err}`);
    return 1;
  }
}

if (process.argv[1] && process.argv[1].endsWith("cli.js")) {
  process.exit(main(process.argv.slice(2)));
}
