/** The JSONL manifest hand-off: one object per line with
 *  {id, path, class_name, label, mask_path?}, paths relative to the manifest. */

import { readFileSync } from "node:fs";
import { dirname, resolve } from "node:path";

export interface ManifestEntry {
  id: string;
  path: string;
  className: string;
  label: 0 | 1;
  maskPath: string | null;
}

export function readManifest(path: string): ManifestEntry[] {
  const base = dirname(resolve(path));
  const entries: ManifestEntry[] = [];
  const lines = readFileSync(path, "utf-8").split("\n");
  lines.forEach((line, index) => {
    const trimmed = line.trim();
    if (!trimmed) return;
    let obj: Record<string, unknown>;
    try {
      obj = JSON.parse(trimmed);
    } catch (err) {
      throw new Error(`${path}:${index + 1}: invalid JSON (${err})`);
    }
    for (const key of ["id", "path", "class_name", "label"]) {
      if (!(key in obj)) throw new Error(`${path}:${index + 1}: missing field ${key}`);
    }
    const label = Number(obj.label);
    if (label !== 0 && label !== 1) {
      throw new Error(`${path}:${index + 1}: label must be 0 or 1`);
    }
    entries.push({
      id: String(obj.id),
      path: resolve(base, String(obj.path)),
      className: String(obj.class_name),
      label: label as 0 | 1,
      maskPath: obj.mask_path ? resolve(base, String(obj.mask_path)) : null,
    });
  });
  return entries;
}
