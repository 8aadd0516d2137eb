/** Backbone abstraction plus a deterministic seeded implementation.
 *
 *  The engine downstream never learns which backbone produced its inputs; all
 *  it sees are embedding dimensions and patch grids. The seeded backbone
 *  derives every weight from a hash of the backbone identifier, so the same
 *  identifier always denotes the same (frozen) weights — no checkpoint files
 *  to download or pin. Swap in a real pretrained encoder by implementing the
 *  same interface.
 */

import { fnv1a, gaussianMatrix } from "./rng.js";

export interface BackboneOutput {
  classEmbed: Float64Array;
  /** layer index -> h*w*dPatch activations, row-major, channel-last */
  patchGrids: Map<number, Float64Array>;
}

export interface Backbone {
  id: string;
  dCls: number;
  dPatch: number;
  dText: number;
  numLayers: number;
  patchSize: number;
  gridSize(resolution: [number, number]): [number, number];
  encodeImage(pixels: Float64Array, resolution: [number, number], layers: number[]): BackboneOutput;
  encodeText(text: string): Float64Array;
}

const ID_PATTERN = /^seeded-b(\d+)-d(\d+)$/;

export function createBackbone(id: string): Backbone {
  const match = ID_PATTERN.exec(id);
  if (!match) {
    throw new Error(
      `unknown backbone identifier ${JSON.stringify(id)} (expected seeded-b<patch>-d<dim>)`,
    );
  }
  return new SeededBackbone(id, parseInt(match[1], 10), parseInt(match[2], 10));
}

class SeededBackbone implements Backbone {
  readonly numLayers = 12;
  readonly dCls: number;
  readonly dPatch: number;
  readonly dText: number;
  private weights = new Map<string, Float64Array>();

  constructor(
    readonly id: string,
    readonly patchSize: number,
    dim: number,
  ) {
    this.dCls = dim;
    this.dPatch = dim;
    this.dText = dim;
  }

  private weight(name: string, rows: number, cols: number, scale: number): Float64Array {
    const key = `${name}:${rows}x${cols}`;
    let w = this.weights.get(key);
    if (!w) {
      w = gaussianMatrix(fnv1a(`${this.id}/${key}`), rows, cols, scale);
      this.weights.set(key, w);
    }
    return w;
  }

  gridSize(resolution: [number, number]): [number, number] {
    return [Math.floor(resolution[0] / this.patchSize), Math.floor(resolution[1] / this.patchSize)];
  }

  encodeImage(
    pixels: Float64Array,
    resolution: [number, number],
    layers: number[],
  ): BackboneOutput {
    for (const l of layers) {
      if (l < 0 || l >= this.numLayers) {
        throw new Error(`layer index ${l} out of range [0, ${this.numLayers})`);
      }
    }
    const [gh, gw] = this.gridSize(resolution);
    if (gh < 1 || gw < 1) {
      throw new Error(
        `resolution ${resolution[0]}x${resolution[1]} smaller than one ${this.patchSize}px patch`,
      );
    }
    const n = gh * gw;
    const d = this.dPatch;
    const patchDim = this.patchSize * this.patchSize * 3;
    const wIn = this.weight("input", d, patchDim, 1 / Math.sqrt(patchDim));

    // patchify + input projection
    let acts = new Float64Array(n * d);
    for (let py = 0; py < gh; py++) {
      for (let px = 0; px < gw; px++) {
        const patch = new Float64Array(patchDim);
        let k = 0;
        for (let y = 0; y < this.patchSize; y++) {
          const row = py * this.patchSize + y;
          for (let x = 0; x < this.patchSize; x++) {
            const col = px * this.patchSize + x;
            const at = (row * resolution[1] + col) * 3;
            patch[k++] = pixels[at];
            patch[k++] = pixels[at + 1];
            patch[k++] = pixels[at + 2];
          }
        }
        const out = (py * gw + px) * d;
        for (let r = 0; r < d; r++) {
          let acc = 0;
          for (let c = 0; c < patchDim; c++) acc += wIn[r * patchDim + c] * patch[c];
          acts[out + r] = acc;
        }
      }
    }

    // stacked mixing blocks: per-patch transform plus a global context term
    const wanted = new Set(layers);
    const grids = new Map<number, Float64Array>();
    const scale = 1 / Math.sqrt(d);
    for (let l = 0; l < this.numLayers; l++) {
      const wl = this.weight(`block${l}/local`, d, d, scale);
      const ul = this.weight(`block${l}/global`, d, d, scale);
      const pooled = new Float64Array(d);
      for (let i = 0; i < n; i++) {
        for (let r = 0; r < d; r++) pooled[r] += acts[i * d + r];
      }
      for (let r = 0; r < d; r++) pooled[r] /= n;
      const next = new Float64Array(n * d);
      for (let i = 0; i < n; i++) {
        for (let r = 0; r < d; r++) {
          let acc = 0;
          for (let c = 0; c < d; c++) {
            acc += wl[r * d + c] * acts[i * d + c] + ul[r * d + c] * pooled[c];
          }
          next[i * d + r] = Math.tanh(acc);
        }
      }
      acts = next;
      if (wanted.has(l)) grids.set(l, acts.slice());
    }

    // class embedding: projected mean pool of the final block
    const pooled = new Float64Array(d);
    for (let i = 0; i < n; i++) {
      for (let r = 0; r < d; r++) pooled[r] += acts[i * d + r];
    }
    for (let r = 0; r < d; r++) pooled[r] /= n;
    const wCls = this.weight("cls", this.dCls, d, scale);
    const classEmbed = new Float64Array(this.dCls);
    for (let r = 0; r < this.dCls; r++) {
      let acc = 0;
      for (let c = 0; c < d; c++) acc += wCls[r * d + c] * pooled[c];
      classEmbed[r] = Math.tanh(acc);
    }
    return { classEmbed, patchGrids: grids };
  }

  encodeText(text: string): Float64Array {
    const tokens = text.toLowerCase().split(/[^a-z0-9]+/).filter(Boolean);
    if (tokens.length === 0) throw new Error(`cannot encode empty text ${JSON.stringify(text)}`);
    const d = this.dText;
    const mean = new Float64Array(d);
    for (const token of tokens) {
      const emb = this.weight(`token/${token}`, d, 1, 1.0);
      for (let r = 0; r < d; r++) mean[r] += emb[r];
    }
    for (let r = 0; r < d; r++) mean[r] /= tokens.length;
    const wText = this.weight("text", d, d, 1 / Math.sqrt(d));
    const out = new Float64Array(d);
    for (let r = 0; r < d; r++) {
      let acc = 0;
      for (let c = 0; c < d; c++) acc += wText[r * d + c] * mean[c];
      out[r] = Math.tanh(acc);
    }
    return out;
  }
}
