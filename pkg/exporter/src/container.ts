/** Binary writers (and readers, used by the tests) for the engine's file
 *  formats. Everything is little-endian; masks are packed bits, row-major,
 *  most significant bit first; floats are written as float32.
 */

import { writeFileSync, readFileSync } from "node:fs";

export const CONTAINER_MAGIC = "GADSFT01";
export const CONTAINER_VERSION = 1;
export const PROTO_MAGIC = "GADSTP01";

export interface FeatureRecord {
  id: string;
  className: string;
  label: 0 | 1;
  imageDims: [number, number];
  mask: Uint8Array | null;
  classEmbed: Float64Array | Float32Array;
  /** layer index -> h*w*dPatch values */
  patchGrids: Map<number, Float64Array | Float32Array>;
}

export interface FeatureSet {
  dCls: number;
  dPatch: number;
  gridH: number;
  gridW: number;
  layers: number[];
  records: FeatureRecord[];
}

class ByteWriter {
  private chunks: Buffer[] = [];

  u8(value: number) {
    this.chunks.push(Buffer.from([value & 0xff]));
  }
  u16(value: number) {
    const b = Buffer.alloc(2);
    b.writeUInt16LE(value);
    this.chunks.push(b);
  }
  u32(value: number) {
    const b = Buffer.alloc(4);
    b.writeUInt32LE(value);
    this.chunks.push(b);
  }
  u64(value: number) {
    const b = Buffer.alloc(8);
    b.writeBigUInt64LE(BigInt(value));
    this.chunks.push(b);
  }
  bytes(data: Uint8Array) {
    this.chunks.push(Buffer.from(data));
  }
  f32Array(values: Float64Array | Float32Array) {
    const out = new Float32Array(values.length);
    out.set(values);
    this.chunks.push(Buffer.from(out.buffer, out.byteOffset, out.byteLength));
  }
  done(): Buffer {
    return Buffer.concat(this.chunks);
  }
}

export function packMask(mask: Uint8Array): Uint8Array {
  const out = new Uint8Array(Math.ceil(mask.length / 8));
  for (let i = 0; i < mask.length; i++) {
    if (mask[i]) out[i >> 3] |= 0x80 >> (i & 7);
  }
  return out;
}

export function writeFeatureFile(set: FeatureSet, path: string): void {
  const layers = [...set.layers].sort((a, b) => a - b);
  const w = new ByteWriter();
  w.bytes(Buffer.from(CONTAINER_MAGIC, "ascii"));
  w.u32(CONTAINER_VERSION);
  w.u32(set.dCls);
  w.u32(set.dPatch);
  w.u32(set.gridH);
  w.u32(set.gridW);
  w.u32(layers.length);
  for (const l of layers) w.u32(l);
  w.u64(set.records.length);

  const gridLen = set.gridH * set.gridW * set.dPatch;
  for (const rec of set.records) {
    const idBytes = Buffer.from(rec.id, "utf-8");
    const nameBytes = Buffer.from(rec.className, "utf-8");
    w.u16(idBytes.length);
    w.bytes(idBytes);
    w.u16(nameBytes.length);
    w.bytes(nameBytes);
    w.u8(rec.label);
    w.u8(rec.mask ? 1 : 0);
    const [hImg, wImg] = rec.imageDims;
    w.u32(hImg);
    w.u32(wImg);
    if (rec.mask) {
      if (rec.mask.length !== hImg * wImg) {
        throw new Error(`record ${rec.id}: mask size != image dims`);
      }
      w.bytes(packMask(rec.mask));
    }
    if (rec.classEmbed.length !== set.dCls) {
      throw new Error(`record ${rec.id}: class embedding dim mismatch`);
    }
    w.f32Array(rec.classEmbed);
    for (const l of layers) {
      const grid = rec.patchGrids.get(l);
      if (!grid || grid.length !== gridLen) {
        throw new Error(`record ${rec.id}: missing or misshapen grid for layer ${l}`);
      }
      w.f32Array(grid);
    }
  }
  writeFileSync(path, w.done());
}

export function writePrototypeFile(
  normal: Float64Array | Float32Array,
  abnormal: Float64Array | Float32Array,
  path: string,
): void {
  if (normal.length !== abnormal.length) throw new Error("prototype dims differ");
  const w = new ByteWriter();
  w.bytes(Buffer.from(PROTO_MAGIC, "ascii"));
  w.u32(normal.length);
  w.f32Array(normal);
  w.f32Array(abnormal);
  writeFileSync(path, w.done());
}

// ---------------------------------------------------------------------------
// readers, to validate our own output in tests
// ---------------------------------------------------------------------------

class ByteReader {
  pos = 0;
  constructor(private data: Buffer) {}

  u8(): number {
    return this.data.readUInt8(this.pos++);
  }
  u16(): number {
    const v = this.data.readUInt16LE(this.pos);
    this.pos += 2;
    return v;
  }
  u32(): number {
    const v = this.data.readUInt32LE(this.pos);
    this.pos += 4;
    return v;
  }
  u64(): number {
    const v = this.data.readBigUInt64LE(this.pos);
    this.pos += 8;
    return Number(v);
  }
  bytes(n: number): Buffer {
    const v = this.data.subarray(this.pos, this.pos + n);
    if (v.length !== n) throw new Error("truncated file");
    this.pos += n;
    return v;
  }
  f32Array(n: number): Float32Array {
    const raw = this.bytes(4 * n);
    const out = new Float32Array(n);
    for (let i = 0; i < n; i++) out[i] = raw.readFloatLE(4 * i);
    return out;
  }
}

export function readFeatureFile(path: string): FeatureSet {
  const r = new ByteReader(readFileSync(path));
  const magic = r.bytes(8).toString("ascii");
  if (magic !== CONTAINER_MAGIC) throw new Error(`bad magic ${magic}`);
  if (r.u32() !== CONTAINER_VERSION) throw new Error("unsupported version");
  const dCls = r.u32();
  const dPatch = r.u32();
  const gridH = r.u32();
  const gridW = r.u32();
  const nLayers = r.u32();
  const layers: number[] = [];
  for (let i = 0; i < nLayers; i++) layers.push(r.u32());
  const count = r.u64();
  const records: FeatureRecord[] = [];
  for (let i = 0; i < count; i++) {
    const id = r.bytes(r.u16()).toString("utf-8");
    const className = r.bytes(r.u16()).toString("utf-8");
    const label = r.u8() as 0 | 1;
    const hasMask = r.u8();
    const hImg = r.u32();
    const wImg = r.u32();
    let mask: Uint8Array | null = null;
    if (hasMask) {
      const packed = r.bytes(Math.ceil((hImg * wImg) / 8));
      mask = new Uint8Array(hImg * wImg);
      for (let p = 0; p < mask.length; p++) {
        mask[p] = (packed[p >> 3] >> (7 - (p & 7))) & 1;
      }
    }
    const classEmbed = r.f32Array(dCls);
    const patchGrids = new Map<number, Float32Array>();
    for (const l of layers) patchGrids.set(l, r.f32Array(gridH * gridW * dPatch));
    records.push({ id, className, label, imageDims: [hImg, wImg], mask, classEmbed, patchGrids });
  }
  return { dCls, dPatch, gridH, gridW, layers, records };
}

export function readPrototypeFile(path: string): { normal: Float32Array; abnormal: Float32Array } {
  const r = new ByteReader(readFileSync(path));
  const magic = r.bytes(8).toString("ascii");
  if (magic !== PROTO_MAGIC) throw new Error(`bad magic ${magic}`);
  const d = r.u32();
  return { normal: r.f32Array(d), abnormal: r.f32Array(d) };
}
