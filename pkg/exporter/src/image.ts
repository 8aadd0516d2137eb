/** Image loading and the preprocessing pipeline.
 *
 *  Supported formats are the binary netpbm family: P6 (color) for images and
 *  P5 (grayscale) for masks — zero-dependency and byte-exact. Preprocessing
 *  follows the usual vision-language recipe: scale RGB to [0, 1], apply
 *  channel-wise standardization with the pretraining mean/std, then bicubic
 *  resize to the model's input resolution.
 */

import { readFileSync } from "node:fs";

export interface RgbImage {
  width: number;
  height: number;
  /** H*W*3 interleaved, values 0..255 */
  pixels: Uint8Array;
}

export interface GrayImage {
  width: number;
  height: number;
  pixels: Uint8Array;
}

// channel statistics used by the pretrained backbone family
export const CHANNEL_MEAN = [0.48145466, 0.4578275, 0.40821073];
export const CHANNEL_STD = [0.26862954, 0.26130258, 0.27577711];

function parseNetpbmHeader(data: Uint8Array, magic: string) {
  if (data[0] !== 0x50 || data[1] !== magic.charCodeAt(1)) {
    throw new Error(`not a ${magic} file`);
  }
  // header tokens: magic, width, height, maxval; '#' starts a comment line
  const fields: number[] = [];
  let pos = 2;
  while (fields.length < 3) {
    while (pos < data.length && isSpace(data[pos])) pos++;
    if (data[pos] === 0x23) {
      while (pos < data.length && data[pos] !== 0x0a) pos++;
      continue;
    }
    let value = 0;
    const start = pos;
    while (pos < data.length && !isSpace(data[pos])) {
      value = value * 10 + (data[pos] - 0x30);
      pos++;
    }
    if (pos === start) throw new Error(`truncated ${magic} header`);
    fields.push(value);
  }
  pos++; // single whitespace after maxval
  const [width, height, maxval] = fields;
  if (maxval !== 255) throw new Error(`unsupported maxval ${maxval}`);
  return { width, height, dataStart: pos };
}

function isSpace(byte: number): boolean {
  return byte === 0x20 || byte === 0x09 || byte === 0x0a || byte === 0x0d;
}

export function readPpm(path: string): RgbImage {
  const data = new Uint8Array(readFileSync(path));
  const { width, height, dataStart } = parseNetpbmHeader(data, "P6");
  const expected = width * height * 3;
  if (data.length - dataStart < expected) throw new Error(`truncated pixel data in ${path}`);
  return { width, height, pixels: data.slice(dataStart, dataStart + expected) };
}

export function readPgm(path: string): GrayImage {
  const data = new Uint8Array(readFileSync(path));
  const { width, height, dataStart } = parseNetpbmHeader(data, "P5");
  const expected = width * height;
  if (data.length - dataStart < expected) throw new Error(`truncated pixel data in ${path}`);
  return { width, height, pixels: data.slice(dataStart, dataStart + expected) };
}

export function readImage(path: string): RgbImage {
  if (path.endsWith(".ppm")) return readPpm(path);
  if (path.endsWith(".pgm")) {
    const gray = readPgm(path);
    const pixels = new Uint8Array(gray.width * gray.height * 3);
    for (let i = 0; i < gray.pixels.length; i++) {
      pixels[3 * i] = pixels[3 * i + 1] = pixels[3 * i + 2] = gray.pixels[i];
    }
    return { width: gray.width, height: gray.height, pixels };
  }
  throw new Error(`unsupported image format: ${path} (expected .ppm or .pgm)`);
}

/** Binary mask from an 8-bit grayscale file: anything >= 128 counts as anomalous. */
export function readMask(path: string): { width: number; height: number; values: Uint8Array } {
  const gray = readPgm(path);
  const values = new Uint8Array(gray.pixels.length);
  for (let i = 0; i < gray.pixels.length; i++) values[i] = gray.pixels[i] >= 128 ? 1 : 0;
  return { width: gray.width, height: gray.height, values };
}

/** Scale to [0, 1] and standardize channel-wise. Returns H*W*3 float64. */
export function standardize(image: RgbImage): Float64Array {
  const out = new Float64Array(image.width * image.height * 3);
  for (let i = 0; i < image.width * image.height; i++) {
    for (let c = 0; c < 3; c++) {
      const value = image.pixels[3 * i + c] / 255.0;
      out[3 * i + c] = (value - CHANNEL_MEAN[c]) / CHANNEL_STD[c];
    }
  }
  return out;
}

/** Keys cubic convolution kernel with a = -0.5 (the classic bicubic). */
function cubicWeight(t: number): number {
  const a = -0.5;
  const at = Math.abs(t);
  if (at <= 1) return (a + 2) * at * at * at - (a + 3) * at * at + 1;
  if (at < 2) return a * at * at * at - 5 * a * at * at + 8 * a * at - 4 * a;
  return 0;
}

/** Separable bicubic resize of a multi-channel plane (H*W*C float64). */
export function resizeBicubic(
  src: Float64Array,
  srcH: number,
  srcW: number,
  channels: number,
  dstH: number,
  dstW: number,
): Float64Array {
  const horizontal = new Float64Array(srcH * dstW * channels);
  const scaleX = srcW / dstW;
  for (let y = 0; y < srcH; y++) {
    for (let x = 0; x < dstW; x++) {
      const center = (x + 0.5) * scaleX - 0.5;
      const base = Math.floor(center);
      for (let c = 0; c < channels; c++) {
        let acc = 0;
        let norm = 0;
        for (let k = -1; k <= 2; k++) {
          const sx = Math.min(srcW - 1, Math.max(0, base + k));
          const w = cubicWeight(center - (base + k));
          acc += w * src[(y * srcW + sx) * channels + c];
          norm += w;
        }
        horizontal[(y * dstW + x) * channels + c] = acc / norm;
      }
    }
  }
  const out = new Float64Array(dstH * dstW * channels);
  const scaleY = srcH / dstH;
  for (let y = 0; y < dstH; y++) {
    const center = (y + 0.5) * scaleY - 0.5;
    const base = Math.floor(center);
    for (let x = 0; x < dstW; x++) {
      for (let c = 0; c < channels; c++) {
        let acc = 0;
        let norm = 0;
        for (let k = -1; k <= 2; k++) {
          const sy = Math.min(srcH - 1, Math.max(0, base + k));
          const w = cubicWeight(center - (base + k));
          acc += w * horizontal[(sy * dstW + x) * channels + c];
          norm += w;
        }
        out[(y * dstW + x) * channels + c] = acc / norm;
      }
    }
  }
  return out;
}

/** Full pipeline: load -> [0,1] -> standardize -> bicubic resize. */
export function preprocess(path: string, resolution: [number, number]): Float64Array {
  const image = readImage(path);
  const standardized = standardize(image);
  return resizeBicubic(standardized, image.height, image.width, 3, resolution[0], resolution[1]);
}
