/**
 * Minimal PNG codec for 8-bit grayscale and RGB images.
 *
 * The encoder emits stored (uncompressed) zlib blocks so it needs no
 * compression library and is byte-deterministic. The decoder handles any
 * standards-compliant non-interlaced 8-bit gray/RGB PNG (all five scanline
 * filters); the caller supplies the zlib inflate function, since node and
 * browsers provide different ones and the app itself never needs to decode.
 */

export interface RawImage {
  width: number;
  height: number;
  channels: 1 | 3;
  /** row-major, length = width * height * channels, values 0..255 */
  data: Uint8Array;
}

const SIGNATURE = Uint8Array.from([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a]);

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    }
    table[n] = c >>> 0;
  }
  return table;
})();

function crc32(...parts: Uint8Array[]): number {
  let c = 0xffffffff;
  for (const part of parts) {
    for (let i = 0; i < part.length; i++) {
      c = CRC_TABLE[(c ^ part[i]) & 0xff] ^ (c >>> 8);
    }
  }
  return (c ^ 0xffffffff) >>> 0;
}

function adler32(data: Uint8Array): number {
  let a = 1;
  let b = 0;
  for (let i = 0; i < data.length; i++) {
    a = (a + data[i]) % 65521;
    b = (b + a) % 65521;
  }
  return ((b << 16) | a) >>> 0;
}

function u32be(value: number): Uint8Array {
  return Uint8Array.from([(value >>> 24) & 0xff, (value >>> 16) & 0xff, (value >>> 8) & 0xff, value & 0xff]);
}

function ascii(text: string): Uint8Array {
  return Uint8Array.from([...text].map((ch) => ch.charCodeAt(0)));
}

function concatBytes(parts: Uint8Array[]): Uint8Array {
  const total = parts.reduce((n, p) => n + p.length, 0);
  const out = new Uint8Array(total);
  let at = 0;
  for (const part of parts) {
    out.set(part, at);
    at += part.length;
  }
  return out;
}

function chunk(type: string, data: Uint8Array): Uint8Array {
  const typeBytes = ascii(type);
  return concatBytes([u32be(data.length), typeBytes, data, u32be(crc32(typeBytes, data))]);
}

/** zlib stream with stored deflate blocks: valid everywhere, zero deps. */
function zlibStored(raw: Uint8Array): Uint8Array {
  const parts: Uint8Array[] = [Uint8Array.from([0x78, 0x01])];
  const max = 0xffff;
  if (raw.length === 0) {
    parts.push(Uint8Array.from([0x01, 0x00, 0x00, 0xff, 0xff]));
  }
  for (let at = 0; at < raw.length; at += max) {
    const block = raw.subarray(at, Math.min(at + max, raw.length));
    const final = at + max >= raw.length ? 1 : 0;
    const len = block.length;
    const header = Uint8Array.from([final, len & 0xff, (len >>> 8) & 0xff, ~len & 0xff, (~len >>> 8) & 0xff]);
    parts.push(header, block);
  }
  parts.push(u32be(adler32(raw)));
  return concatBytes(parts);
}

export function encodePng(img: RawImage): Uint8Array {
  const { width, height, channels, data } = img;
  if (data.length !== width * height * channels) {
    throw new Error(`pixel buffer length ${data.length} != ${width}x${height}x${channels}`);
  }
  const stride = width * channels;
  const raw = new Uint8Array((stride + 1) * height);
  for (let y = 0; y < height; y++) {
    raw[y * (stride + 1)] = 0; // filter: None
    raw.set(data.subarray(y * stride, (y + 1) * stride), y * (stride + 1) + 1);
  }
  const ihdr = concatBytes([
    u32be(width),
    u32be(height),
    Uint8Array.from([8, channels === 1 ? 0 : 2, 0, 0, 0]),
  ]);
  return concatBytes([
    SIGNATURE,
    chunk("IHDR", ihdr),
    chunk("IDAT", zlibStored(raw)),
    chunk("IEND", new Uint8Array(0)),
  ]);
}

function paeth(a: number, b: number, c: number): number {
  const p = a + b - c;
  const pa = Math.abs(p - a);
  const pb = Math.abs(p - b);
  const pc = Math.abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

export type InflateFn = (data: Uint8Array) => Uint8Array;

export function decodePng(bytes: Uint8Array, inflate: InflateFn): RawImage {
  for (let i = 0; i < SIGNATURE.length; i++) {
    if (bytes[i] !== SIGNATURE[i]) throw new Error("not a PNG: bad signature");
  }
  let at = SIGNATURE.length;
  let width = 0;
  let height = 0;
  let channels: 1 | 3 = 1;
  const idat: Uint8Array[] = [];
  while (at < bytes.length) {
    const len = (bytes[at] << 24) | (bytes[at + 1] << 16) | (bytes[at + 2] << 8) | bytes[at + 3];
    const type = String.fromCharCode(bytes[at + 4], bytes[at + 5], bytes[at + 6], bytes[at + 7]);
    const data = bytes.subarray(at + 8, at + 8 + len);
    if (type === "IHDR") {
      width = (data[0] << 24) | (data[1] << 16) | (data[2] << 8) | data[3];
      height = (data[4] << 24) | (data[5] << 16) | (data[6] << 8) | data[7];
      const bitDepth = data[8];
      const colorType = data[9];
      const interlace = data[12];
      if (bitDepth !== 8) throw new Error(`unsupported bit depth ${bitDepth}`);
      if (interlace !== 0) throw new Error("interlaced PNGs are not supported");
      if (colorType === 0) channels = 1;
      else if (colorType === 2) channels = 3;
      else throw new Error(`unsupported color type ${colorType}`);
    } else if (type === "IDAT") {
      idat.push(data);
    } else if (type === "IEND") {
      break;
    }
    at += 8 + len + 4;
  }
  if (width === 0 || height === 0) throw new Error("missing IHDR");
  const raw = inflate(concatBytes(idat));
  const stride = width * channels;
  if (raw.length !== (stride + 1) * height) {
    throw new Error(`decompressed size ${raw.length} != expected ${(stride + 1) * height}`);
  }
  const out = new Uint8Array(stride * height);
  const bpp = channels;
  for (let y = 0; y < height; y++) {
    const filter = raw[y * (stride + 1)];
    const row = raw.subarray(y * (stride + 1) + 1, (y + 1) * (stride + 1));
    const prev = y > 0 ? out.subarray((y - 1) * stride, y * stride) : null;
    const line = out.subarray(y * stride, (y + 1) * stride);
    for (let x = 0; x < stride; x++) {
      const rawV = row[x];
      const left = x >= bpp ? line[x - bpp] : 0;
      const up = prev ? prev[x] : 0;
      const upLeft = prev && x >= bpp ? prev[x - bpp] : 0;
      let v: number;
      switch (filter) {
        case 0: v = rawV; break;
        case 1: v = rawV + left; break;
        case 2: v = rawV + up; break;
        case 3: v = rawV + Math.floor((left + up) / 2); break;
        case 4: v = rawV + paeth(left, up, upLeft); break;
        default: throw new Error(`unknown scanline filter ${filter}`);
      }
      line[x] = v & 0xff;
    }
  }
  return { width, height, channels, data: out };
}
