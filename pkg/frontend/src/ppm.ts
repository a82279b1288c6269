/** Minimal binary PPM (P6, 8-bit) parser so the panel can paint the LDM
 * output onto a canvas without any image library. */

export interface PpmImage {
  width: number;
  height: number;
  /** RGBA, 4 bytes per pixel, alpha forced to 255 */
  rgba: Uint8ClampedArray<ArrayBuffer>;
}

const B64_ALPHABET = 'ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/';

export function decodeBase64(b64: string): Uint8Array {
  const clean = b64.replace(/=+$/, '');
  const out = new Uint8Array(Math.floor(clean.length * 3 / 4));
  let acc = 0;
  let bits = 0;
  let pos = 0;
  for (const ch of clean) {
    const value = B64_ALPHABET.indexOf(ch);
    if (value < 0) throw new Error(`invalid base64 character ${ch}`);
    acc = (acc << 6) | value;
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out[pos++] = (acc >> bits) & 0xff;
    }
  }
  return out;
}

export function parsePpm(data: Uint8Array): PpmImage {
  if (data[0] !== 0x50 || data[1] !== 0x36) {
    throw new Error('not a P6 PPM stream');
  }
  let pos = 2;
  const fields: number[] = [];
  while (fields.length < 3) {
    while (pos < data.length && isSpace(data[pos])) pos++;
    if (data[pos] === 0x23) { // '#' comment
      while (pos < data.length && data[pos] !== 0x0a) pos++;
      continue;
    }
    let value = 0;
    const start = pos;
    while (pos < data.length && !isSpace(data[pos])) {
      value = value * 10 + (data[pos] - 0x30);
      pos++;
    }
    if (pos === start) throw new Error('malformed PPM header');
    fields.push(value);
  }
  pos++; // single whitespace after maxval
  const [width, height, maxval] = fields;
  if (maxval !== 255) throw new Error('only 8-bit PPM supported');
  const pixels = width * height;
  if (data.length < pos + pixels * 3) throw new Error('truncated PPM payload');
  const rgba = new Uint8ClampedArray(pixels * 4);
  for (let i = 0; i < pixels; i++) {
    rgba[4 * i] = data[pos + 3 * i];
    rgba[4 * i + 1] = data[pos + 3 * i + 1];
    rgba[4 * i + 2] = data[pos + 3 * i + 2];
    rgba[4 * i + 3] = 255;
  }
  return { width, height, rgba };
}

function isSpace(byte: number): boolean {
  return byte === 0x20 || byte === 0x09 || byte === 0x0a || byte === 0x0d;
}
