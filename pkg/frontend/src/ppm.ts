/** Binary PPM (P6, maxval 255) decoding for client-side thumbnails. */

export interface DecodedPpm {
  width: number;
  height: number;
  /** RGBA, ready for ImageData. */
  rgba: Uint8ClampedArray;
}

export function decodePpm(data: Uint8Array): DecodedPpm {
  const fields: string[] = [];
  let pos = 0;
  while (fields.length < 4) {
    if (pos >= data.length) throw new Error("truncated PPM header");
    const c = data[pos]!;
    if (c === 0x23 /* # */) {
      while (pos < data.length && data[pos] !== 0x0a) pos++;
      pos++;
    } else if (isSpace(c)) {
      pos++;
    } else {
      let end = pos;
      while (end < data.length && !isSpace(data[end]!)) end++;
      fields.push(new TextDecoder("ascii").decode(data.subarray(pos, end)));
      pos = end;
    }
  }
  if (fields[0] !== "P6") throw new Error(`not a binary PPM: magic ${fields[0]}`);
  const width = Number(fields[1]);
  const height = Number(fields[2]);
  if (Number(fields[3]) !== 255) throw new Error(`unsupported maxval ${fields[3]}`);
  pos++; // the single whitespace after maxval
  const need = width * height * 3;
  if (data.length - pos < need) throw new Error("truncated PPM raster");
  const rgba = new Uint8ClampedArray(width * height * 4);
  for (let i = 0; i < width * height; i++) {
    rgba[i * 4] = data[pos + i * 3]!;
    rgba[i * 4 + 1] = data[pos + i * 3 + 1]!;
    rgba[i * 4 + 2] = data[pos + i * 3 + 2]!;
    rgba[i * 4 + 3] = 255;
  }
  return { width, height, rgba };
}

function isSpace(byte: number): boolean {
  return byte === 0x20 || byte === 0x0a || byte === 0x0d || byte === 0x09;
}

/** Render a decoded photo into a canvas (browser only). */
export function drawToCanvas(decoded: DecodedPpm, canvas: HTMLCanvasElement): void {
  canvas.width = decoded.width;
  canvas.height = decoded.height;
  const ctx = canvas.getContext("2d");
  if (!ctx) throw new Error("2d canvas unavailable");
  // fresh allocation pins the backing store to a plain ArrayBuffer
  const pixels = new Uint8ClampedArray(decoded.rgba);
  ctx.putImageData(new ImageData(pixels, decoded.width, decoded.height), 0, 0);
}
