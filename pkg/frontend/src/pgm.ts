/** Minimal binary P5 decoder so keyframes render without any codec. */

export interface PgmImage {
  width: number;
  height: number;
  pixels: Uint8Array;
}

export function parsePgm(bytes: Uint8Array): PgmImage {
  if (bytes[0] !== 0x50 || bytes[1] !== 0x35) {
    throw new Error("not a binary P5 image");
  }
  let pos = 2;
  const fields: number[] = [];
  while (fields.length < 3) {
    if (pos >= bytes.length) throw new Error("truncated P5 header");
    const c = bytes[pos]!;
    if (c === 0x23) {
      while (pos < bytes.length && bytes[pos] !== 0x0a) pos += 1;
      pos += 1;
    } else if (c === 0x20 || c === 0x09 || c === 0x0a || c === 0x0d) {
      pos += 1;
    } else if (c >= 0x30 && c <= 0x39) {
      let value = 0;
      while (pos < bytes.length && bytes[pos]! >= 0x30 && bytes[pos]! <= 0x39) {
        value = value * 10 + (bytes[pos]! - 0x30);
        pos += 1;
      }
      fields.push(value);
    } else {
      throw new Error(`unexpected header byte ${c}`);
    }
  }
  const [width, height, maxval] = fields as [number, number, number];
  if (maxval > 255) throw new Error("P5 maxval above 255 unsupported");
  pos += 1; // single whitespace after maxval
  const need = width * height;
  const pixels = bytes.slice(pos, pos + need);
  if (pixels.length < need) throw new Error("truncated P5 payload");
  return { width, height, pixels };
}

export function drawPgm(canvas: HTMLCanvasElement, image: PgmImage, scale = 3): void {
  canvas.width = image.width;
  canvas.height = image.height;
  canvas.style.width = `${image.width * scale}px`;
  canvas.style.height = `${image.height * scale}px`;
  canvas.style.imageRendering = "pixelated";
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const rgba = new Uint8ClampedArray(image.width * image.height * 4);
  for (let i = 0; i < image.pixels.length; i += 1) {
    const v = image.pixels[i]!;
    rgba[i * 4] = v;
    rgba[i * 4 + 1] = v;
    rgba[i * 4 + 2] = v;
    rgba[i * 4 + 3] = 255;
  }
  ctx.putImageData(new ImageData(rgba, image.width, image.height), 0, 0);
}

export function serializePgm(width: number, height: number, pixels: Uint8Array): Uint8Array {
  const header = new TextEncoder().encode(`P5\n${width} ${height}\n255\n`);
  const out = new Uint8Array(header.length + pixels.length);
  out.set(header);
  out.set(pixels, header.length);
  return out;
}
