/** Nearest-neighbor upscale so the 16x16 world is legible at 16x zoom. */

export function upscaleNearest(
  rgba: Uint8ClampedArray,
  width: number,
  height: number,
  scale: number,
): Uint8ClampedArray {
  if (rgba.length !== width * height * 4) {
    throw new Error(`buffer length ${rgba.length} != ${width}x${height}x4`);
  }
  if (scale < 1 || !Number.isInteger(scale)) {
    throw new Error(`scale must be a positive integer, got ${scale}`);
  }
  const out = new Uint8ClampedArray(width * scale * height * scale * 4);
  const outW = width * scale;
  for (let y = 0; y < height * scale; y++) {
    const sy = Math.floor(y / scale);
    for (let x = 0; x < outW; x++) {
      const sx = Math.floor(x / scale);
      const src = (sy * width + sx) * 4;
      const dst = (y * outW + x) * 4;
      out[dst] = rgba[src];
      out[dst + 1] = rgba[src + 1];
      out[dst + 2] = rgba[src + 2];
      out[dst + 3] = rgba[src + 3];
    }
  }
  return out;
}

/** Draw a base64 PNG into a canvas at integer zoom with crisp pixels. */
export async function drawZoomedPng(
  canvas: HTMLCanvasElement,
  base64Png: string,
  scale: number = 16,
): Promise<void> {
  const img = new Image();
  img.src = `data:image/png;base64,${base64Png}`;
  await img.decode();
  canvas.width = img.naturalWidth * scale;
  canvas.height = img.naturalHeight * scale;
  const ctx = canvas.getContext("2d");
  if (!ctx) throw new Error("canvas 2d context unavailable");
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(img, 0, 0, canvas.width, canvas.height);
}
