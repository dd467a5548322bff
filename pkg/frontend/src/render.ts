/** Canvas rendering of the editing document. */

import { EditorDocument } from "./document.js";

export const CLASS_COLORS: [number, number, number][] = [
  [86, 129, 216],   // sky
  [92, 154, 80],    // ground
  [224, 88, 72],    // disc
  [140, 140, 150],  // rect
  [200, 180, 90],
  [150, 90, 190],
  [90, 190, 180],
  [230, 150, 200],
];

export function drawDocument(doc: EditorDocument, ctx: CanvasRenderingContext2D, scale: number) {
  const { height: h, width: w } = doc;
  const img = new ImageData(w, h);
  const boundary = doc.boundaryMask();
  for (let i = 0; i < h * w; i++) {
    const color = CLASS_COLORS[doc.labels[i] % CLASS_COLORS.length];
    let [r, g, b] = color;
    if (doc.instances[i] !== 0) {
      // subtle per-instance tint so adjacent same-class objects read apart
      const tint = 0.82 + 0.18 * (((doc.instances[i] * 2654435761) >>> 28) / 15);
      r *= tint;
      g *= tint;
      b *= tint;
    }
    if (boundary[i]) {
      r *= 0.45;
      g *= 0.45;
      b *= 0.45;
    }
    const o = i * 4;
    img.data[o] = r;
    img.data[o + 1] = g;
    img.data[o + 2] = b;
    img.data[o + 3] = 255;
  }
  const off = new OffscreenCanvas(w, h);
  const offCtx = off.getContext("2d")!;
  offCtx.putImageData(img, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.clearRect(0, 0, w * scale, h * scale);
  ctx.drawImage(off, 0, 0, w * scale, h * scale);
}
