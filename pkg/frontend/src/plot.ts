// Minimal canvas renderers. jsdom has no 2D context; every renderer
// degrades to a no-op there so the panels stay fully testable.

import type { ImageBuffer } from "./state.js";

function context(canvas: HTMLCanvasElement): CanvasRenderingContext2D | null {
  try {
    return canvas.getContext("2d");
  } catch {
    return null;
  }
}

export function drawSweep(canvas: HTMLCanvasElement, x: number[],
                          y: number[],
                          overlay?: { x: number[]; y: number[] }): void {
  const ctx = context(canvas);
  if (!ctx || x.length === 0) return;
  const w = canvas.width;
  const h = canvas.height;
  ctx.clearRect(0, 0, w, h);
  const xs = [...x, ...(overlay?.x ?? [])];
  const ys = [...y, ...(overlay?.y ?? [])];
  const x0 = Math.min(...xs);
  const x1 = Math.max(...xs);
  const y0 = Math.min(...ys);
  const y1 = Math.max(...ys);
  const px = (v: number) => ((v - x0) / (x1 - x0 || 1)) * (w - 20) + 10;
  const py = (v: number) => h - (((v - y0) / (y1 - y0 || 1)) * (h - 20) + 10);
  ctx.strokeStyle = "#2c7fb8";
  ctx.beginPath();
  x.forEach((xv, i) => {
    if (i === 0) ctx.moveTo(px(xv), py(y[i]));
    else ctx.lineTo(px(xv), py(y[i]));
  });
  ctx.stroke();
  if (overlay) {
    ctx.strokeStyle = "#d95f0e";
    ctx.beginPath();
    overlay.x.forEach((xv, i) => {
      if (i === 0) ctx.moveTo(px(xv), py(overlay.y[i]));
      else ctx.lineTo(px(xv), py(overlay.y[i]));
    });
    ctx.stroke();
  }
}

export function drawImage(canvas: HTMLCanvasElement, image: ImageBuffer,
                          marker: { xUm: number; yUm: number } | null):
    void {
  const ctx = context(canvas);
  if (!ctx) return;
  const w = canvas.width;
  const h = canvas.height;
  ctx.clearRect(0, 0, w, h);
  let peak = 1;
  for (const row of image.rows) {
    if (row) peak = Math.max(peak, ...row);
  }
  const cw = w / image.nx;
  const ch = h / image.ny;
  image.rows.forEach((row, iy) => {
    if (!row) return;
    row.forEach((value, ix) => {
      const v = Math.round((value / peak) * 255);
      ctx.fillStyle = `rgb(${v},${Math.round(v * 0.6)},${255 - v})`;
      ctx.fillRect(ix * cw, h - (iy + 1) * ch, Math.ceil(cw),
                   Math.ceil(ch));
    });
  });
  if (marker) {
    const fx = (marker.xUm - image.xUm[0]) /
      (image.xUm[image.xUm.length - 1] - image.xUm[0] || 1);
    const fy = (marker.yUm - image.yUm[0]) /
      (image.yUm[image.yUm.length - 1] - image.yUm[0] || 1);
    ctx.strokeStyle = "#ffffff";
    ctx.beginPath();
    ctx.arc(fx * w, h - fy * h, 6, 0, 2 * Math.PI);
    ctx.stroke();
  }
}

/** Pixel -> sample-plane coordinates for click-to-move. */
export function canvasToSample(image: ImageBuffer, fracX: number,
                               fracY: number): { xUm: number; yUm: number } {
  const x0 = image.xUm[0];
  const x1 = image.xUm[image.xUm.length - 1];
  const y0 = image.yUm[0];
  const y1 = image.yUm[image.yUm.length - 1];
  return { xUm: x0 + fracX * (x1 - x0), yUm: y0 + fracY * (y1 - y0) };
}
