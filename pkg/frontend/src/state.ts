// Client-side view state: a mirror of service responses plus the
// buffers that accumulate streamed points. No physics happens here;
// every value is traceable to a service event or a user input.

import type {
  ApparatusSnapshot,
  FitResult,
  ImagePayload,
  PixelsPayload,
  PointPayload,
} from "./types.js";

export interface SweepBuffer {
  xs: (number | undefined)[];
  ys: (number | undefined)[];
  total: number;
  received: number;
}

export function emptySweep(): SweepBuffer {
  return { xs: [], ys: [], total: 0, received: 0 };
}

/** Idempotent upsert keyed by sweep index: replaying or reordering
 * events leaves the same buffer. */
export function upsertPoint(buffer: SweepBuffer, p: PointPayload):
    SweepBuffer {
  const xs = buffer.xs.slice();
  const ys = buffer.ys.slice();
  if (xs[p.index] === undefined) buffer.received += 1;
  xs[p.index] = p.x;
  ys[p.index] = p.y;
  return { xs, ys, total: p.total, received: buffer.received };
}

export function sweepArrays(buffer: SweepBuffer):
    { x: number[]; y: number[] } {
  const x: number[] = [];
  const y: number[] = [];
  for (let i = 0; i < buffer.xs.length; i++) {
    const xv = buffer.xs[i];
    const yv = buffer.ys[i];
    if (xv !== undefined && yv !== undefined) {
      x.push(xv);
      y.push(yv);
    }
  }
  return { x, y };
}

export interface ImageBuffer {
  nx: number;
  ny: number;
  xUm: number[];
  yUm: number[];
  rows: (number[] | undefined)[];
}

export function startImage(p: ImagePayload): ImageBuffer {
  return { nx: p.nx, ny: p.ny, xUm: p.x_um, yUm: p.y_um,
           rows: new Array(p.ny).fill(undefined) };
}

export function upsertRow(image: ImageBuffer, p: PixelsPayload):
    ImageBuffer {
  const rows = image.rows.slice();
  rows[p.index] = p.counts;
  return { ...image, rows };
}

export interface ViewState {
  apparatus: ApparatusSnapshot | null;
  activeJob: string | null;
  sweep: SweepBuffer;
  image: ImageBuffer | null;
  marker: { xUm: number; yUm: number } | null;
  lastFit: FitResult | null;
  lastSplittingHz: number | null;
  log: string[];
}

export function initialState(): ViewState {
  return {
    apparatus: null,
    activeJob: null,
    sweep: emptySweep(),
    image: null,
    marker: null,
    lastFit: null,
    lastSplittingHz: null,
    log: [],
  };
}

/** Coalesce repaints to at most `hz` per second (classroom machines). */
export function makeThrottle(hz: number, now: () => number = Date.now) {
  const interval = 1000 / hz;
  let last = -Infinity;
  return (draw: () => void, force = false): boolean => {
    const t = now();
    if (force || t - last >= interval) {
      last = t;
      draw();
      return true;
    }
    return false;
  };
}
