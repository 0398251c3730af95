/** Stroke capture in image space.
 *
 * The canvas shows the slice scaled by zoom and shifted by pan; every
 * pointer sample is converted to an integer image pixel *before* it is
 * stored, so the record that reaches the server is identical no matter
 * how the user had the view configured.
 */

import type { ScribbleRecord, SeedRecord } from "./api.js";

export interface Viewport {
  zoom: number;
  pan: { x: number; y: number };
}

export function canvasToImage(
  cx: number,
  cy: number,
  view: Viewport,
): [number, number] {
  return [
    Math.floor((cx - view.pan.x) / view.zoom),
    Math.floor((cy - view.pan.y) / view.zoom),
  ];
}

export function imageToCanvas(
  ix: number,
  iy: number,
  view: Viewport,
): [number, number] {
  // pixel centre, so a 1px dot lands in the middle of the zoomed cell
  return [
    (ix + 0.5) * view.zoom + view.pan.x,
    (iy + 0.5) * view.zoom + view.pan.y,
  ];
}

export function inBounds(
  x: number,
  y: number,
  shape: [number, number],
): boolean {
  return x >= 0 && y >= 0 && x < shape[0] && y < shape[1];
}

/** Collects one polyline between pointerdown and pointerup. */
export class StrokeBuilder {
  readonly points: [number, number][] = [];

  constructor(
    readonly frame: number,
    readonly cls: "FG" | "BG",
    readonly radius: number,
    readonly shape: [number, number],
  ) {}

  /** Add a pointer sample; out-of-image samples are dropped. */
  add(cx: number, cy: number, view: Viewport): void {
    const [x, y] = canvasToImage(cx, cy, view);
    if (inBounds(x, y, this.shape)) this.points.push([x, y]);
  }

  /** null when every sample fell outside the image. */
  finish(): ScribbleRecord | null {
    if (this.points.length === 0) return null;
    return {
      frame: this.frame,
      cls: this.cls,
      radius: this.radius,
      points: this.points.slice(),
    };
  }
}

export function seedAt(
  cx: number,
  cy: number,
  view: Viewport,
  frame: number,
  shape: [number, number],
): SeedRecord | null {
  const [x, y] = canvasToImage(cx, cy, view);
  if (!inBounds(x, y, shape)) return null;
  return { frame, x, y };
}
