/** Pure view-state model: every transition returns a new state object.
 *
 * Zoom and pan live here but are display-only; nothing in this module
 * touches image coordinates, so no state change can move a stroke.
 */

import type { Axis } from "./api.js";

export type Tool = "pan" | "scribble-fg" | "scribble-bg" | "seed";

export interface ViewState {
  axis: Axis;
  index: number;
  window: { center: number; width: number };
  tool: Tool;
  radius: number;
  overlay: string | null;
  zoom: number;
  pan: { x: number; y: number };
}

export const DEFAULT_STATE: ViewState = {
  axis: "axial",
  index: 0,
  window: { center: 0, width: 2000 },
  tool: "pan",
  radius: 4,
  overlay: null,
  zoom: 1,
  pan: { x: 0, y: 0 },
};

export type Dims = [number, number, number];

/** Number of slices along an axis: the fixed coordinate's extent. */
export function sliceCount(dims: Dims, axis: Axis): number {
  switch (axis) {
    case "axial":
      return dims[2];
    case "coronal":
      return dims[1];
    case "sagittal":
      return dims[0];
  }
}

/** Width/height in image pixels of the slice the server renders. */
export function sliceShape(dims: Dims, axis: Axis): [number, number] {
  switch (axis) {
    case "axial":
      return [dims[0], dims[1]];
    case "coronal":
      return [dims[0], dims[2]];
    case "sagittal":
      return [dims[1], dims[2]];
  }
}

function clamp(v: number, lo: number, hi: number): number {
  return Math.min(Math.max(v, lo), hi);
}

export function clampIndex(index: number, dims: Dims, axis: Axis): number {
  return clamp(Math.round(index), 0, sliceCount(dims, axis) - 1);
}

export function setAxis(s: ViewState, dims: Dims, axis: Axis): ViewState {
  return { ...s, axis, index: clampIndex(s.index, dims, axis) };
}

export function setIndex(s: ViewState, dims: Dims, index: number): ViewState {
  return { ...s, index: clampIndex(index, dims, s.axis) };
}

export function stepIndex(s: ViewState, dims: Dims, delta: number): ViewState {
  return setIndex(s, dims, s.index + delta);
}

export function setTool(s: ViewState, tool: Tool): ViewState {
  return { ...s, tool };
}

export function setRadius(s: ViewState, radius: number): ViewState {
  return { ...s, radius: Math.max(1, Math.round(radius)) };
}

export function setWindow(s: ViewState, center: number, width: number): ViewState {
  return { ...s, window: { center, width: Math.max(1, width) } };
}

export function setOverlay(s: ViewState, overlay: string | null): ViewState {
  return { ...s, overlay };
}

export function setZoom(s: ViewState, zoom: number): ViewState {
  return { ...s, zoom: clamp(zoom, 0.25, 16) };
}

export function panBy(s: ViewState, dx: number, dy: number): ViewState {
  return { ...s, pan: { x: s.pan.x + dx, y: s.pan.y + dy } };
}

/** Scribbles and seeds are per-frame records, so those tools need the
 *  frame (axial) view; elsewhere they degrade to pan. */
export function effectiveTool(s: ViewState): Tool {
  if (s.axis !== "axial" && s.tool !== "pan") return "pan";
  return s.tool;
}
