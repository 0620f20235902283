/** Exact preview-to-frame coordinate mapping.
 *
 * The preview canvas letterboxes the frame (aspect-preserving fit, centered)
 * but the mapping itself is a single affine scale + offset in each axis, so
 * frame->view->frame round trips are exact up to floating-point rounding at
 * every window size.
 */

export interface Mapping {
  scale: number;
  offsetX: number;
  offsetY: number;
}

export function fitMapping(
  frameW: number,
  frameH: number,
  viewW: number,
  viewH: number,
): Mapping {
  if (frameW <= 0 || frameH <= 0 || viewW <= 0 || viewH <= 0) {
    throw new Error("dimensions must be positive");
  }
  const scale = Math.min(viewW / frameW, viewH / frameH);
  return {
    scale,
    offsetX: (viewW - frameW * scale) / 2,
    offsetY: (viewH - frameH * scale) / 2,
  };
}

export function frameToView(m: Mapping, x: number, y: number): [number, number] {
  return [m.offsetX + x * m.scale, m.offsetY + y * m.scale];
}

export function viewToFrame(m: Mapping, x: number, y: number): [number, number] {
  return [(x - m.offsetX) / m.scale, (y - m.offsetY) / m.scale];
}

/** True when the view point lands inside the frame's letterboxed area. */
export function inFrame(
  m: Mapping,
  frameW: number,
  frameH: number,
  viewX: number,
  viewY: number,
): boolean {
  const [x, y] = viewToFrame(m, viewX, viewY);
  return x >= 0 && x < frameW && y >= 0 && y < frameH;
}
