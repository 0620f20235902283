import { describe, expect, it } from "vitest";

import { fitMapping, frameToView, inFrame, viewToFrame } from "../src/overlay.js";

const FRAME = [640, 480] as const;
const WINDOW_SIZES: [number, number][] = [
  [640, 480], // exact
  [1280, 960], // 2x
  [320, 240], // 0.5x
  [800, 480], // pillarboxed
  [640, 600], // letterboxed
  [1023, 711], // odd, non-integral scale
  [97, 613], // extreme aspect
];

describe("preview coordinate mapping", () => {
  it("round-trips frame->view->frame exactly at every window size", () => {
    for (const [vw, vh] of WINDOW_SIZES) {
      const m = fitMapping(FRAME[0], FRAME[1], vw, vh);
      for (const [x, y] of [
        [0, 0],
        [639, 479],
        [320.25, 240.75],
        [0.5, 478.5],
        [123.456, 7.891],
      ]) {
        const [vx, vy] = frameToView(m, x, y);
        const [bx, by] = viewToFrame(m, vx, vy);
        expect(Math.abs(bx - x)).toBeLessThan(1e-9);
        expect(Math.abs(by - y)).toBeLessThan(1e-9);
      }
    }
  });

  it("preserves aspect ratio and centers the frame", () => {
    for (const [vw, vh] of WINDOW_SIZES) {
      const m = fitMapping(FRAME[0], FRAME[1], vw, vh);
      const w = FRAME[0] * m.scale;
      const h = FRAME[1] * m.scale;
      expect(w).toBeLessThanOrEqual(vw + 1e-9);
      expect(h).toBeLessThanOrEqual(vh + 1e-9);
      // one axis fills the view exactly
      expect(
        Math.min(Math.abs(w - vw), Math.abs(h - vh)),
      ).toBeLessThan(1e-9);
      // centered: equal margins
      expect(Math.abs(m.offsetX - (vw - w) / 2)).toBeLessThan(1e-9);
      expect(Math.abs(m.offsetY - (vh - h) / 2)).toBeLessThan(1e-9);
    }
  });

  it("frame corners land on the letterbox bounds", () => {
    const m = fitMapping(640, 480, 800, 480); // pillarboxed, scale 1
    expect(frameToView(m, 0, 0)).toEqual([80, 0]);
    expect(frameToView(m, 640, 480)).toEqual([720, 480]);
  });

  it("inFrame excludes the letterbox margins", () => {
    const m = fitMapping(640, 480, 800, 480);
    expect(inFrame(m, 640, 480, 400, 240)).toBe(true);
    expect(inFrame(m, 640, 480, 40, 240)).toBe(false); // left margin
    expect(inFrame(m, 640, 480, 760, 240)).toBe(false); // right margin
  });

  it("rejects non-positive dimensions", () => {
    expect(() => fitMapping(0, 480, 640, 480)).toThrow();
    expect(() => fitMapping(640, 480, 640, 0)).toThrow();
  });
});
