import { describe, expect, it } from "vitest";
import { displayToImage, displayToPixel, layoutFor } from "../src/coords.js";

describe("click-to-pixel mapping", () => {
  it("1:1 display: center click hits the center pixel", () => {
    const px = displayToPixel(128, 128, 256, 256, 256, 256);
    expect(px).toEqual({ x: 128, y: 128 });
  });

  it("2x display: screen (100,60) -> pixel (50,30)", () => {
    const px = displayToPixel(100, 60, 512, 512, 256, 256);
    expect(px).toEqual({ x: 50, y: 30 });
  });

  it("letterboxed wide canvas centers the image", () => {
    // 512x256 canvas, 256x256 image at 1x: x offset 128
    const lay = layoutFor(512, 256, 256, 256);
    expect(lay.scale).toBe(1);
    expect(lay.offsetX).toBe(128);
    expect(displayToPixel(128, 0, 512, 256, 256, 256)).toEqual({ x: 0, y: 0 });
    expect(displayToPixel(127, 10, 512, 256, 256, 256)).toBeNull();
  });

  it("mapping error is at most 0.5 px at 1x and 2x", () => {
    for (const scale of [1, 2]) {
      const cw = 256 * scale;
      for (let i = 0; i < 200; i++) {
        const tx = (i * 97) % 256;
        const ty = (i * 57) % 256;
        // click at the display location of the pixel center
        const clickX = (tx + 0.5) * scale;
        const clickY = (ty + 0.5) * scale;
        const cont = displayToImage(clickX, clickY, cw, cw, 256, 256)!;
        expect(Math.abs(cont.x - (tx + 0.5))).toBeLessThanOrEqual(0.5);
        expect(Math.abs(cont.y - (ty + 0.5))).toBeLessThanOrEqual(0.5);
        expect(displayToPixel(clickX, clickY, cw, cw, 256, 256)).toEqual({ x: tx, y: ty });
      }
    }
  });

  it("clicks outside the image area return null", () => {
    expect(displayToPixel(600, 10, 512, 256, 256, 256)).toBeNull();
    expect(displayToPixel(-1, 10, 256, 256, 256, 256)).toBeNull();
  });
});
