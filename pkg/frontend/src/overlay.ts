// Mask overlay compositing on raw RGBA buffers (canvas-free, so it is
// testable in node and the integration test can check exact coverage).

export const MASK_COLORS: [number, number, number][] = [
  [255, 64, 64],   // small
  [64, 160, 255],  // medium
  [64, 255, 128],  // large
];

export const MASK_OPACITIES = [0.55, 0.4, 0.25];

// Blend each mask over the base image at its level's opacity; returns a new
// buffer. masks are flat row-major 0/1 arrays of h*w.
export function overlayMasks(base: Uint8ClampedArray, w: number, h: number,
                             masks: Uint8Array[]): Uint8ClampedArray {
  const out = new Uint8ClampedArray(base);
  masks.forEach((mask, level) => {
    const [cr, cg, cb] = MASK_COLORS[level % MASK_COLORS.length];
    const a = MASK_OPACITIES[level % MASK_OPACITIES.length];
    for (let i = 0; i < w * h; i++) {
      if (!mask[i]) continue;
      const o = i * 4;
      out[o] = Math.round((1 - a) * out[o] + a * cr);
      out[o + 1] = Math.round((1 - a) * out[o + 1] + a * cg);
      out[o + 2] = Math.round((1 - a) * out[o + 2] + a * cb);
      out[o + 3] = 255;
    }
  });
  return out;
}

// Pixels changed by the overlay == union of the masks (used by tests to
// assert the overlay shows exactly what the API returned).
export function changedPixels(base: Uint8ClampedArray,
                              overlaid: Uint8ClampedArray, w: number,
                              h: number): Uint8Array {
  const out = new Uint8Array(w * h);
  for (let i = 0; i < w * h; i++) {
    const o = i * 4;
    out[i] = (base[o] !== overlaid[o] || base[o + 1] !== overlaid[o + 1]
      || base[o + 2] !== overlaid[o + 2] || base[o + 3] !== overlaid[o + 3]) ? 1 : 0;
  }
  return out;
}
