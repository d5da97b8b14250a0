/**
 * Binary erosion for the mock generator backend.
 *
 * The structuring element is the Chebyshev ball of the given radius (a
 * (2r+1)x(2r+1) square) and pixels outside the grid count as background, so
 * erosion always pulls a mask away from the image border. Radius 0 is the
 * identity. The square element is separable, so we erode rows then columns.
 */

import type { Mask } from "./rle.js";

function erodeLines(
  data: Uint8Array,
  width: number,
  height: number,
  radius: number,
  horizontal: boolean,
): Uint8Array {
  const out = new Uint8Array(data.length);
  const lines = horizontal ? height : width;
  const length = horizontal ? width : height;
  const stride = horizontal ? 1 : width;
  for (let line = 0; line < lines; line++) {
    const base = horizontal ? line * width : line;
    // run of consecutive ones ending at index i, in elements
    let run = 0;
    for (let i = 0; i < length; i++) {
      run = data[base + i * stride] === 1 ? run + 1 : 0;
      // the window [i-2r, i] is full of ones and lies inside the line
      const center = i - radius;
      if (run >= 2 * radius + 1 && center - radius >= 0) {
        out[base + center * stride] = 1;
      }
    }
  }
  return out;
}

export function erode(mask: Mask, radius: number): Mask {
  if (!Number.isInteger(radius) || radius < 0) {
    throw new RangeError(`erosion radius must be a non-negative integer, got ${radius}`);
  }
  if (radius === 0) {
    return { width: mask.width, height: mask.height, data: mask.data.slice() };
  }
  const rows = erodeLines(mask.data, mask.width, mask.height, radius, true);
  const cols = erodeLines(rows, mask.width, mask.height, radius, false);
  return { width: mask.width, height: mask.height, data: cols };
}
