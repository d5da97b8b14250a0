/**
 * Canonical run-length masks, matching the engine's wire format.
 *
 * A mask travels as a bare list of run lengths over the row-major pixel
 * order: runs alternate zero-pixels / one-pixels starting with zeros, only
 * the leading run may be 0, and the runs must sum to exactly width*height.
 * Anything else is rejected before it reaches a backend.
 */

export interface Mask {
  width: number;
  height: number;
  /** Row-major pixels, one byte each, 0 or 1. */
  data: Uint8Array;
}

export class RleError extends Error {}

function checkGrid(width: number, height: number): void {
  if (!Number.isInteger(width) || !Number.isInteger(height) || width < 1 || height < 1) {
    throw new RleError(`bad RLE grid ${width}x${height}`);
  }
}

/** Validate a wire-format run list and expand it into a dense mask. */
export function decodeRle(width: number, height: number, counts: unknown): Mask {
  checkGrid(width, height);
  if (!Array.isArray(counts) || counts.length === 0) {
    throw new RleError("runs must be a non-empty list");
  }
  let total = 0;
  for (let i = 0; i < counts.length; i++) {
    const run = counts[i];
    if (typeof run !== "number" || !Number.isInteger(run)) {
      throw new RleError(`run ${i} is not an integer: ${JSON.stringify(run)}`);
    }
    if (run < 0) {
      throw new RleError(`run ${i} is negative: ${run}`);
    }
    if (run === 0 && i > 0) {
      throw new RleError(`zero-length run at position ${i} (only a leading zero is allowed)`);
    }
    total += run;
  }
  if (total !== width * height) {
    throw new RleError(
      `runs sum to ${total}, expected ${width * height} for a ${width}x${height} grid`,
    );
  }
  const data = new Uint8Array(width * height);
  let offset = 0;
  for (let i = 0; i < counts.length; i++) {
    const run = counts[i] as number;
    if (i % 2 === 1) {
      data.fill(1, offset, offset + run);
    }
    offset += run;
  }
  return { width, height, data };
}

/** Encode a dense mask back into its unique canonical run list. */
export function encodeRle(mask: Mask): number[] {
  const { width, height, data } = mask;
  checkGrid(width, height);
  if (data.length !== width * height) {
    throw new RleError(`mask has ${data.length} pixels, grid wants ${width * height}`);
  }
  const runs: number[] = [];
  if (data[0] === 1) {
    runs.push(0);
  }
  let current = data[0];
  let length = 0;
  for (let i = 0; i < data.length; i++) {
    if (data[i] === current) {
      length += 1;
    } else {
      runs.push(length);
      current = data[i];
      length = 1;
    }
  }
  runs.push(length);
  return runs;
}

/** Number of set pixels. */
export function maskArea(mask: Mask): number {
  let area = 0;
  for (let i = 0; i < mask.data.length; i++) {
    area += mask.data[i] as number;
  }
  return area;
}

/** True when every set pixel of `inner` is also set in `outer`. */
export function isSubset(inner: Mask, outer: Mask): boolean {
  if (inner.width !== outer.width || inner.height !== outer.height) {
    return false;
  }
  for (let i = 0; i < inner.data.length; i++) {
    if (inner.data[i] === 1 && outer.data[i] === 0) {
      return false;
    }
  }
  return true;
}
