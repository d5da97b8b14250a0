/**
 * Model backends behind the wire protocol.
 *
 * The "mock" backend answers every request without any model: the generator
 * erodes the ROI by a fixed radius, the evaluator scores everything 0.5, the
 * refiner echoes the mask and the classifier names one constant category.
 * That is deliberately enough to drive the engine end to end -- handshake,
 * request validation, response encoding -- with nothing heavier installed.
 * Real model loading would slot in as another implementation of `Backend`.
 */

import { erode } from "./morphology.js";
import type { Mask } from "./rle.js";

export interface GenerateRequest {
  image: string;
  roi: Mask;
  point: [number, number];
}

export interface ScoreRequest {
  image: string;
  mask: Mask;
  /** Present in parts runs: the object whose pieces are being scored. */
  object: Mask | null;
}

export interface RefineRequest {
  image: string;
  mask: Mask;
}

export interface ClassifyRequest {
  image: string;
  mask: Mask;
}

export interface Backend {
  generate(req: GenerateRequest): Mask;
  score(req: ScoreRequest): number;
  refine(req: RefineRequest): Mask;
  classify(req: ClassifyRequest): number;
}

export interface MockOptions {
  /** Erosion radius applied to the ROI by the mock generator. */
  erosion: number;
  /** Category the mock classifier assigns to every mask. */
  category: number;
}

export class MockBackend implements Backend {
  constructor(private readonly options: MockOptions) {
    if (!Number.isInteger(options.erosion) || options.erosion < 0) {
      throw new RangeError(`erosion must be a non-negative integer, got ${options.erosion}`);
    }
    if (!Number.isInteger(options.category)) {
      throw new RangeError(`category must be an integer, got ${options.category}`);
    }
  }

  generate(req: GenerateRequest): Mask {
    return erode(req.roi, this.options.erosion);
  }

  score(_req: ScoreRequest): number {
    return 0.5;
  }

  refine(req: RefineRequest): Mask {
    return req.mask;
  }

  classify(_req: ClassifyRequest): number {
    return this.options.category;
  }
}

export function createBackend(spec: string, options: MockOptions): Backend {
  if (spec === "mock") {
    return new MockBackend(options);
  }
  throw new Error(`unknown backend ${JSON.stringify(spec)}; only "mock" ships with the adapter`);
}
