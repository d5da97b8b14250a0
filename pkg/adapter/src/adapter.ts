/**
 * The request loop: line-delimited JSON over stdin/stdout.
 *
 * Handshake first -- the engine sends {"type":"hello","role":R,"version":1}
 * and we answer {"type":"ready"} only when role and version both match our
 * configuration. After that, one request per line, answered strictly in
 * order:
 *
 *   {"type":"generate","id":N,"image":p,"size":[H,W],"roi_rle":[...],"point":[x,y]}
 *       -> {"type":"mask","id":N,"rle":[...]}
 *   {"type":"score","id":N,...,"mask_rle":[...],"object_rle":[...]|null}
 *       -> {"type":"score","id":N,"value":v}
 *   {"type":"refine","id":N,...,"mask_rle":[...]}   -> {"type":"mask",...}
 *   {"type":"classify","id":N,...,"mask_rle":[...]} -> {"type":"class","id":N,"category":c}
 *
 * A malformed request earns {"type":"error",...} and the loop keeps serving;
 * only a failed handshake is unrecoverable (nonzero exit).
 */

import { createInterface } from "node:readline";
import type { Readable, Writable } from "node:stream";

import { createBackend, type Backend } from "./backends.js";
import { decodeRle, encodeRle, RleError, type Mask } from "./rle.js";

export const ROLES = ["generator", "evaluator", "refiner", "classifier"] as const;
export type Role = (typeof ROLES)[number];
export const PROTOCOL_VERSION = 1;

/** Which request type each role is willing to answer. */
const REQUEST_FOR_ROLE: Record<Role, string> = {
  generator: "generate",
  evaluator: "score",
  refiner: "refine",
  classifier: "classify",
};

export interface AdapterConfig {
  role: Role;
  backend: string;
  /** Pass-through placement hint for real backends; the mock ignores it. */
  device: string;
  version: number;
  erosion: number;
  category: number;
}

class RequestError extends Error {}

function isRecord(value: unknown): value is Record<string, unknown> {
  return typeof value === "object" && value !== null && !Array.isArray(value);
}

function requireString(msg: Record<string, unknown>, field: string): string {
  const value = msg[field];
  if (typeof value !== "string") {
    throw new RequestError(`field ${JSON.stringify(field)} must be a string`);
  }
  return value;
}

function requireSize(msg: Record<string, unknown>): [number, number] {
  const value = msg["size"];
  if (!Array.isArray(value) || value.length !== 2) {
    throw new RequestError('field "size" must be [height, width]');
  }
  const [h, w] = value;
  if (!Number.isInteger(h) || !Number.isInteger(w) || h < 1 || w < 1) {
    throw new RequestError(`size [${h}, ${w}] is not a positive integer pair`);
  }
  return [h, w];
}

function requireMask(msg: Record<string, unknown>, field: string): Mask {
  const [h, w] = requireSize(msg);
  try {
    return decodeRle(w, h, msg[field]);
  } catch (err) {
    if (err instanceof RleError) {
      throw new RequestError(`field ${JSON.stringify(field)}: ${err.message}`);
    }
    throw err;
  }
}

function requirePoint(msg: Record<string, unknown>, mask: Mask): [number, number] {
  const value = msg["point"];
  if (!Array.isArray(value) || value.length !== 2) {
    throw new RequestError('field "point" must be [x, y]');
  }
  const [x, y] = value;
  if (!Number.isInteger(x) || !Number.isInteger(y)) {
    throw new RequestError(`point [${x}, ${y}] is not an integer pair`);
  }
  if (x < 0 || y < 0 || x >= mask.width || y >= mask.height) {
    throw new RequestError(`point [${x}, ${y}] lies outside the ${mask.width}x${mask.height} grid`);
  }
  return [x, y];
}

/** Build the reply for one parsed request object. Throws RequestError. */
export function answer(cfg: AdapterConfig, backend: Backend, msg: unknown): Record<string, unknown> {
  if (!isRecord(msg)) {
    throw new RequestError("request is not a JSON object");
  }
  const kind = msg["type"];
  if (typeof kind !== "string") {
    throw new RequestError('request carries no "type"');
  }
  const id = msg["id"];
  if (typeof id !== "number" || !Number.isInteger(id)) {
    throw new RequestError('request carries no integer "id"');
  }
  const expected = REQUEST_FOR_ROLE[cfg.role];
  if (kind !== expected) {
    throw new RequestError(
      `a ${cfg.role} adapter answers only ${JSON.stringify(expected)} requests, got ${JSON.stringify(kind)}`,
    );
  }
  const image = requireString(msg, "image");

  switch (kind) {
    case "generate": {
      const roi = requireMask(msg, "roi_rle");
      const point = requirePoint(msg, roi);
      const mask = backend.generate({ image, roi, point });
      return { type: "mask", id, rle: encodeRle(mask) };
    }
    case "score": {
      const mask = requireMask(msg, "mask_rle");
      const object = msg["object_rle"] == null ? null : requireMask(msg, "object_rle");
      const value = backend.score({ image, mask, object });
      return { type: "score", id, value };
    }
    case "refine": {
      const mask = requireMask(msg, "mask_rle");
      return { type: "mask", id, rle: encodeRle(backend.refine({ image, mask })) };
    }
    default: {
      const mask = requireMask(msg, "mask_rle");
      return { type: "class", id, category: backend.classify({ image, mask }) };
    }
  }
}

function errorReply(id: unknown, message: string): Record<string, unknown> {
  const reply: Record<string, unknown> = { type: "error", message };
  if (typeof id === "number" && Number.isInteger(id)) {
    reply["id"] = id;
  }
  return reply;
}

/**
 * Serve one connection. Resolves to the process exit code: 0 when the input
 * stream ends normally, 1 when the handshake fails.
 */
export async function serve(cfg: AdapterConfig, input: Readable, output: Writable): Promise<number> {
  const backend = createBackend(cfg.backend, { erosion: cfg.erosion, category: cfg.category });
  const send = (obj: Record<string, unknown>) => {
    output.write(JSON.stringify(obj) + "\n");
  };

  let shaken = false;
  for await (const line of createInterface({ input })) {
    if (line.trim() === "") {
      continue;
    }
    let msg: unknown;
    try {
      msg = JSON.parse(line);
    } catch {
      send(errorReply(undefined, `request is not valid JSON: ${line.slice(0, 80)}`));
      continue;
    }

    if (!shaken) {
      const hello = isRecord(msg) ? msg : {};
      if (hello["type"] !== "hello") {
        send(errorReply(hello["id"], `expected a hello message, got ${JSON.stringify(hello["type"])}`));
        return 1;
      }
      if (hello["role"] !== cfg.role) {
        send(errorReply(undefined, `adapter serves role ${JSON.stringify(cfg.role)}, engine asked for ${JSON.stringify(hello["role"])}`));
        return 1;
      }
      if (hello["version"] !== cfg.version) {
        send(errorReply(undefined, `protocol version ${JSON.stringify(hello["version"])} does not match ${cfg.version}`));
        return 1;
      }
      send({ type: "ready" });
      shaken = true;
      continue;
    }

    try {
      send(answer(cfg, backend, msg));
    } catch (err) {
      if (err instanceof RequestError) {
        const id = isRecord(msg) ? msg["id"] : undefined;
        send(errorReply(id, err.message));
        continue;
      }
      throw err;
    }
  }
  return 0;
}
