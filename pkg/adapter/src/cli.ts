/**
 * Flag parsing for the adapter executable, kept free of side effects so the
 * tests can exercise it without touching the process streams.
 */

import { PROTOCOL_VERSION, ROLES, type AdapterConfig, type Role } from "./adapter.js";

export const USAGE =
  "usage: panges-adapter --role <generator|evaluator|refiner|classifier> " +
  "[--backend mock] [--erosion N] [--category N] [--device HINT]";

export class UsageError extends Error {}

export function parseConfig(argv: string[]): AdapterConfig {
  const values: Record<string, string> = {};
  for (let i = 0; i < argv.length; i += 2) {
    const flag = argv[i];
    const value = argv[i + 1];
    if (flag === undefined || !flag.startsWith("--")) {
      throw new UsageError(`unexpected argument ${JSON.stringify(flag)}\n${USAGE}`);
    }
    if (value === undefined) {
      throw new UsageError(`flag ${flag} is missing its value\n${USAGE}`);
    }
    values[flag.slice(2)] = value;
  }

  const known = new Set(["role", "backend", "erosion", "category", "device"]);
  for (const key of Object.keys(values)) {
    if (!known.has(key)) {
      throw new UsageError(`unknown flag --${key}\n${USAGE}`);
    }
  }

  const role = values["role"];
  if (role === undefined || !(ROLES as readonly string[]).includes(role)) {
    throw new UsageError(`--role must be one of ${ROLES.join(", ")}\n${USAGE}`);
  }
  const integer = (key: string, fallback: number): number => {
    const raw = values[key];
    if (raw === undefined) {
      return fallback;
    }
    const parsed = Number(raw);
    if (!Number.isInteger(parsed)) {
      throw new UsageError(`--${key} wants an integer, got ${JSON.stringify(raw)}`);
    }
    return parsed;
  };

  return {
    role: role as Role,
    backend: values["backend"] ?? "mock",
    device: values["device"] ?? "cpu",
    version: PROTOCOL_VERSION,
    erosion: integer("erosion", 1),
    category: integer("category", 1),
  };
}
