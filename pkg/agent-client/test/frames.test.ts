import { describe, expect, it } from "vitest";
import { readFileSync } from "node:fs";
import { fileURLToPath } from "node:url";
import { dirname, join } from "node:path";

import { FrameError, decodeFrame, encodeFrame } from "../src/frames.js";

const here = dirname(fileURLToPath(import.meta.url));
const VECTORS = join(here, "..", "..", "src", "carmsim", "data", "gateway_frames.jsonl");

interface VectorCase {
  name: string;
  line: string;
  valid: boolean;
  expect_type?: string;
  error_contains?: string;
}

function loadVectors(): VectorCase[] {
  return readFileSync(VECTORS, "utf-8")
    .split("\n")
    .filter((line) => line.trim())
    .map((line) => JSON.parse(line) as VectorCase);
}

describe("gateway frame conformance vectors", () => {
  for (const vector of loadVectors()) {
    it(vector.name, () => {
      if (vector.valid) {
        const frame = decodeFrame(vector.line);
        expect(frame.type).toBe(vector.expect_type);
        // canonical re-encode stays decodable and equal
        expect(decodeFrame(encodeFrame(frame))).toEqual(frame);
      } else {
        let error: unknown;
        try {
          decodeFrame(vector.line);
        } catch (e) {
          error = e;
        }
        expect(error).toBeInstanceOf(FrameError);
        if (vector.error_contains) {
          expect((error as Error).message).toContain(vector.error_contains);
        }
      }
    });
  }
});
