/**
 * Wire frames: single-line JSON objects, newline-terminated, UTF-8.
 *
 * Validation rules mirror the harness side exactly: a mandatory version
 * field `v` (currently 1), a known `type`, and the per-type required
 * fields. Anything else raises FrameError with a reason the harness's
 * conformance vectors can match on.
 */

export const WIRE_VERSION = 1;

export type FrameType = "request" | "reply" | "error";

export interface RequestFrame {
  v: number;
  type: "request";
  episode_id: string;
  step: number;
  image_png_b64: string;
  prior_response?: string | null;
  feedback?: string | null;
  prompt_template_id: string;
}

export interface ReplyFrame {
  v: number;
  type: "reply";
  episode_id: string;
  step: number;
  raw_text: string;
  latency_ms: number;
}

export interface ErrorFrame {
  v: number;
  type: "error";
  reason: string;
  episode_id?: string;
  step?: number;
}

export type Frame = RequestFrame | ReplyFrame | ErrorFrame;

export class FrameError extends Error {}

const REQUIRED_FIELDS: Record<FrameType, string[]> = {
  request: ["episode_id", "step", "image_png_b64", "prompt_template_id"],
  reply: ["episode_id", "step", "raw_text", "latency_ms"],
  error: ["reason"],
};

export function validateFrame(frame: unknown): asserts frame is Frame {
  if (typeof frame !== "object" || frame === null || Array.isArray(frame)) {
    throw new FrameError(
      `frame must be a JSON object, got ${Array.isArray(frame) ? "array" : typeof frame}`,
    );
  }
  const obj = frame as Record<string, unknown>;
  if (!("v" in obj)) {
    throw new FrameError("frame missing mandatory version field 'v'");
  }
  if (obj.v !== WIRE_VERSION) {
    throw new FrameError(
      `unsupported frame version ${JSON.stringify(obj.v)} (expected ${WIRE_VERSION})`,
    );
  }
  const frameType = obj.type as FrameType;
  if (!(frameType in REQUIRED_FIELDS)) {
    throw new FrameError(`unknown frame type ${JSON.stringify(obj.type)}`);
  }
  for (const name of REQUIRED_FIELDS[frameType]) {
    if (!(name in obj)) {
      throw new FrameError(`${frameType} frame missing field '${name}'`);
    }
  }
  if (frameType === "reply" && !obj.raw_text) {
    throw new FrameError("reply frame has empty raw_text");
  }
  if (frameType === "request" && !Number.isInteger(obj.step)) {
    throw new FrameError("request step must be an integer");
  }
}

export function decodeFrame(line: string): Frame {
  let parsed: unknown;
  try {
    parsed = JSON.parse(line);
  } catch (e) {
    throw new FrameError(`frame is not valid JSON: ${(e as Error).message}`);
  }
  validateFrame(parsed);
  return parsed;
}

export function encodeFrame(frame: Frame): string {
  validateFrame(frame);
  return JSON.stringify(frame) + "\n";
}
