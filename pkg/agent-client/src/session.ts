/**
 * ClientSession: one reply per request, order-preserving.
 *
 * Requests arrive as newline-delimited frames; each is answered with a
 * reply frame (or an error frame if the request cannot be decoded or
 * the hook fails). A malformed frame never kills the session. The
 * client performs no validation of hook output: the harness-side parser
 * is authoritative, and masking that path here would hide exactly the
 * failures the harness must be robust to.
 */

import { FrameError, ReplyFrame, ErrorFrame, decodeFrame, encodeFrame } from "./frames.js";

export interface HookRequest {
  episodeId: string;
  step: number;
  imagePngB64: string;
  priorResponse: string | null;
  feedback: string | null;
  promptTemplateId: string;
}

export type ModelHook = (request: HookRequest) => string | Promise<string>;

export class ClientSession {
  constructor(private hook: ModelHook) {}

  /** Handle one raw frame line; returns the encoded frame to send back. */
  async handleLine(line: string): Promise<string> {
    let frame;
    try {
      frame = decodeFrame(line);
    } catch (e) {
      const error: ErrorFrame = {
        v: 1,
        type: "error",
        reason: e instanceof FrameError ? e.message : String(e),
      };
      return encodeFrame(error);
    }
    if (frame.type !== "request") {
      return encodeFrame({
        v: 1,
        type: "error",
        reason: `expected a request frame, got '${frame.type}'`,
      });
    }
    const started = performance.now();
    try {
      const rawText = await this.hook({
        episodeId: frame.episode_id,
        step: frame.step,
        imagePngB64: frame.image_png_b64,
        priorResponse: frame.prior_response ?? null,
        feedback: frame.feedback ?? null,
        promptTemplateId: frame.prompt_template_id,
      });
      const reply: ReplyFrame = {
        v: 1,
        type: "reply",
        episode_id: frame.episode_id,
        step: frame.step,
        raw_text: rawText,
        latency_ms: performance.now() - started,
      };
      return encodeFrame(reply);
    } catch (e) {
      const err = e as Error;
      const summary = (err.stack ?? String(err)).split("\n").slice(0, 3).join(" | ");
      return encodeFrame({
        v: 1,
        type: "error",
        reason: `hook failed: ${summary}`,
        episode_id: frame.episode_id,
        step: frame.step,
      });
    }
  }
}
