import { describe, expect, it } from "vitest";

import { ClientSession } from "../src/session.js";

const REQUEST = JSON.stringify({
  v: 1,
  type: "request",
  episode_id: "ep0000",
  step: 1,
  image_png_b64: "aGk=",
  prior_response: null,
  feedback: null,
  prompt_template_id: "nearest3-v1",
});

describe("client session", () => {
  it("replies to a valid request with the hook's text, unvalidated", async () => {
    const session = new ClientSession(() => "whatever the model said");
    const out = await session.handleLine(REQUEST);
    const frame = JSON.parse(out);
    expect(frame.type).toBe("reply");
    expect(frame.episode_id).toBe("ep0000");
    expect(frame.step).toBe(1);
    expect(frame.raw_text).toBe("whatever the model said");
    expect(frame.latency_ms).toBeGreaterThanOrEqual(0);
  });

  it("answers malformed frames with an error frame and survives", async () => {
    const session = new ClientSession(() => "ok");
    const bad = await session.handleLine("garbage {{{");
    expect(JSON.parse(bad).type).toBe("error");
    expect(JSON.parse(bad).reason).toContain("JSON");
    // session still serves the next request
    const good = await session.handleLine(REQUEST);
    expect(JSON.parse(good).type).toBe("reply");
  });

  it("wraps hook exceptions in an error frame with a traceback summary", async () => {
    const session = new ClientSession(() => {
      throw new Error("model exploded");
    });
    const out = await session.handleLine(REQUEST);
    const frame = JSON.parse(out);
    expect(frame.type).toBe("error");
    expect(frame.reason).toContain("model exploded");
    expect(frame.episode_id).toBe("ep0000");
  });

  it("passes request context through to the hook", async () => {
    let seen: unknown;
    const session = new ClientSession((request) => {
      seen = request;
      return "ok";
    });
    const line = JSON.stringify({
      v: 1,
      type: "request",
      episode_id: "ep0007",
      step: 3,
      image_png_b64: "aGk=",
      prior_response: "<response>prev</response>",
      feedback: "look again",
      prompt_template_id: "nearest3-v1",
    });
    await session.handleLine(line);
    expect(seen).toEqual({
      episodeId: "ep0007",
      step: 3,
      imagePngB64: "aGk=",
      priorResponse: "<response>prev</response>",
      feedback: "look again",
      promptTemplateId: "nearest3-v1",
    });
  });

  it("rejects non-request frames without dying", async () => {
    const reply = JSON.stringify({
      v: 1, type: "reply", episode_id: "e", step: 1, raw_text: "x", latency_ms: 0,
    });
    const session = new ClientSession(() => "ok");
    const out = await session.handleLine(reply);
    expect(JSON.parse(out).type).toBe("error");
  });
});
