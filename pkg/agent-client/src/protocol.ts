/**
 * Canonical response serializer.
 *
 * Must produce byte-identical output to the harness serializer: fixed
 * element and attribute order, uppercase enums, single line, and the
 * same escape set applied in the same order.
 */

export type XDirection = "LEFT" | "CENTER" | "RIGHT";
export type YDirection = "UP" | "CENTER" | "DOWN";
export type Magnitude = "NONE" | "SMALL" | "MODERATE" | "LARGE";

export interface MotionCommand {
  dX: XDirection;
  eX: Magnitude;
  dY: YDirection;
  eY: Magnitude;
}

export interface AgentResponse {
  landmarkIndex: number;
  landmarkName: string;
  reasoning: string;
  command: MotionCommand;
}

export const MAGNITUDE_MM: Record<Magnitude, number> = {
  NONE: 0,
  SMALL: 30,
  MODERATE: 60,
  LARGE: 90,
};

export const STEP_MAGNITUDES_MM = [0, 30, 60, 90] as const;

// order matters: '&' first, mirroring the harness serializer
const ESCAPES: Array<[string, string]> = [
  ["&", "&amp;"],
  ["<", "&lt;"],
  [">", "&gt;"],
  ["\n", "&#10;"],
  ["\r", "&#13;"],
  ["\t", "&#9;"],
];

export function escapeText(text: string): string {
  let out = text;
  for (const [raw, entity] of ESCAPES) {
    out = out.split(raw).join(entity);
  }
  return out;
}

export function serialize(resp: AgentResponse): string {
  const c = resp.command;
  return (
    `<response><landmark index="${resp.landmarkIndex}">` +
    `${escapeText(resp.landmarkName)}</landmark>` +
    `<reasoning>${escapeText(resp.reasoning)}</reasoning>` +
    `<move x_dir="${c.dX}" x_mag="${c.eX}" ` +
    `y_dir="${c.dY}" y_mag="${c.eY}"/></response>`
  );
}
