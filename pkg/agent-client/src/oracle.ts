/**
 * Ground-truth oracle policy, mirroring the harness oracle operation for
 * operation so that replies are byte-identical over the wire.
 *
 * The client never sees the true pose at runtime; it tracks its own
 * mirror by re-applying the commands it emits, under the same clamping
 * bounds the harness uses. All arithmetic is plain IEEE-754 double in
 * the same association order as the harness, so the mirror never
 * drifts.
 */

import {
  AgentResponse,
  MAGNITUDE_MM,
  Magnitude,
  MotionCommand,
  STEP_MAGNITUDES_MM,
  XDirection,
  YDirection,
  serialize,
} from "./protocol.js";

export interface GroundTruthLandmark {
  index: number;
  name: string;
  position_mm: [number, number, number];
}

export interface GroundTruth {
  version: number;
  bounds: { lr: [number, number]; si: [number, number] };
  landmarks: GroundTruthLandmark[];
  episodes: Record<
    string,
    { start_isocenter_mm: [number, number, number]; target_index: number }
  >;
}

export interface Pose {
  lr: number;
  ap: number;
  si: number;
}

const MAG_BY_MM = new Map<number, Magnitude>([
  [0, "NONE"],
  [30, "SMALL"],
  [60, "MODERATE"],
  [90, "LARGE"],
]);

/** Closest allowed magnitude to |residual|; ties go to the smaller. */
export function nearestStepMagnitude(residualAbs: number): number {
  let best: number = STEP_MAGNITUDES_MM[0];
  let bestErr = Math.abs(residualAbs - best);
  for (const mag of STEP_MAGNITUDES_MM.slice(1)) {
    const err = Math.abs(residualAbs - mag);
    if (err < bestErr) {
      best = mag;
      bestErr = err;
    }
  }
  return best;
}

export function oracleCommand(pose: Pose, target: [number, number, number]): MotionCommand {
  const rx = target[0] - pose.lr;
  const ry = target[2] - pose.si;
  const mx = nearestStepMagnitude(Math.abs(rx));
  const my = nearestStepMagnitude(Math.abs(ry));
  let dX: XDirection;
  let eX: Magnitude;
  if (mx === 0) {
    dX = "CENTER";
    eX = "NONE";
  } else {
    dX = rx > 0 ? "RIGHT" : "LEFT";
    eX = MAG_BY_MM.get(mx)!;
  }
  let dY: YDirection;
  let eY: Magnitude;
  if (my === 0) {
    dY = "CENTER";
    eY = "NONE";
  } else {
    dY = ry > 0 ? "UP" : "DOWN";
    eY = MAG_BY_MM.get(my)!;
  }
  return { dX, eX, dY, eY };
}

/** Nearest landmark by squared distance; index order breaks exact ties. */
export function nearestLandmark(
  pose: Pose,
  landmarks: GroundTruthLandmark[],
): GroundTruthLandmark {
  const sorted = [...landmarks].sort((a, b) => a.index - b.index);
  let best = sorted[0];
  let bestD2 = Infinity;
  for (const lm of sorted) {
    const dx = lm.position_mm[0] - pose.lr;
    const dy = lm.position_mm[1] - pose.ap;
    const dz = lm.position_mm[2] - pose.si;
    const d2 = dx * dx + dy * dy + dz * dz;
    if (d2 < bestD2) {
      best = lm;
      bestD2 = d2;
    }
  }
  return best;
}

export function signedDeltas(command: MotionCommand): [number, number] {
  let dx = MAGNITUDE_MM[command.eX];
  if (command.dX === "LEFT") dx = -dx;
  else if (command.dX === "CENTER") dx = 0;
  let dy = MAGNITUDE_MM[command.eY];
  if (command.dY === "DOWN") dy = -dy;
  else if (command.dY === "CENTER") dy = 0;
  return [dx, dy];
}

export function applyAction(
  pose: Pose,
  command: MotionCommand,
  bounds: GroundTruth["bounds"],
): Pose {
  const [dx, dy] = signedDeltas(command);
  const lr = Math.min(Math.max(pose.lr + dx, bounds.lr[0]), bounds.lr[1]);
  const si = Math.min(Math.max(pose.si + dy, bounds.si[0]), bounds.si[1]);
  return { lr, ap: pose.ap, si };
}

export class OraclePolicy {
  private poses = new Map<string, Pose>();

  constructor(private truth: GroundTruth) {
    if (truth.version !== 1) {
      throw new Error(`unsupported ground-truth version ${truth.version}`);
    }
  }

  /** Response text for one request; updates the mirrored pose. */
  respond(episodeId: string, feedback: string | null | undefined): string {
    let pose = this.poses.get(episodeId);
    if (pose === undefined) {
      const episode = this.truth.episodes[episodeId];
      if (episode === undefined) {
        throw new Error(`no ground truth for episode '${episodeId}'`);
      }
      const [lr, ap, si] = episode.start_isocenter_mm;
      pose = { lr, ap, si };
    }
    const targetIndex = this.truth.episodes[episodeId].target_index;
    const target = this.truth.landmarks.find((lm) => lm.index === targetIndex);
    if (target === undefined) {
      throw new Error(`target landmark ${targetIndex} missing from ground truth`);
    }
    const nearest = nearestLandmark(pose, this.truth.landmarks);
    const command = oracleCommand(pose, target.position_mm);
    // template mirrored character-for-character from the harness oracle
    let reasoning =
      `Nearest landmark is ${nearest.name} (${nearest.index}). ` +
      `Target ${target.name}: move x ${command.dX}/${command.eX}, ` +
      `y ${command.dY}/${command.eY}.`;
    if (feedback !== null && feedback !== undefined) {
      reasoning += ` Feedback noted: ${feedback}`;
    }
    const response: AgentResponse = {
      landmarkIndex: nearest.index,
      landmarkName: nearest.name,
      reasoning,
      command,
    };
    this.poses.set(episodeId, applyAction(pose, command, this.truth.bounds));
    return serialize(response);
  }
}
