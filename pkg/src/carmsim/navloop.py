"""Perception-action episodes with pluggable agents.

Each step renders the current view, sends it to the agent together with
the agent's previous raw response (empty on the first turn), parses the
reply, and applies the motion command with clamping to the volume
extent. Success is measured in the LR-SI plane only: those are the two
axes the action space controls, AP is untouched. The first success check
precedes the first action, so start == target succeeds in zero moves.

Parse failures do not abort an episode: the step is recorded with the
pose unchanged, and three consecutive failures end the episode with
outcome AGENT_ERROR. Transport failures end it immediately with the
cause recorded.

The scripted oracle picks, per axis, the step magnitude in
{0, 30, 60, 90} mm nearest to the absolute residual (ties to the
smaller), with direction from the residual sign. Its worst-case settled
per-axis error is 15 mm, i.e. about 21.2 mm in-plane, which is why the
default success radius is 25 mm: attainable by a perfect policy, tight
enough to mean something.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .datasetgen import nearest_k
from .errors import TransportError, ValidationError
from .geometry import CArmPose, apply_action, volume_bounds
from .nametable import NameTable
from .phantom import LandmarkSet, Volume
from .projector import DEFAULT_STEP_FRACTION, DEFAULT_WINDOW, RadiographImage, render
from . import protocol
from .protocol import (
    AgentResponse,
    Magnitude,
    MotionCommand,
    ParseError,
    STEP_MAGNITUDES_MM,
    XDirection,
    YDirection,
)
from .seeds import rng as _rng

PARSE_STRIKE_LIMIT = 3

OUTCOME_SUCCESS = "SUCCESS"
OUTCOME_MAX_STEPS = "MAX_STEPS"
OUTCOME_AGENT_ERROR = "AGENT_ERROR"


@dataclass(frozen=True)
class EpisodeConfig:
    start: int | CArmPose
    target: int
    max_steps: int = 20
    success_radius_mm: float = 25.0
    seed: int = 0
    episode_id: str = "ep0000"

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValidationError(f"max_steps must be >= 1, got {self.max_steps}")
        if self.success_radius_mm <= 0.0:
            raise ValidationError("success_radius_mm must be positive")


@dataclass(frozen=True)
class SimView:
    """Privileged ground truth handed only to in-process scripted agents."""

    pose: CArmPose
    target_index: int
    target_position: tuple[float, float, float]
    landmarks: LandmarkSet
    bounds: tuple[tuple[float, float], tuple[float, float]]


@dataclass(frozen=True)
class AgentTurn:
    """One request to an agent: the observable context for step t."""

    episode_id: str
    step: int
    image: RadiographImage
    prior_response: str | None
    feedback: str | None
    prompt_template_id: str
    sim: SimView | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class EpisodeStep:
    step: int
    pose_before: CArmPose
    image_ref: str | None
    feedback: str | None
    raw_text: str
    parsed: AgentResponse | None
    parse_error: ParseError | None
    pose_after: CArmPose
    distance_to_target_mm: float

    def to_json_obj(self) -> dict:
        parsed = None
        if self.parsed is not None:
            c = self.parsed.command
            parsed = {
                "landmark_index": self.parsed.landmark_index,
                "landmark_name": self.parsed.landmark_name,
                "reasoning": self.parsed.reasoning,
                "x_dir": c.d_x.value,
                "x_mag": c.e_x.value,
                "y_dir": c.d_y.value,
                "y_mag": c.e_y.value,
                "warnings": list(self.parsed.warnings),
            }
        error = None
        if self.parse_error is not None:
            error = {"reason": self.parse_error.reason, "offset": self.parse_error.offset}
        return {
            "type": "step",
            "step": self.step,
            "pose_before": list(self.pose_before.isocenter),
            "image_ref": self.image_ref,
            "feedback": self.feedback,
            "raw_text": self.raw_text,
            "parsed": parsed,
            "parse_error": error,
            "pose_after": list(self.pose_after.isocenter),
            "distance_to_target_mm": self.distance_to_target_mm,
        }


@dataclass(frozen=True)
class EpisodeTrace:
    config: EpisodeConfig
    start_pose: CArmPose
    target_position: tuple[float, float, float]
    steps: tuple[EpisodeStep, ...]
    outcome: str
    final_distance_mm: float
    success_step: int | None
    error_cause: str | None = None

    def summary_json_obj(self) -> dict:
        return {
            "type": "summary",
            "episode_id": self.config.episode_id,
            "target_index": self.config.target,
            "target_position_mm": list(self.target_position),
            "start_isocenter_mm": list(self.start_pose.isocenter),
            "max_steps": self.config.max_steps,
            "success_radius_mm": self.config.success_radius_mm,
            "n_steps": len(self.steps),
            "outcome": self.outcome,
            "success_step": self.success_step,
            "final_distance_mm": self.final_distance_mm,
            "error_cause": self.error_cause,
        }


def inplane_distance(pose: CArmPose, target_position) -> float:
    """Distance in the controlled (LR, SI) plane, in mm."""
    dx = target_position[0] - pose.lr
    dz = target_position[2] - pose.si
    return math.sqrt(dx * dx + dz * dz)


def nearest_step_magnitude(residual_abs: float) -> float:
    """Closest allowed magnitude to |residual|; ties go to the smaller."""
    best = STEP_MAGNITUDES_MM[0]
    best_err = abs(residual_abs - best)
    for mag in STEP_MAGNITUDES_MM[1:]:
        err = abs(residual_abs - mag)
        if err < best_err:
            best, best_err = mag, err
    return best


def oracle_command(pose: CArmPose, target_position) -> MotionCommand:
    """Per-axis nearest-magnitude policy toward the target."""
    rx = target_position[0] - pose.lr
    ry = target_position[2] - pose.si
    mx = nearest_step_magnitude(abs(rx))
    my = nearest_step_magnitude(abs(ry))
    mag_by_mm = {0.0: Magnitude.NONE, 30.0: Magnitude.SMALL,
                 60.0: Magnitude.MODERATE, 90.0: Magnitude.LARGE}
    if mx == 0.0:
        d_x, e_x = XDirection.CENTER, Magnitude.NONE
    else:
        d_x = XDirection.RIGHT if rx > 0 else XDirection.LEFT
        e_x = mag_by_mm[mx]
    if my == 0.0:
        d_y, e_y = YDirection.CENTER, Magnitude.NONE
    else:
        d_y = YDirection.UP if ry > 0 else YDirection.DOWN
        e_y = mag_by_mm[my]
    return MotionCommand(d_x, e_x, d_y, e_y)


class OracleAgent:
    """Ground-truth verification policy; embodies the intended action semantics."""

    def respond(self, turn: AgentTurn) -> str:
        if turn.sim is None:
            raise TransportError("oracle agent needs simulator ground truth")
        sim = turn.sim
        nearest = nearest_k(sim.pose, sim.landmarks, 1).entries[0]
        command = oracle_command(sim.pose, sim.target_position)
        target_name = sim.landmarks.get(sim.target_index).name
        reasoning = (
            f"Nearest landmark is {nearest.name} ({nearest.index}). "
            f"Target {target_name}: move x {command.d_x.value}/{command.e_x.value}, "
            f"y {command.d_y.value}/{command.e_y.value}."
        )
        if turn.feedback is not None:
            reasoning += f" Feedback noted: {turn.feedback}"
        response = AgentResponse(
            landmark_index=nearest.index,
            landmark_name=nearest.name,
            reasoning=reasoning,
            command=command,
        )
        return protocol.serialize(response, sim.landmarks.name_table())


class FixedResponseAgent:
    """Always replies with the same text (zero-move fixture by default)."""

    def __init__(self, text: str | None = None):
        if text is None:
            text = protocol.serialize(
                AgentResponse(
                    landmark_index=1,
                    landmark_name="Skull",
                    reasoning="holding position",
                    command=MotionCommand.zero(),
                )
            )
        self.text = text

    def respond(self, turn: AgentTurn) -> str:
        return self.text


def _call_agent(agent, turn: AgentTurn) -> str:
    if hasattr(agent, "respond"):
        return agent.respond(turn)
    return agent(turn)


class Episode:
    """One running perception-action episode; supports feedback injection."""

    def __init__(
        self,
        volume: Volume,
        landmarks: LandmarkSet,
        agent,
        config: EpisodeConfig,
        *,
        out_dir: str | None = None,
        pose_template: CArmPose | None = None,
        window: float = DEFAULT_WINDOW,
        step_fraction: float = DEFAULT_STEP_FRACTION,
        prompt_template_id: str = "nearest3-v1",
        table: NameTable | None = None,
    ):
        self.volume = volume
        self.landmarks = landmarks
        self.agent = agent
        self.config = config
        self.out_dir = out_dir
        self.window = window
        self.step_fraction = step_fraction
        self.prompt_template_id = prompt_template_id
        self.table = table if table is not None else landmarks.name_table()
        self.bounds = volume_bounds(volume)

        template = pose_template if pose_template is not None else CArmPose((0.0, 0.0, 0.0))
        if isinstance(config.start, CArmPose):
            self.pose = config.start
        else:
            start_index = landmarks.resolve(config.start)
            self.pose = template.with_isocenter(landmarks.get(start_index).position_mm)
        if not volume.contains_point(self.pose.isocenter):
            raise ValidationError(
                f"start isocenter {self.pose.isocenter} outside volume extent"
            )
        target_index = landmarks.resolve(config.target)
        self.target_index = target_index
        self.target_position = landmarks.get(target_index).position_mm

        self.start_pose = self.pose
        self.steps: list[EpisodeStep] = []
        self.prior_response: str | None = None
        self.pending_feedback: str | None = None
        self.strikes = 0
        self.t = 0
        self.outcome: str | None = None
        self.success_step: int | None = None
        self.error_cause: str | None = None
        initial = inplane_distance(self.pose, self.target_position)
        self.final_distance = initial
        if initial <= config.success_radius_mm:
            self.outcome = OUTCOME_SUCCESS
            self.success_step = 0

    def inject_feedback(self, message: str) -> None:
        """Queue a message for the next agent call (appended to its context)."""
        if self.pending_feedback is None:
            self.pending_feedback = message
        else:
            self.pending_feedback += "\n" + message

    @property
    def done(self) -> bool:
        return self.outcome is not None

    def step(self) -> EpisodeStep | None:
        """Run one perception-action turn; None if the episode is over."""
        if self.done:
            return None
        self.t += 1
        t = self.t
        image = render(
            self.volume, self.pose, window=self.window, step_fraction=self.step_fraction
        )
        image_ref = None
        if self.out_dir is not None:
            image_ref = f"images/{self.config.episode_id}/step_{t:03d}.png"
            path = os.path.join(self.out_dir, image_ref)
            os.makedirs(os.path.dirname(path), exist_ok=True)
            image.save_png(path)
        feedback = self.pending_feedback
        self.pending_feedback = None
        turn = AgentTurn(
            episode_id=self.config.episode_id,
            step=t,
            image=image,
            prior_response=self.prior_response,
            feedback=feedback,
            prompt_template_id=self.prompt_template_id,
            sim=SimView(
                pose=self.pose,
                target_index=self.target_index,
                target_position=self.target_position,
                landmarks=self.landmarks,
                bounds=self.bounds,
            ),
        )
        try:
            raw = _call_agent(self.agent, turn)
        except TransportError as e:
            self.outcome = OUTCOME_AGENT_ERROR
            self.error_cause = f"agent transport failure: {e}"
            return None
        result = protocol.parse(raw, self.table)
        if isinstance(result, ParseError):
            self.strikes += 1
            parsed, parse_error = None, result
            pose_after = self.pose
        else:
            self.strikes = 0
            parsed, parse_error = result, None
            pose_after = apply_action(self.pose, result.command, self.bounds)
        distance = inplane_distance(pose_after, self.target_position)
        record = EpisodeStep(
            step=t,
            pose_before=self.pose,
            image_ref=image_ref,
            feedback=feedback,
            raw_text=raw,
            parsed=parsed,
            parse_error=parse_error,
            pose_after=pose_after,
            distance_to_target_mm=distance,
        )
        self.steps.append(record)
        self.prior_response = raw
        self.pose = pose_after
        self.final_distance = distance
        if distance <= self.config.success_radius_mm:
            self.outcome = OUTCOME_SUCCESS
            self.success_step = t
        elif self.strikes >= PARSE_STRIKE_LIMIT:
            self.outcome = OUTCOME_AGENT_ERROR
            self.error_cause = f"{PARSE_STRIKE_LIMIT} consecutive parse errors"
        elif t >= self.config.max_steps:
            self.outcome = OUTCOME_MAX_STEPS
        return record

    def trace(self) -> EpisodeTrace:
        outcome = self.outcome if self.outcome is not None else OUTCOME_MAX_STEPS
        return EpisodeTrace(
            config=self.config,
            start_pose=self.start_pose,
            target_position=self.target_position,
            steps=tuple(self.steps),
            outcome=outcome,
            final_distance_mm=self.final_distance,
            success_step=self.success_step,
            error_cause=self.error_cause,
        )


def run_episode(
    volume: Volume,
    landmarks: LandmarkSet,
    agent,
    config: EpisodeConfig,
    *,
    out_dir: str | None = None,
    feedback_schedule: dict[int, str] | None = None,
    **episode_kwargs,
) -> EpisodeTrace:
    """Execute one episode to completion; feedback_schedule maps step -> text."""
    episode = Episode(volume, landmarks, agent, config, out_dir=out_dir, **episode_kwargs)
    while not episode.done:
        if feedback_schedule and (episode.t + 1) in feedback_schedule:
            episode.inject_feedback(feedback_schedule[episode.t + 1])
        episode.step()
    return episode.trace()


def random_episode_configs(
    landmarks: LandmarkSet, n: int, seed: int, **overrides
) -> list[EpisodeConfig]:
    """n start/target landmark pairs (start != target), deterministic per seed."""
    generator = _rng(seed, "episodes")
    count = len(landmarks.landmarks)
    configs = []
    for i in range(n):
        start = int(generator.integers(1, count + 1))
        target = int(generator.integers(1, count + 1))
        while target == start:
            target = int(generator.integers(1, count + 1))
        configs.append(
            EpisodeConfig(
                start=start,
                target=target,
                seed=seed,
                episode_id=f"ep{i:04d}",
                **overrides,
            )
        )
    return configs


def write_trace(trace: EpisodeTrace, path) -> None:
    """Line-delimited step records followed by one summary record."""
    with open(path, "w") as f:
        for step in trace.steps:
            f.write(json.dumps(step.to_json_obj(), separators=(",", ":")) + "\n")
        f.write(json.dumps(trace.summary_json_obj(), separators=(",", ":")) + "\n")


def read_trace(path) -> dict:
    """Trace file as {'steps': [...], 'summary': {...}} of raw objects."""
    steps, summary = [], None
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if obj.get("type") == "summary":
                summary = obj
            else:
                steps.append(obj)
    if summary is None:
        raise ValidationError(f"trace file {path} has no summary record")
    return {"steps": steps, "summary": summary}


def replay_matches(trace: EpisodeTrace, bounds) -> bool:
    """Re-apply recorded commands from the recorded start; poses must match."""
    pose = trace.start_pose
    for step in trace.steps:
        if step.pose_before.isocenter != pose.isocenter:
            return False
        if step.parsed is not None:
            pose = apply_action(pose, step.parsed.command, bounds)
        if step.pose_after.isocenter != pose.isocenter:
            return False
    return True


def write_oracle_ground_truth(path, landmarks: LandmarkSet, volume: Volume, episodes) -> None:
    """Ground-truth file for external oracle clients (test mode only).

    ``episodes`` maps episode_id -> EpisodeConfig-like with a resolved
    start pose; clients mirror pose evolution by re-applying their own
    commands under the same clamping bounds.
    """
    bounds = volume_bounds(volume)
    doc = {
        "version": 1,
        "bounds": {"lr": list(bounds[0]), "si": list(bounds[1])},
        "landmarks": [
            {
                "index": lm.index,
                "name": lm.name,
                "position_mm": list(lm.position_mm),
            }
            for lm in landmarks.landmarks
        ],
        "episodes": {
            episode_id: {
                "start_isocenter_mm": list(start_pose.isocenter),
                "target_index": target_index,
            }
            for episode_id, (start_pose, target_index) in episodes.items()
        },
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")
