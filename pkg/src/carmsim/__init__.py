"""Deterministic C-arm imaging and navigation simulator.

Core pipeline: procedural phantoms with annotated landmarks ->
isocenter sampling -> cone-beam DRR rendering -> nearest-landmark
dataset construction -> retrieval metrics, plus a perception-action
navigation loop with a pluggable agent boundary (in-process oracles or
external models over a line-delimited wire protocol).
"""

__version__ = "0.1.0"

from .errors import SimulatorError
from .geometry import CArmPose, SamplerConfig, apply_action, sample_isocenters
from .phantom import LandmarkSet, PhantomConfig, Volume, generate_phantom
from .projector import RadiographImage, render
from .protocol import AgentResponse, MotionCommand, ParseError, parse, serialize

__all__ = [
    "__version__",
    "SimulatorError",
    "CArmPose",
    "SamplerConfig",
    "apply_action",
    "sample_isocenters",
    "LandmarkSet",
    "PhantomConfig",
    "Volume",
    "generate_phantom",
    "RadiographImage",
    "render",
    "AgentResponse",
    "MotionCommand",
    "ParseError",
    "parse",
    "serialize",
]
