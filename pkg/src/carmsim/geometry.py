"""C-arm pose representation, isocenter sampling, and action semantics.

Axes follow the LPS-style convention used across the simulator:
x = LR (+x toward patient left), y = AP (+y toward posterior),
z = SI (+z toward superior). The view is a fixed AP projection with the
source on the anterior side and the detector posterior.

Sampling scheme per view distribution: SI uniform over the centered
70% band of anatomical height (taken as the volume SI extent), LR
Gaussian centered on the volume midline with sigma = 285 mm (the average
inter-humeral-head distance), AP Gaussian centered on the volume AP
center with sigma = 100 mm to vary magnification. Proposals falling
outside the volume extent are rejected and redrawn, which preserves the
stated marginal distributions of the kept axes instead of piling mass at
the boundary.

Motion semantics: image RIGHT = +LR (patient left under the AP
convention), image UP = +SI. Magnitudes map to exactly
{0, 30, 60, 90} mm. The AP coordinate is never touched by an action.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import GeometryError, ValidationError
from .protocol import MAGNITUDE_MM, MotionCommand
from .seeds import rng as _rng

VIEW_DIRECTION = "AP"


@dataclass(frozen=True)
class CArmPose:
    """Isocenter position plus the fixed cone-beam imaging geometry."""

    isocenter: tuple[float, float, float]
    sod: float = 750.0
    sdd: float = 1200.0
    detector_extent: tuple[float, float] = (300.0, 300.0)
    detector_res: tuple[int, int] = (256, 256)

    def __post_init__(self):
        if len(self.isocenter) != 3:
            raise ValidationError("isocenter must be a 3-vector (lr, ap, si) in mm")
        object.__setattr__(self, "isocenter", tuple(float(v) for v in self.isocenter))
        if not 0.0 < self.sod < self.sdd:
            raise ValidationError(f"need 0 < sod < sdd, got sod={self.sod}, sdd={self.sdd}")
        if min(self.detector_extent) <= 0.0:
            raise ValidationError("detector_extent must be strictly positive")
        if min(self.detector_res) <= 0:
            raise ValidationError("detector_res must be strictly positive")

    @property
    def lr(self) -> float:
        return self.isocenter[0]

    @property
    def ap(self) -> float:
        return self.isocenter[1]

    @property
    def si(self) -> float:
        return self.isocenter[2]

    def source_position(self) -> np.ndarray:
        """Point source, anterior of the isocenter."""
        x, y, z = self.isocenter
        return np.array([x, y - self.sod, z])

    def detector_center(self) -> np.ndarray:
        """Detector plane center, posterior of the isocenter."""
        x, y, z = self.isocenter
        return np.array([x, y + (self.sdd - self.sod), z])

    def with_isocenter(self, isocenter) -> "CArmPose":
        return replace(self, isocenter=tuple(float(v) for v in isocenter))


@dataclass(frozen=True)
class SamplerConfig:
    """Isocenter sampling parameters."""

    si_band_fraction: float = 0.70
    lr_sigma_mm: float = 285.0
    ap_sigma_mm: float = 100.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.si_band_fraction <= 1.0:
            raise ValidationError("si_band_fraction must be in (0, 1]")
        if self.lr_sigma_mm <= 0.0 or self.ap_sigma_mm <= 0.0:
            raise ValidationError("sampler sigmas must be positive")

    def to_dict(self) -> dict:
        return {
            "si_band_fraction": self.si_band_fraction,
            "lr_sigma_mm": self.lr_sigma_mm,
            "ap_sigma_mm": self.ap_sigma_mm,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SamplerConfig":
        return cls(**data)


def si_band(extent_mm, config: SamplerConfig) -> tuple[float, float]:
    """Centered SI sampling band [lo, hi] in volume coordinates."""
    height = float(extent_mm[2])
    if height <= 0.0:
        raise GeometryError(f"degenerate anatomical height {height} mm")
    half = 0.5 * config.si_band_fraction * height
    return 0.5 * height - half, 0.5 * height + half


def sample_raw_proposals(volume, n: int, config: SamplerConfig) -> np.ndarray:
    """Pre-rejection proposal draws, shape (n, 3) as (lr, ap, si).

    Uses the same stream as :func:`sample_isocenters`; called with the
    same n, this array is exactly the sampler's first proposal batch
    (draws are consumed per axis, so the prefix property needs matching
    batch sizes). Intended for verifying the configured marginals before
    rejection is applied.
    """
    generator = _rng(config.seed, "isocenters")
    return _propose(generator, n, volume.extent_mm, config)


def _propose(generator, n, extent_mm, config) -> np.ndarray:
    lo, hi = si_band(extent_mm, config)
    lr = generator.normal(0.5 * extent_mm[0], config.lr_sigma_mm, n)
    ap = generator.normal(0.5 * extent_mm[1], config.ap_sigma_mm, n)
    si = generator.uniform(lo, hi, n)
    return np.column_stack([lr, ap, si])


def sample_isocenters(
    volume,
    landmark_set,
    n: int,
    config: SamplerConfig,
    template: CArmPose | None = None,
) -> list[CArmPose]:
    """Draw n isocenter poses inside the volume, deterministically per seed.

    ``landmark_set`` is accepted for schema parity (anatomical height is
    taken from the volume extent, which the phantom anatomy fills).
    """
    if n < 1:
        raise ValidationError(f"need n >= 1, got {n}")
    extent = volume.extent_mm
    si_band(extent, config)  # raises GeometryError if degenerate
    if template is None:
        template = CArmPose(isocenter=(0.0, 0.0, 0.0))
    generator = _rng(config.seed, "isocenters")

    accepted: list[np.ndarray] = []
    remaining = n
    while remaining > 0:
        batch = _propose(generator, max(remaining, n), extent, config)
        inside = (
            (batch[:, 0] >= 0.0)
            & (batch[:, 0] <= extent[0])
            & (batch[:, 1] >= 0.0)
            & (batch[:, 1] <= extent[1])
        )
        kept = batch[inside]
        accepted.append(kept[:remaining])
        remaining -= min(len(kept), remaining)
    points = np.concatenate(accepted, axis=0)
    return [template.with_isocenter(p) for p in points]


def signed_deltas(command: MotionCommand) -> tuple[float, float]:
    """Signed (LR, SI) displacement in mm for one command."""
    dx = MAGNITUDE_MM[command.e_x]
    if command.d_x.value == "LEFT":
        dx = -dx
    elif command.d_x.value == "CENTER":
        dx = 0.0
    dy = MAGNITUDE_MM[command.e_y]
    if command.d_y.value == "DOWN":
        dy = -dy
    elif command.d_y.value == "CENTER":
        dy = 0.0
    return dx, dy


def apply_action(
    pose: CArmPose,
    command: MotionCommand,
    bounds: tuple[tuple[float, float], tuple[float, float]] | None = None,
) -> CArmPose:
    """New pose after one motion command.

    ``bounds`` is ((lr_lo, lr_hi), (si_lo, si_hi)); when given, the
    result is clamped to it (navigation clamps to the volume extent).
    AP is untouched: the action space is translational 2D only.
    """
    dx, dy = signed_deltas(command)
    lr = pose.lr + dx
    si = pose.si + dy
    if bounds is not None:
        (lr_lo, lr_hi), (si_lo, si_hi) = bounds
        lr = min(max(lr, lr_lo), lr_hi)
        si = min(max(si, si_lo), si_hi)
    return pose.with_isocenter((lr, pose.ap, si))


def volume_bounds(volume) -> tuple[tuple[float, float], tuple[float, float]]:
    """Clamping region for navigation: the (LR, SI) volume extent."""
    ex, _, ez = volume.extent_mm
    return ((0.0, float(ex)), (0.0, float(ez)))
