"""Attenuation volumes with annotated skeletal landmarks.

Real CT data in this domain sits behind data-use agreements, so the
canonical test substrate is a procedural upper-body phantom: geometric
primitives (skull shell, vertebral column, rib cage, clavicle and
scapula slabs, two arms with elbow and wrist joints, hemidiaphragm
domes) voxelized onto a grid of linear attenuation coefficients, with
one named landmark per structure. A raw-volume loader covers users who
hold real data.

Coordinates are millimeters in the volume frame: x = LR (+x patient
left), y = AP (+y posterior), z = SI (+z superior); the volume origin is
the corner at (0, 0, 0) and voxel (i, j, k) is centered at
((i+0.5)*sx, (j+0.5)*sy, (k+0.5)*sz).

Single-material model: air 0, soft tissue ~mu_water, bone a constant
multiple -- geometry fidelity is what the downstream harness needs, not
spectral physics. mu_water defaults to 0.02/mm (~60 keV effective).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import yaml

from .errors import ConfigError, HeaderError, PayloadError, ValidationError
from .nametable import DEFAULT_LANDMARK_NAMES, LANDMARK_COUNT, NameTable
from .seeds import rng as _rng

MU_WATER_MM = 0.02

# left/right pairs whose LR coordinates must straddle the volume midline
PAIRED_INDICES = ((2, 3), (4, 5), (6, 7), (8, 9))

_SUPPORTED_DTYPES = {
    "float32": "<f4",
    "float64": "<f8",
    "int16": "<i2",
    "uint16": "<u2",
    "int32": "<i4",
    "uint8": "u1",
}


class Volume:
    """Voxel grid of linear attenuation coefficients (1/mm) with spacing."""

    axes = ("LR", "AP", "SI")

    def __init__(self, data: np.ndarray, spacing_mm):
        data = np.asarray(data)
        if data.ndim != 3:
            raise ValidationError(f"volume data must be 3-D, got {data.ndim}-D")
        if min(data.shape) < 2:
            raise ValidationError(f"all dims must be >= 2, got {data.shape}")
        spacing = tuple(float(s) for s in spacing_mm)
        if len(spacing) != 3 or min(spacing) <= 0.0:
            raise ValidationError(f"spacing must be 3 positive values, got {spacing_mm}")
        if not np.all(np.isfinite(data)):
            raise ValidationError("volume contains non-finite attenuation values")
        if data.min() < 0.0:
            raise ValidationError("volume contains negative attenuation values")
        self.data = np.ascontiguousarray(data, dtype=np.float32)
        self.data.flags.writeable = False
        self.spacing_mm = spacing

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def extent_mm(self) -> tuple[float, float, float]:
        return tuple(n * s for n, s in zip(self.data.shape, self.spacing_mm))

    def contains_point(self, point) -> bool:
        return all(0.0 <= p <= e for p, e in zip(point, self.extent_mm))

    def __eq__(self, other):
        if not isinstance(other, Volume):
            return NotImplemented
        return (
            self.spacing_mm == other.spacing_mm
            and self.dims == other.dims
            and bool(np.array_equal(self.data, other.data))
        )


@dataclass(frozen=True)
class Landmark:
    index: int
    name: str
    variants: tuple[str, ...]
    position_mm: tuple[float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "variants", tuple(self.variants))
        object.__setattr__(
            self, "position_mm", tuple(float(v) for v in self.position_mm)
        )
        if not 1 <= self.index <= LANDMARK_COUNT:
            raise ValidationError(
                f"landmark index {self.index} outside 1..{LANDMARK_COUNT}"
            )
        if not self.variants or self.name not in self.variants:
            raise ValidationError(
                f"landmark {self.index}: variants must be non-empty and "
                f"include the canonical name {self.name!r}"
            )


@dataclass(frozen=True)
class LandmarkSet:
    """Exactly 14 indexed landmarks inside a known physical extent."""

    landmarks: tuple[Landmark, ...]
    extent_mm: tuple[float, float, float]

    def __post_init__(self):
        object.__setattr__(
            self,
            "landmarks",
            tuple(sorted(self.landmarks, key=lambda lm: lm.index)),
        )
        object.__setattr__(
            self, "extent_mm", tuple(float(v) for v in self.extent_mm)
        )
        indices = [lm.index for lm in self.landmarks]
        if len(set(indices)) != len(indices):
            dupes = sorted({i for i in indices if indices.count(i) > 1})
            raise ValidationError(f"duplicate landmark indices {dupes}")
        if len(indices) != LANDMARK_COUNT:
            raise ValidationError(
                f"landmark set must have exactly {LANDMARK_COUNT} entries, "
                f"got {len(indices)}"
            )
        for lm in self.landmarks:
            if not all(
                0.0 <= p <= e for p, e in zip(lm.position_mm, self.extent_mm)
            ):
                raise ValidationError(
                    f"landmark {lm.index} position {lm.position_mm} outside "
                    f"extent {self.extent_mm}"
                )
        midline = 0.5 * self.extent_mm[0]
        for right, left in PAIRED_INDICES:
            r = self.get(right).position_mm[0] - midline
            l = self.get(left).position_mm[0] - midline
            if r * l >= 0.0:
                raise ValidationError(
                    f"paired landmarks {right}/{left} are not on opposite "
                    "sides of the LR midline"
                )

    def get(self, index: int) -> Landmark:
        return self.landmarks[index - 1]

    def position(self, index: int) -> np.ndarray:
        return np.array(self.get(index).position_mm)

    def positions_array(self) -> np.ndarray:
        """(14, 3) array ordered by index."""
        return np.array([lm.position_mm for lm in self.landmarks])

    def name_table(self) -> NameTable:
        return NameTable({lm.index: lm.variants for lm in self.landmarks})

    def resolve(self, name_or_index) -> int:
        """Landmark index from an index, numeric string, or name variant."""
        if isinstance(name_or_index, int):
            index = name_or_index
        else:
            text = str(name_or_index).strip()
            if text.isdigit():
                index = int(text)
            else:
                resolved = self.name_table().resolve(text)
                if resolved is None:
                    raise ValidationError(f"unknown landmark {name_or_index!r}")
                index = resolved
        if not 1 <= index <= LANDMARK_COUNT:
            raise ValidationError(f"landmark index {index} outside 1..{LANDMARK_COUNT}")
        return index


@dataclass(frozen=True)
class PhantomConfig:
    extent_mm: tuple[float, float, float] = (500.0, 300.0, 900.0)
    spacing_mm: tuple[float, float, float] = (4.0, 4.0, 4.0)
    mu_soft: float = MU_WATER_MM
    mu_bone: float = 0.048
    mu_diaphragm: float = 0.028
    names: dict[int, tuple[str, ...]] = field(
        default_factory=lambda: dict(DEFAULT_LANDMARK_NAMES)
    )

    def __post_init__(self):
        if min(self.extent_mm) <= 0.0 or min(self.spacing_mm) <= 0.0:
            raise ConfigError("phantom extents and spacing must be positive")
        ex, ey, ez = self.extent_mm
        if ex < 470.0 or ey < 240.0 or ez < 820.0:
            raise ConfigError(
                "phantom extent must cover an adult upper body "
                f"(needs >= 470x240x820 mm, got {self.extent_mm})"
            )
        if min(self.mu_soft, self.mu_bone, self.mu_diaphragm) <= 0.0:
            raise ConfigError("attenuation coefficients must be positive")


def _segment_dist2(X, Y, Z, a, b):
    """Squared distance from every grid point to segment a-b."""
    ab = np.subtract(b, a, dtype=float)
    denom = float(ab @ ab)
    px, py, pz = X - a[0], Y - a[1], Z - a[2]
    if denom == 0.0:
        return px * px + py * py + pz * pz
    t = np.clip((px * ab[0] + py * ab[1] + pz * ab[2]) / denom, 0.0, 1.0)
    dx = px - t * ab[0]
    dy = py - t * ab[1]
    dz = pz - t * ab[2]
    return dx * dx + dy * dy + dz * dz


def generate_phantom(
    seed: int, config: PhantomConfig | None = None
) -> tuple[Volume, LandmarkSet]:
    """Procedural upper-body phantom, deterministic per seed.

    The two humeral-head landmarks are separated by 285 +/- 25 mm in LR,
    matching the population statistic the view sampler is built around.
    """
    if config is None:
        config = PhantomConfig()
    ex, ey, ez = config.extent_mm
    sx, sy, sz = config.spacing_mm
    nx, ny, nz = (max(2, int(round(e / s))) for e, s in zip(config.extent_mm, config.spacing_mm))

    generator = _rng(seed, "phantom")
    hh_sep = 285.0 + generator.uniform(-25.0, 25.0)
    jit = generator.uniform(-1.0, 1.0, 24)

    mid_x, mid_y = 0.5 * ex, 0.5 * ey
    spine_y = mid_y + 0.10 * ey
    sternum_y = mid_y - 0.18 * ey
    scap_y = mid_y + 0.18 * ey

    skull_z = 0.90 * ez + 5.0 * jit[0]
    t1_z = 0.78 * ez + 4.0 * jit[1]
    shoulder_z = 0.765 * ez + 4.0 * jit[2]
    scap_z = 0.74 * ez + 4.0 * jit[3]
    sternum_z = 0.68 * ez + 4.0 * jit[4]
    elbow_z = 0.555 * ez + 5.0 * jit[5]
    hemi_r_z = 0.50 * ez + 4.0 * jit[6]
    hemi_l_z = 0.478 * ez + 4.0 * jit[7]
    wrist_z = 0.365 * ez + 5.0 * jit[8]
    sacrum_z = 0.11 * ez + 4.0 * jit[9]

    hh_half = 0.5 * hh_sep
    elbow_dx = hh_half + 18.0 + 3.0 * jit[10]
    wrist_dx = hh_half + 38.0 + 3.0 * jit[11]
    scap_dx = 95.0 + 3.0 * jit[12]
    hemi_dx = 62.0 + 3.0 * jit[13]
    head_r = 78.0 + 3.0 * jit[14]
    dome_r = 55.0 + 3.0 * jit[15]

    hh_r = (mid_x - hh_half, mid_y, shoulder_z)
    hh_l = (mid_x + hh_half, mid_y, shoulder_z)
    elbow_r = (mid_x - elbow_dx, mid_y, elbow_z)
    elbow_l = (mid_x + elbow_dx, mid_y, elbow_z)
    wrist_r = (mid_x - wrist_dx, mid_y, wrist_z)
    wrist_l = (mid_x + wrist_dx, mid_y, wrist_z)
    head_c = (mid_x, mid_y, skull_z)
    hemi_r_c = (mid_x - hemi_dx, mid_y, hemi_r_z)
    hemi_l_c = (mid_x + hemi_dx, mid_y, hemi_l_z)

    X = ((np.arange(nx) + 0.5) * sx).reshape(-1, 1, 1)
    Y = ((np.arange(ny) + 0.5) * sy).reshape(1, -1, 1)
    Z = ((np.arange(nz) + 0.5) * sz).reshape(1, 1, -1)

    def sphere2(c):
        return (X - c[0]) ** 2 + (Y - c[1]) ** 2 + (Z - c[2]) ** 2

    def ellipsoid(c, semi):
        return (
            ((X - c[0]) / semi[0]) ** 2
            + ((Y - c[1]) / semi[1]) ** 2
            + ((Z - c[2]) / semi[2]) ** 2
        ) <= 1.0

    def box(c, half):
        return (
            (np.abs(X - c[0]) <= half[0])
            & (np.abs(Y - c[1]) <= half[1])
            & (np.abs(Z - c[2]) <= half[2])
        )

    mu = np.zeros((nx, ny, nz), dtype=np.float64)

    def paint(mask, value):
        np.maximum(mu, np.where(mask, value, 0.0), out=mu)

    # soft tissue envelope: head, neck, torso, arms
    paint(sphere2(head_c) <= head_r**2, config.mu_soft)
    neck = (
        ((X - mid_x) ** 2 + (Y - mid_y) ** 2 <= 45.0**2)
        & (Z >= shoulder_z)
        & (Z <= skull_z)
    )
    paint(neck, config.mu_soft)
    torso_c = (mid_x, mid_y, 0.5 * (shoulder_z + sacrum_z))
    torso_semi = (175.0, 110.0, 0.5 * (shoulder_z - sacrum_z) + 45.0)
    paint(ellipsoid(torso_c, torso_semi), config.mu_soft)
    for a, b in (
        (hh_r, elbow_r), (elbow_r, wrist_r), (hh_l, elbow_l), (elbow_l, wrist_l),
    ):
        paint(_segment_dist2(X, Y, Z, a, b) <= 32.0**2, config.mu_soft)

    # hemidiaphragm domes (muscle density, upper hemispherical shells)
    for c in (hemi_r_c, hemi_l_c):
        d2 = sphere2(c)
        dome = (d2 <= dome_r**2) & (d2 >= (dome_r - 7.0) ** 2) & (Z >= c[2])
        paint(dome, config.mu_diaphragm)

    # skeleton
    d2 = sphere2(head_c)
    paint((d2 <= 75.0**2) & (d2 >= 65.0**2), config.mu_bone)  # skull shell
    spine = (
        ((X - mid_x) ** 2 + (Y - spine_y) ** 2 <= 16.0**2)
        & (Z >= sacrum_z - 20.0)
        & (Z <= t1_z + 12.0)
    )
    paint(spine, config.mu_bone)
    paint(box((mid_x, spine_y, sacrum_z), (35.0, 25.0, 30.0)), config.mu_bone)
    rib_c = (mid_x, mid_y, 0.63 * ez)
    rib = ellipsoid(rib_c, (150.0, 95.0, 160.0)) & ~ellipsoid(
        rib_c, (142.0, 87.0, 152.0)
    )
    paint(rib, config.mu_bone)
    paint(box((mid_x, sternum_y, sternum_z), (20.0, 8.0, 60.0)), config.mu_bone)
    for sgn in (-1.0, 1.0):
        paint(
            box((mid_x + sgn * scap_dx, scap_y, scap_z), (45.0, 7.0, 65.0)),
            config.mu_bone,
        )
        clav_in = (mid_x + sgn * 25.0, mid_y - 60.0, shoulder_z + 22.0)
        clav_out = (mid_x + sgn * (hh_half - 10.0), mid_y - 20.0, shoulder_z + 12.0)
        paint(_segment_dist2(X, Y, Z, clav_in, clav_out) <= 7.0**2, config.mu_bone)
    for c in (hh_r, hh_l):
        paint(sphere2(c) <= 24.0**2, config.mu_bone)
    for a, b, r in (
        (hh_r, elbow_r, 10.0), (hh_l, elbow_l, 10.0),
        (elbow_r, wrist_r, 9.0), (elbow_l, wrist_l, 9.0),
    ):
        paint(_segment_dist2(X, Y, Z, a, b) <= r**2, config.mu_bone)
    for c, r in ((elbow_r, 14.0), (elbow_l, 14.0), (wrist_r, 11.0), (wrist_l, 11.0)):
        paint(sphere2(c) <= r**2, config.mu_bone)

    volume = Volume(mu, config.spacing_mm)

    positions = {
        1: head_c,
        2: hh_r,
        3: hh_l,
        4: (mid_x - scap_dx, scap_y, scap_z),
        5: (mid_x + scap_dx, scap_y, scap_z),
        6: elbow_r,
        7: elbow_l,
        8: wrist_r,
        9: wrist_l,
        10: (mid_x, spine_y, t1_z),
        11: (mid_x, sternum_y, sternum_z),
        12: (hemi_r_c[0], hemi_r_c[1], hemi_r_z + dome_r),
        13: (hemi_l_c[0], hemi_l_c[1], hemi_l_z + dome_r),
        14: (mid_x, spine_y, sacrum_z),
    }
    landmarks = tuple(
        Landmark(
            index=i,
            name=config.names[i][0],
            variants=tuple(config.names[i]),
            position_mm=positions[i],
        )
        for i in range(1, LANDMARK_COUNT + 1)
    )
    extent = volume.extent_mm
    return volume, LandmarkSet(landmarks=landmarks, extent_mm=extent)


def save_volume(volume: Volume, header_path, raw_path) -> None:
    """Write the two-file volume format: YAML header + raw payload."""
    header = {
        "format": "carmsim-volume",
        "version": 1,
        "dims": list(volume.dims),
        "spacing_mm": list(volume.spacing_mm),
        "axes": list(volume.axes),
        "dtype": "float32",
        "byte_order": "little",
        "layout": "xyz-row-major",
        "units": "mu_mm",
        "raw_file": os.path.basename(str(raw_path)),
    }
    with open(header_path, "w") as f:
        yaml.safe_dump(header, f, sort_keys=False)
    with open(raw_path, "wb") as f:
        f.write(np.ascontiguousarray(volume.data, dtype="<f4").tobytes())


def load_volume(header_path, raw_path) -> Volume:
    """Load a volume from header + raw payload.

    Payloads declared in Hounsfield-like units are mapped to attenuation
    via mu = mu_water * (1 + HU/1000), clamped at zero.
    """
    try:
        with open(header_path) as f:
            header = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise HeaderError(f"unparseable volume header: {e}") from e
    if not isinstance(header, dict):
        raise HeaderError("volume header must be a mapping")

    dims = header.get("dims")
    spacing = header.get("spacing_mm")
    dtype_name = header.get("dtype", "float32")
    units = header.get("units", "mu_mm")
    if (
        not isinstance(dims, list)
        or len(dims) != 3
        or not all(isinstance(d, int) and d >= 2 for d in dims)
    ):
        raise HeaderError(f"bad dims {dims!r}: need 3 integers >= 2")
    if (
        not isinstance(spacing, list)
        or len(spacing) != 3
        or not all(isinstance(s, (int, float)) and s > 0 for s in spacing)
    ):
        raise HeaderError(f"bad spacing_mm {spacing!r}: need 3 positive numbers")
    if dtype_name not in _SUPPORTED_DTYPES:
        raise HeaderError(f"unsupported dtype {dtype_name!r}")
    if header.get("byte_order", "little") != "little":
        raise HeaderError("only little-endian payloads are supported")
    if units not in ("mu_mm", "hu"):
        raise HeaderError(f"unknown units {units!r} (expected mu_mm or hu)")

    np_dtype = np.dtype(_SUPPORTED_DTYPES[dtype_name])
    expected = dims[0] * dims[1] * dims[2] * np_dtype.itemsize
    with open(raw_path, "rb") as f:
        payload = f.read()
    if len(payload) != expected:
        raise PayloadError(
            f"payload is {len(payload)} bytes, expected {expected} "
            f"({dims[0]}x{dims[1]}x{dims[2]} x {np_dtype.itemsize}B)"
        )
    values = np.frombuffer(payload, dtype=np_dtype).reshape(dims).astype(np.float64)
    if not np.all(np.isfinite(values)):
        raise PayloadError("payload contains non-finite values")
    if units == "hu":
        mu_water = float(header.get("mu_water_mm", MU_WATER_MM))
        values = np.maximum(mu_water * (1.0 + values / 1000.0), 0.0)
    elif values.min() < 0.0:
        raise PayloadError("attenuation payload contains negative values")
    return Volume(values, spacing)


def save_landmarks(landmark_set: LandmarkSet, path) -> None:
    doc = {
        "format": "carmsim-landmarks",
        "version": 1,
        "extent_mm": list(landmark_set.extent_mm),
        "landmarks": [
            {
                "index": lm.index,
                "name": lm.name,
                "variants": list(lm.variants),
                "position_mm": list(lm.position_mm),
            }
            for lm in landmark_set.landmarks
        ],
    }
    with open(path, "w") as f:
        yaml.safe_dump(doc, f, sort_keys=False)


def load_landmarks(path) -> LandmarkSet:
    try:
        with open(path) as f:
            doc = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ValidationError(f"unparseable landmark file: {e}") from e
    if not isinstance(doc, dict) or "landmarks" not in doc:
        raise ValidationError("landmark file must contain a 'landmarks' list")
    extent = doc.get("extent_mm")
    if not isinstance(extent, list) or len(extent) != 3:
        raise ValidationError("landmark file must record extent_mm as 3 numbers")
    entries = []
    for item in doc["landmarks"]:
        try:
            entries.append(
                Landmark(
                    index=int(item["index"]),
                    name=str(item["name"]),
                    variants=tuple(str(v) for v in item.get("variants", [item["name"]])),
                    position_mm=tuple(item["position_mm"]),
                )
            )
        except (KeyError, TypeError) as e:
            raise ValidationError(f"malformed landmark entry {item!r}: {e}") from e
    return LandmarkSet(landmarks=tuple(entries), extent_mm=tuple(extent))
