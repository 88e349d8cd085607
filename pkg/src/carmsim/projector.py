"""Cone-beam DRR renderer: the radiograph for a given C-arm pose.

For each detector pixel a ray is cast from the point source through the
pixel center, and the attenuation line integral is accumulated by
fixed-step trilinear sampling. The nominal step is half the smallest
voxel spacing; per ray, the step is shrunk to divide the in-volume
segment exactly, so a homogeneous slab integrates to mu*L up to
interpolation at the faces. The transmitted fraction follows
Beer-Lambert, T = exp(-integral); displayed values use a linear
negative-log normalization v = min(integral / window, 1), chosen for
bit-exact reproducibility over perceptual fidelity.

Detector raster: row 0 is the superior edge (image UP = +SI), column
growth is +LR (image RIGHT = patient left under the AP view). Rays are
independent and each ray's accumulation is strictly sequential, so the
image is bit-identical regardless of how pixels are scheduled across
threads.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass

import numpy as np

# select a threading layer numba never warns about (TBB probe is noisy here)
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")
from numba import njit, prange  # noqa: E402
from PIL import Image  # noqa: E402

from .errors import GeometryError, ValidationError
from .geometry import CArmPose
from .phantom import Volume

DEFAULT_WINDOW = 5.0
DEFAULT_STEP_FRACTION = 0.5


@njit(cache=True, parallel=True)
def _cast(data, sx, sy, sz, src, det_c, n_u, n_v, pitch_u, pitch_v, step_nom):
    nx, ny, nz = data.shape
    ex, ey, ez = nx * sx, ny * sy, nz * sz
    out = np.zeros((n_v, n_u), dtype=np.float64)
    for p in prange(n_v * n_u):
        r = p // n_u
        c = p % n_u
        # pixel center on the detector plane: +u = +LR, +v(up) = +SI
        u = (c + 0.5 - 0.5 * n_u) * pitch_u
        v = (0.5 * n_v - r - 0.5) * pitch_v
        px = det_c[0] + u
        py = det_c[1]
        pz = det_c[2] + v
        dx = px - src[0]
        dy = py - src[1]
        dz = pz - src[2]
        nrm = (dx * dx + dy * dy + dz * dz) ** 0.5
        dx /= nrm
        dy /= nrm
        dz /= nrm
        # slab intersection with the volume box [0, extent]^3
        tmin = 0.0
        tmax = nrm
        missed = False
        for axis in range(3):
            if axis == 0:
                o, d, e = src[0], dx, ex
            elif axis == 1:
                o, d, e = src[1], dy, ey
            else:
                o, d, e = src[2], dz, ez
            if abs(d) < 1e-12:
                if o < 0.0 or o > e:
                    missed = True
                    break
            else:
                t1 = (0.0 - o) / d
                t2 = (e - o) / d
                if t1 > t2:
                    t1, t2 = t2, t1
                if t1 > tmin:
                    tmin = t1
                if t2 < tmax:
                    tmax = t2
        integral = 0.0
        if not missed and tmax > tmin:
            length = tmax - tmin
            n = int(np.ceil(length / step_nom))
            if n < 1:
                n = 1
            dt = length / n
            acc = 0.0
            for i in range(n):
                t = tmin + (i + 0.5) * dt
                qx = (src[0] + t * dx) / sx - 0.5
                qy = (src[1] + t * dy) / sy - 0.5
                qz = (src[2] + t * dz) / sz - 0.5
                if qx < 0.0:
                    qx = 0.0
                elif qx > nx - 1.0:
                    qx = nx - 1.0
                if qy < 0.0:
                    qy = 0.0
                elif qy > ny - 1.0:
                    qy = ny - 1.0
                if qz < 0.0:
                    qz = 0.0
                elif qz > nz - 1.0:
                    qz = nz - 1.0
                ix = int(qx)
                iy = int(qy)
                iz = int(qz)
                if ix > nx - 2:
                    ix = nx - 2
                if iy > ny - 2:
                    iy = ny - 2
                if iz > nz - 2:
                    iz = nz - 2
                fx = qx - ix
                fy = qy - iy
                fz = qz - iz
                c00 = data[ix, iy, iz] * (1.0 - fx) + data[ix + 1, iy, iz] * fx
                c10 = data[ix, iy + 1, iz] * (1.0 - fx) + data[ix + 1, iy + 1, iz] * fx
                c01 = data[ix, iy, iz + 1] * (1.0 - fx) + data[ix + 1, iy, iz + 1] * fx
                c11 = (
                    data[ix, iy + 1, iz + 1] * (1.0 - fx)
                    + data[ix + 1, iy + 1, iz + 1] * fx
                )
                c0 = c00 * (1.0 - fy) + c10 * fy
                c1 = c01 * (1.0 - fy) + c11 * fy
                acc += c0 * (1.0 - fz) + c1 * fz
            integral = acc * dt
        out[r, c] = integral
    return out


@dataclass(frozen=True, eq=False)
class RadiographImage:
    """Rendered radiograph: display pixels in [0,1] plus raw line integrals."""

    pixels: np.ndarray
    integrals: np.ndarray
    pose: CArmPose

    def __post_init__(self):
        if not np.all(np.isfinite(self.pixels)):
            raise ValidationError("image contains non-finite pixels")
        if self.pixels.min() < 0.0 or self.pixels.max() > 1.0:
            raise ValidationError("image pixels outside [0, 1]")
        self.pixels.flags.writeable = False
        self.integrals.flags.writeable = False

    def transmission(self) -> np.ndarray:
        """Beer-Lambert transmitted fraction per pixel."""
        return np.exp(-self.integrals)

    def to_uint8(self) -> np.ndarray:
        # round half up, per the file-format contract
        return np.floor(self.pixels * 255.0 + 0.5).astype(np.uint8)

    def to_png_bytes(self) -> bytes:
        buf = io.BytesIO()
        Image.fromarray(self.to_uint8(), mode="L").save(buf, format="PNG")
        return buf.getvalue()

    def save_png(self, path) -> None:
        with open(path, "wb") as f:
            f.write(self.to_png_bytes())

    def save_raw_float32(self, path) -> None:
        """Raw little-endian float32 line-integral grid, for tests/tools."""
        with open(path, "wb") as f:
            f.write(np.ascontiguousarray(self.integrals, dtype="<f4").tobytes())


def render(
    volume: Volume,
    pose: CArmPose,
    *,
    window: float = DEFAULT_WINDOW,
    step_fraction: float = DEFAULT_STEP_FRACTION,
) -> RadiographImage:
    """Cast one cone-beam projection of the volume at the given pose."""
    if not volume.contains_point(pose.isocenter):
        raise GeometryError(
            f"isocenter {pose.isocenter} outside volume extent {volume.extent_mm}"
        )
    if window <= 0.0 or step_fraction <= 0.0:
        raise ValidationError("window and step_fraction must be positive")
    n_u, n_v = pose.detector_res
    pitch_u = pose.detector_extent[0] / n_u
    pitch_v = pose.detector_extent[1] / n_v
    step_nom = step_fraction * min(volume.spacing_mm)
    integrals = _cast(
        volume.data,
        volume.spacing_mm[0],
        volume.spacing_mm[1],
        volume.spacing_mm[2],
        pose.source_position(),
        pose.detector_center(),
        n_u,
        n_v,
        pitch_u,
        pitch_v,
        step_nom,
    )
    pixels = np.minimum(integrals / window, 1.0)
    return RadiographImage(pixels=pixels, integrals=integrals, pose=pose)


def png_bytes_to_array(data: bytes) -> np.ndarray:
    """Decode 8-bit grayscale PNG bytes to a (rows, cols) uint8 array."""
    with Image.open(io.BytesIO(data)) as img:
        return np.asarray(img.convert("L"))
