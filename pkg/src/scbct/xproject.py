"""Circular cone-beam forward projector and its matched backprojector.

Both operators walk every source-to-pixel ray through the volume bounding
box at a fixed step and sample the volume with trilinear interpolation
(voxels outside the grid count as 0). The backprojector scatters each
sample back with the same weights, so it is the exact transpose of the
forward projector.

Coordinates are in mm with the isocenter at the physical center of the
volume. For view angle ``theta`` the source sits at
``(dso cos theta, dso sin theta, 0)``; the detector is perpendicular to the
source-isocenter ray at distance ``dsd`` from the source, its column axis
``u`` along ``(-sin theta, cos theta, 0)`` and its row axis ``v`` along z.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence, Tuple

import numba
import numpy as np

from .volgrid import AnyGrid, Volume3, as_grid

# Fixed number of backprojection accumulators; independent of thread count
# so the reduction order (and therefore the result) never changes.
_BP_CHUNKS = 4


@dataclass(frozen=True)
class ConeBeamGeometry:
    dsd: float = 1500.0
    dso: float = 1000.0
    det_rows: int = 512
    det_cols: int = 512
    pixel_size: Tuple[float, float] = (1.0, 1.0)  # (pu, pv)
    center_offset: Tuple[float, float] = (-160.0, 0.0)  # (du, dv)
    angles: Tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "angles", tuple(float(a) for a in self.angles))
        object.__setattr__(self, "pixel_size", tuple(float(p) for p in self.pixel_size))
        object.__setattr__(self, "center_offset", tuple(float(c) for c in self.center_offset))
        if not (self.dsd > self.dso > 0):
            raise ValueError(f"need dsd > dso > 0, got dsd={self.dsd}, dso={self.dso}")
        if self.det_rows < 1 or self.det_cols < 1:
            raise ValueError("detector must have at least one row and column")
        if len(self.pixel_size) != 2 or min(self.pixel_size) <= 0:
            raise ValueError(f"pixel sizes must be positive, got {self.pixel_size}")
        if len(self.center_offset) != 2:
            raise ValueError("center_offset needs (du, dv)")
        if not self.angles:
            raise ValueError("at least one view angle is required")

    @property
    def n_views(self) -> int:
        return len(self.angles)

    def subset(self, views: Sequence[int]) -> "ConeBeamGeometry":
        return replace(self, angles=tuple(self.angles[v] for v in views))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["angles"] = list(self.angles)
        d["pixel_size"] = list(self.pixel_size)
        d["center_offset"] = list(self.center_offset)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ConeBeamGeometry":
        return cls(**d)


def uniform_angles(n: int, arc: float = 2 * math.pi) -> Tuple[float, ...]:
    """``n`` equally spaced angles over ``arc`` radians, endpoint excluded."""
    return tuple(float(a) for a in np.arange(n) * (arc / n))


def clinical_geometry() -> ConeBeamGeometry:
    """512x512 detector of 1 mm pixels, 500 views over a full turn."""
    return ConeBeamGeometry(
        dsd=1500.0, dso=1000.0, det_rows=512, det_cols=512,
        pixel_size=(1.0, 1.0), center_offset=(-160.0, 0.0),
        angles=uniform_angles(500),
    )


def desk_geometry(n_views: int = 90) -> ConeBeamGeometry:
    """Small centered-detector profile for tests and laptops."""
    return ConeBeamGeometry(
        dsd=1500.0, dso=1000.0, det_rows=128, det_cols=128,
        pixel_size=(1.0, 1.0), center_offset=(0.0, 0.0),
        angles=uniform_angles(n_views),
    )


@dataclass(eq=False)
class ProjectionSet:
    geometry: ConeBeamGeometry
    data: np.ndarray  # (n_views, rows, cols)

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        g = self.geometry
        if self.data.shape != (g.n_views, g.det_rows, g.det_cols):
            raise ValueError(
                f"projection data shape {self.data.shape} does not match geometry "
                f"{(g.n_views, g.det_rows, g.det_cols)}"
            )
        if not np.all(np.isfinite(self.data)):
            raise ValueError("projection data contains non-finite values")

    def with_data(self, data: np.ndarray) -> "ProjectionSet":
        return ProjectionSet(self.geometry, data)

    def subset(self, views: Sequence[int]) -> "ProjectionSet":
        views = list(views)
        return ProjectionSet(self.geometry.subset(views), self.data[views])


def default_step(grid: AnyGrid) -> float:
    return 0.5 * min(as_grid(grid).spacing)


def _geom_arrays(geom: ConeBeamGeometry):
    return (
        np.asarray(geom.angles, np.float64),
        float(geom.dsd), float(geom.dso),
        int(geom.det_rows), int(geom.det_cols),
        float(geom.pixel_size[0]), float(geom.pixel_size[1]),
        float(geom.center_offset[0]), float(geom.center_offset[1]),
    )


@numba.njit(cache=True, inline="always")
def _slab(o, d, h, t0, t1):
    """Intersect [t0, t1] with the parameter range where |o + t d| <= h."""
    if abs(d) < 1e-15:
        if o < -h or o > h:
            return 0.0, -1.0
        return t0, t1
    a = (-h - o) / d
    b = (h - o) / d
    if a > b:
        a, b = b, a
    return max(t0, a), min(t1, b)


@numba.njit(cache=True)
def _ray(theta, dsd, dso, rows, cols, pu, pv, du, dv, r, c, hx, hy, hz):
    """Source point, unit direction and clipped [t0, t1] of one ray."""
    ct = math.cos(theta)
    st = math.sin(theta)
    sx = dso * ct
    sy = dso * st
    u = (c - 0.5 * (cols - 1)) * pu + du
    v = (r - 0.5 * (rows - 1)) * pv + dv
    px = sx - dsd * ct - u * st
    py = sy - dsd * st + u * ct
    pz = v
    dx = px - sx
    dy = py - sy
    dz = pz
    norm = math.sqrt(dx * dx + dy * dy + dz * dz)
    dx /= norm
    dy /= norm
    dz /= norm
    t0, t1 = _slab(sx, dx, hx, -1e300, 1e300)
    t0, t1 = _slab(sy, dy, hy, t0, t1)
    t0, t1 = _slab(0.0, dz, hz, t0, t1)
    return sx, sy, 0.0, dx, dy, dz, t0, t1


@numba.njit(cache=True, inline="always")
def _n_samples(t0, t1, step):
    length = t1 - t0
    if length <= 0.0:
        return 0, 0.0
    n = int(math.floor(length / step))
    rem = length - n * step
    if rem < 1e-9 * step:
        rem = 0.0
    return n, rem


@numba.njit(cache=True, inline="always")
def _trilinear(vol, fi, fj, fk):
    nx, ny, nz = vol.shape
    i0 = int(fi + 1.0) - 1
    j0 = int(fj + 1.0) - 1
    k0 = int(fk + 1.0) - 1
    wi = fi - i0
    wj = fj - j0
    wk = fk - k0
    if 0 <= i0 and i0 + 1 < nx and 0 <= j0 and j0 + 1 < ny and 0 <= k0 and k0 + 1 < nz:
        c00 = vol[i0, j0, k0] * (1.0 - wk) + vol[i0, j0, k0 + 1] * wk
        c01 = vol[i0, j0 + 1, k0] * (1.0 - wk) + vol[i0, j0 + 1, k0 + 1] * wk
        c10 = vol[i0 + 1, j0, k0] * (1.0 - wk) + vol[i0 + 1, j0, k0 + 1] * wk
        c11 = vol[i0 + 1, j0 + 1, k0] * (1.0 - wk) + vol[i0 + 1, j0 + 1, k0 + 1] * wk
        c0 = c00 * (1.0 - wj) + c01 * wj
        c1 = c10 * (1.0 - wj) + c11 * wj
        return c0 * (1.0 - wi) + c1 * wi
    acc = 0.0
    for a in range(2):
        i = i0 + a
        if i < 0 or i >= nx:
            continue
        wa = wi if a else 1.0 - wi
        for b in range(2):
            j = j0 + b
            if j < 0 or j >= ny:
                continue
            wb = wj if b else 1.0 - wj
            for e in range(2):
                k = k0 + e
                if k < 0 or k >= nz:
                    continue
                we = wk if e else 1.0 - wk
                acc += wa * wb * we * vol[i, j, k]
    return acc


@numba.njit(cache=True, inline="always")
def _splat(acc, fi, fj, fk, val):
    nx, ny, nz = acc.shape
    i0 = int(fi + 1.0) - 1
    j0 = int(fj + 1.0) - 1
    k0 = int(fk + 1.0) - 1
    wi = fi - i0
    wj = fj - j0
    wk = fk - k0
    if 0 <= i0 and i0 + 1 < nx and 0 <= j0 and j0 + 1 < ny and 0 <= k0 and k0 + 1 < nz:
        a0 = val * (1.0 - wi)
        a1 = val * wi
        b00 = a0 * (1.0 - wj)
        b01 = a0 * wj
        b10 = a1 * (1.0 - wj)
        b11 = a1 * wj
        acc[i0, j0, k0] += b00 * (1.0 - wk)
        acc[i0, j0, k0 + 1] += b00 * wk
        acc[i0, j0 + 1, k0] += b01 * (1.0 - wk)
        acc[i0, j0 + 1, k0 + 1] += b01 * wk
        acc[i0 + 1, j0, k0] += b10 * (1.0 - wk)
        acc[i0 + 1, j0, k0 + 1] += b10 * wk
        acc[i0 + 1, j0 + 1, k0] += b11 * (1.0 - wk)
        acc[i0 + 1, j0 + 1, k0 + 1] += b11 * wk
        return
    for a in range(2):
        i = i0 + a
        if i < 0 or i >= nx:
            continue
        wa = wi if a else 1.0 - wi
        for b in range(2):
            j = j0 + b
            if j < 0 or j >= ny:
                continue
            wb = wj if b else 1.0 - wj
            for e in range(2):
                k = k0 + e
                if k < 0 or k >= nz:
                    continue
                we = wk if e else 1.0 - wk
                acc[i, j, k] += wa * wb * we * val


@numba.njit(parallel=True, cache=True)
def _forward_kernel(vol, sp, angles, dsd, dso, rows, cols, pu, pv, du, dv, step):
    nx, ny, nz = vol.shape
    hx = 0.5 * nx * sp[0]
    hy = 0.5 * ny * sp[1]
    hz = 0.5 * nz * sp[2]
    # index coordinate of physical point p along axis a: (p + h_a) / s_a - 0.5
    nv = angles.shape[0]
    out = np.zeros((nv, rows, cols), np.float64)
    for vr in numba.prange(nv * rows):
        view = vr // rows
        r = vr % rows
        theta = angles[view]
        for c in range(cols):
            ox, oy, oz, dx, dy, dz, t0, t1 = _ray(theta, dsd, dso, rows, cols, pu, pv, du, dv, r, c, hx, hy, hz)
            n, rem = _n_samples(t0, t1, step)
            ax = (ox + hx) / sp[0] - 0.5
            ay = (oy + hy) / sp[1] - 0.5
            az = (oz + hz) / sp[2] - 0.5
            bx = dx / sp[0]
            by = dy / sp[1]
            bz = dz / sp[2]
            total = 0.0
            for s in range(n):
                t = t0 + (s + 0.5) * step
                total += _trilinear(vol, ax + t * bx, ay + t * by, az + t * bz)
            total *= step
            if rem > 0.0:
                t = t0 + n * step + 0.5 * rem
                total += rem * _trilinear(vol, ax + t * bx, ay + t * by, az + t * bz)
            out[view, r, c] = total
    return out


@numba.njit(parallel=True, cache=True)
def _back_kernel(proj, shape, sp, angles, dsd, dso, rows, cols, pu, pv, du, dv, step, nchunks):
    nx, ny, nz = shape[0], shape[1], shape[2]
    hx = 0.5 * nx * sp[0]
    hy = 0.5 * ny * sp[1]
    hz = 0.5 * nz * sp[2]
    nv = angles.shape[0]
    accs = np.zeros((nchunks, nx, ny, nz), np.float64)
    for ch in numba.prange(nchunks):
        acc = accs[ch]
        for view in range(ch, nv, nchunks):
            theta = angles[view]
            for r in range(rows):
                for c in range(cols):
                    val = proj[view, r, c]
                    if val == 0.0:
                        continue
                    ox, oy, oz, dx, dy, dz, t0, t1 = _ray(theta, dsd, dso, rows, cols, pu, pv, du, dv, r, c, hx, hy, hz)
                    n, rem = _n_samples(t0, t1, step)
                    ax = (ox + hx) / sp[0] - 0.5
                    ay = (oy + hy) / sp[1] - 0.5
                    az = (oz + hz) / sp[2] - 0.5
                    bx = dx / sp[0]
                    by = dy / sp[1]
                    bz = dz / sp[2]
                    ws = step * val
                    for s in range(n):
                        t = t0 + (s + 0.5) * step
                        _splat(acc, ax + t * bx, ay + t * by, az + t * bz, ws)
                    if rem > 0.0:
                        t = t0 + n * step + 0.5 * rem
                        _splat(acc, ax + t * bx, ay + t * by, az + t * bz, rem * val)
    out = np.zeros((nx, ny, nz), np.float64)
    for ch in range(nchunks):
        out += accs[ch]
    return out


def _check_step(step_mm):
    if not step_mm > 0:
        raise ValueError(f"step must be positive, got {step_mm}")


def forward_array(values: np.ndarray, spacing, geom: ConeBeamGeometry, step_mm: float) -> np.ndarray:
    """Line integrals of a raw ``[x, y, z]`` array; float64 ``(views, rows, cols)``."""
    _check_step(step_mm)
    return _forward_kernel(
        np.ascontiguousarray(values, dtype=np.float64), np.asarray(spacing, np.float64),
        *_geom_arrays(geom), float(step_mm),
    )


def back_array(data: np.ndarray, shape, spacing, geom: ConeBeamGeometry, step_mm: float) -> np.ndarray:
    """Transpose of :func:`forward_array`."""
    _check_step(step_mm)
    return _back_kernel(
        np.ascontiguousarray(data, dtype=np.float64), np.asarray(shape, np.int64),
        np.asarray(spacing, np.float64), *_geom_arrays(geom), float(step_mm),
        min(_BP_CHUNKS, geom.n_views),
    )


def forward_project(vol: Volume3, geom: ConeBeamGeometry, step_mm: float | None = None) -> ProjectionSet:
    """Project ``vol`` (centered on the isocenter) for every view of ``geom``.

    Each pixel holds the line integral ``sum(trilinear(vol, p_k) * step)``
    along the source-to-pixel ray, in value*mm.
    """
    step = default_step(vol) if step_mm is None else step_mm
    data = forward_array(vol.values, vol.spacing, geom, step)
    return ProjectionSet(geom, data.astype(np.float32))


def back_project(proj: ProjectionSet, grid: AnyGrid, step_mm: float | None = None) -> Volume3:
    g = as_grid(grid)
    step = default_step(g) if step_mm is None else step_mm
    out = back_array(proj.data, g.dims, g.spacing, proj.geometry, step)
    return Volume3(out.astype(np.float32), g.spacing, g.origin)
