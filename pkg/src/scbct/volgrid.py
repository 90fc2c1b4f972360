"""Volume and mask data model, grid resampling, cropping and voxel arithmetic.

Arrays are indexed ``values[i, j, k]`` with ``i`` along x, ``j`` along y and
``k`` along z. The physical center of voxel ``(i, j, k)`` is
``origin + (i*sx, j*sy, k*sz)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np
from scipy import ndimage

Triple = Tuple[float, float, float]


class GridError(ValueError):
    """Raised when volumes do not share a grid or a grid is invalid."""


def _triple(x, name: str) -> Triple:
    t = tuple(float(v) for v in x)
    if len(t) != 3:
        raise GridError(f"{name} must have three components, got {x!r}")
    return t  # type: ignore[return-value]


@dataclass(eq=False)
class Volume3:
    """Dense 3D scalar grid with physical spacing and origin (mm)."""

    values: np.ndarray
    spacing: Triple = (1.0, 1.0, 1.0)
    origin: Triple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=self._dtype())
        self.spacing = _triple(self.spacing, "spacing")
        self.origin = _triple(self.origin, "origin")
        if self.values.ndim != 3 or min(self.values.shape) < 1:
            raise GridError(f"expected a non-empty 3D array, got shape {self.values.shape}")
        if min(self.spacing) <= 0:
            raise GridError(f"spacing must be positive, got {self.spacing}")
        if not np.all(np.isfinite(self.origin)):
            raise GridError("origin must be finite")
        self._check_values()

    @staticmethod
    def _dtype():
        return np.float32

    def _check_values(self):
        if not np.all(np.isfinite(self.values)):
            raise GridError("volume contains non-finite values")

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(int(n) for n in self.values.shape)  # type: ignore[return-value]

    @property
    def grid(self) -> "Grid":
        return Grid(self.dims, self.spacing, self.origin)

    def center(self) -> np.ndarray:
        """Physical position of the geometric center of the voxel lattice."""
        return self.grid.center()

    def with_values(self, values: np.ndarray) -> "Volume3":
        return Volume3(values, self.spacing, self.origin)

    def copy(self):
        return type(self)(self.values.copy(), self.spacing, self.origin)


class Mask3(Volume3):
    """Binary volume; every value is exactly 0 or 1 (stored as uint8)."""

    @staticmethod
    def _dtype():
        return np.uint8

    def __init__(self, values, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)):
        arr = np.asarray(values)
        if arr.dtype == bool:
            arr = arr.astype(np.uint8)
        elif not np.all((arr == 0) | (arr == 1)):
            raise GridError("mask values must be exactly 0 or 1")
        super().__init__(arr, spacing, origin)

    def _check_values(self):
        pass

    def with_values(self, values: np.ndarray) -> "Mask3":
        return Mask3(values, self.spacing, self.origin)

    @property
    def count(self) -> int:
        return int(self.values.sum(dtype=np.int64))


@dataclass(frozen=True)
class Grid:
    """Grid geometry without values."""

    dims: Tuple[int, int, int]
    spacing: Triple
    origin: Triple

    def center(self) -> np.ndarray:
        return np.asarray(self.origin) + 0.5 * (np.asarray(self.dims) - 1) * np.asarray(self.spacing)

    def extent(self) -> Tuple[np.ndarray, np.ndarray]:
        """Closed interval spanned by the voxel centers, per axis."""
        lo = np.asarray(self.origin, dtype=float)
        return lo, lo + (np.asarray(self.dims) - 1) * np.asarray(self.spacing)

    def empty(self) -> Volume3:
        return Volume3(np.zeros(self.dims, np.float32), self.spacing, self.origin)

    def same_as(self, other: "Grid", tol: float = 1e-6) -> bool:
        return (
            tuple(self.dims) == tuple(other.dims)
            and np.allclose(self.spacing, other.spacing, rtol=0, atol=tol)
            and np.allclose(self.origin, other.origin, rtol=0, atol=tol)
        )


AnyGrid = Union[Grid, Volume3]


def as_grid(g: AnyGrid) -> Grid:
    return g.grid if isinstance(g, Volume3) else g


@dataclass(frozen=True)
class GridRegion:
    """Half-open voxel index box ``[lo, hi)``."""

    lo: Tuple[int, int, int]
    hi: Tuple[int, int, int]

    def __post_init__(self):
        if any(a >= b for a, b in zip(self.lo, self.hi)):
            raise GridError(f"empty region lo={self.lo} hi={self.hi}")

    @property
    def slices(self) -> Tuple[slice, slice, slice]:
        return tuple(slice(a, b) for a, b in zip(self.lo, self.hi))  # type: ignore[return-value]

    @property
    def shape(self) -> Tuple[int, int, int]:
        return tuple(b - a for a, b in zip(self.lo, self.hi))  # type: ignore[return-value]


def require_same_grid(a: Volume3, b: Volume3):
    if not a.grid.same_as(b.grid):
        raise GridError(f"grid mismatch: {a.grid} vs {b.grid}")


def crop(vol: Volume3, region: GridRegion) -> Volume3:
    """Restrict ``vol`` to ``region``, keeping physical positions."""
    if any(h > n for h, n in zip(region.hi, vol.dims)) or min(region.lo) < 0:
        raise GridError(f"region {region} outside dims {vol.dims}")
    origin = tuple(o + l * s for o, l, s in zip(vol.origin, region.lo, vol.spacing))
    return type(vol)(vol.values[region.slices].copy(), vol.spacing, origin)


def resample_to_grid(src: Volume3, ref_grid: AnyGrid, interp: str = "trilinear") -> Volume3:
    """Sample ``src`` at every voxel center of ``ref_grid``.

    Samples falling outside the voxel-center extent of ``src`` are 0. Masks
    resampled with ``nearest`` stay masks.
    """
    g = as_grid(ref_grid)
    if interp not in ("trilinear", "nearest"):
        raise ValueError(f"unknown interpolation {interp!r}")
    if g.same_as(src.grid, tol=0.0):
        return src.copy()
    # index coordinate in src of each ref voxel center; axes are separable
    axes = []
    for ax in range(3):
        phys = g.origin[ax] + np.arange(g.dims[ax]) * g.spacing[ax]
        axes.append((phys - src.origin[ax]) / src.spacing[ax])
    coords = np.stack(np.meshgrid(*axes, indexing="ij"))
    n = np.asarray(src.dims).reshape(3, 1, 1, 1)
    tol = 1e-9
    inside = np.all((coords >= -tol) & (coords <= n - 1 + tol), axis=0)
    coords = np.clip(coords, 0, n - 1)
    order = 1 if interp == "trilinear" else 0
    data = src.values.astype(np.float64)
    if order == 0:
        # round half up consistently rather than scipy's spline-based rounding
        idx = np.floor(coords + 0.5).astype(np.intp)
        idx = np.minimum(idx, n - 1)
        out = data[idx[0], idx[1], idx[2]]
    else:
        out = ndimage.map_coordinates(data, coords, order=1, mode="nearest")
    out = np.where(inside, out, 0.0)
    if isinstance(src, Mask3) and order == 0:
        return Mask3(out.astype(np.uint8), g.spacing, g.origin)
    return Volume3(out.astype(np.float32), g.spacing, g.origin)


def crop_overlap_fov(ref: Volume3, other: Volume3) -> Tuple[Volume3, Volume3, GridRegion]:
    """Crop ``ref`` to the physical overlap with ``other``.

    ``other`` is resampled onto the cropped ref grid, so both outputs share
    dims, spacing and origin. Extents are taken between outermost voxel
    centers.
    """
    rlo, rhi = ref.grid.extent()
    olo, ohi = other.grid.extent()
    lo_mm = np.maximum(rlo, olo)
    hi_mm = np.minimum(rhi, ohi)
    if np.any(lo_mm > hi_mm + 1e-6):
        raise GridError("volumes have no physical overlap")
    sp = np.asarray(ref.spacing)
    eps = 1e-6
    lo_idx = np.ceil((lo_mm - rlo) / sp - eps).astype(int)
    hi_idx = np.floor((hi_mm - rlo) / sp + eps).astype(int) + 1
    lo_idx = np.clip(lo_idx, 0, np.asarray(ref.dims))
    hi_idx = np.clip(hi_idx, 0, np.asarray(ref.dims))
    if np.any(lo_idx >= hi_idx):
        raise GridError("overlap contains no voxel centers of the reference")
    region = GridRegion(tuple(int(v) for v in lo_idx), tuple(int(v) for v in hi_idx))
    ref_c = crop(ref, region)
    other_c = resample_to_grid(other, ref_c.grid, "nearest" if isinstance(other, Mask3) else "trilinear")
    return ref_c, other_c, region


def add_scaled(a: Volume3, b: Volume3, lam: float = 1.0) -> Volume3:
    """``a + lam * b`` voxel by voxel."""
    require_same_grid(a, b)
    out = a.values.astype(np.float64) + float(lam) * b.values.astype(np.float64)
    return Volume3(out.astype(np.float32), a.spacing, a.origin)


def rescale_unit(vol: Volume3) -> Volume3:
    v = vol.values.astype(np.float64)
    lo, hi = v.min(), v.max()
    if not hi > lo:
        raise GridError("cannot rescale a constant volume")
    out = (v - lo) / (hi - lo)
    return Volume3(out.astype(np.float32), vol.spacing, vol.origin)


def add_gaussian_noise(data, sigma: float, seed: int):
    """Add i.i.d. N(0, sigma^2) noise drawn from a PCG64 stream keyed by ``seed``.

    Works on anything exposing ``.values`` (volumes) or ``.data``
    (projection sets) and returns a new object of the same type.
    """
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    attr = "values" if isinstance(data, Volume3) else "data"
    arr = getattr(data, attr)
    if sigma == 0:
        noisy = arr.copy()
    else:
        rng = np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))
        noise = rng.standard_normal(arr.shape) * float(sigma)
        noisy = (arr.astype(np.float64) + noise).astype(arr.dtype)
    if isinstance(data, Volume3):
        return data.with_values(noisy)
    return data.with_data(noisy)


_SIX = ndimage.generate_binary_structure(3, 1)
_TWENTY_SIX = ndimage.generate_binary_structure(3, 3)


def cleanup_mask(mask: Mask3, min_island_voxels: int = 100) -> Mask3:
    """Fill enclosed cavities, then drop small foreground islands."""
    fg = mask.values.astype(bool)
    # background components not 6-connected to the boundary are cavities
    bg_lab, _ = ndimage.label(~fg, structure=_SIX)
    border = np.unique(np.concatenate([
        bg_lab[0].ravel(), bg_lab[-1].ravel(),
        bg_lab[:, 0].ravel(), bg_lab[:, -1].ravel(),
        bg_lab[:, :, 0].ravel(), bg_lab[:, :, -1].ravel(),
    ]))
    filled = fg | ~np.isin(bg_lab, border)
    filled |= fg
    lab, n = ndimage.label(filled, structure=_TWENTY_SIX)
    if n:
        sizes = np.bincount(lab.ravel())
        keep = sizes >= min_island_voxels
        keep[0] = False
        filled = keep[lab]
    return mask.with_values(filled.astype(np.uint8))
