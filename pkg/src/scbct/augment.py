"""Eight geometric/intensity augmentations applied jointly to image and mask."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import ndimage

from .volgrid import Mask3, Volume3


@dataclass(frozen=True)
class AugmentSpec:
    kind: str
    scale: float = 1.0
    rotate_deg: float = 0.0
    shear_deg: float = 0.0
    amount: float = 1.0
    gain: float = 10.0
    cutoff: float = 0.5

    def __post_init__(self):
        if self.kind not in ("sharpen", "sigmoid_contrast", "affine"):
            raise ValueError(f"unknown augmentation kind {self.kind!r}")
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        if self.amount < 0:
            raise ValueError("sharpen amount must be non-negative")

    @property
    def name(self) -> str:
        if self.kind != "affine":
            return self.kind
        if self.shear_deg:
            return f"shear{self.shear_deg:+g}"
        return f"affine_s{self.scale:g}_r{self.rotate_deg:+g}"

    def to_dict(self):
        return asdict(self)


#: Presets 1..8 in order: sharpen, sigmoid, four scale/rotate combos, two shears.
PRESETS: Tuple[AugmentSpec, ...] = (
    AugmentSpec("sharpen"),
    AugmentSpec("sigmoid_contrast"),
    AugmentSpec("affine", scale=1.3, rotate_deg=10.0),
    AugmentSpec("affine", scale=1.3, rotate_deg=-10.0),
    AugmentSpec("affine", scale=0.8, rotate_deg=10.0),
    AugmentSpec("affine", scale=0.8, rotate_deg=-10.0),
    AugmentSpec("affine", shear_deg=20.0),
    AugmentSpec("affine", shear_deg=-20.0),
)


def preset(index: int) -> AugmentSpec:
    if not 1 <= index <= len(PRESETS):
        raise ValueError(f"augmentation preset must be in 1..{len(PRESETS)}, got {index}")
    return PRESETS[index - 1]


def sharpen(vol: Volume3, amount: float = 1.0) -> Volume3:
    """Unsharp mask with a 3x3x3 box: ``v + amount * (v - boxmean(v))``."""
    if amount < 0:
        raise ValueError("amount must be non-negative")
    v = vol.values.astype(np.float64)
    blur = ndimage.uniform_filter(v, size=3, mode="nearest")
    return vol.with_values((v + amount * (v - blur)).astype(np.float32))


def sigmoid_contrast(vol: Volume3, gain: float = 10.0, cutoff: float = 0.5) -> Volume3:
    v = vol.values.astype(np.float64)
    if v.min() < 0 or v.max() > 1:
        raise ValueError("sigmoid contrast expects values in [0, 1]")
    return vol.with_values((1.0 / (1.0 + np.exp(-gain * (v - cutoff)))).astype(np.float32))


def _physical_matrix(spec: AugmentSpec) -> np.ndarray:
    """Forward map in physical (x, y, z) about the volume center."""
    th = math.radians(spec.rotate_deg)
    rot = np.array([[math.cos(th), -math.sin(th), 0.0],
                    [math.sin(th), math.cos(th), 0.0],
                    [0.0, 0.0, 1.0]])
    shear = np.eye(3)
    shear[0, 1] = math.tan(math.radians(spec.shear_deg))
    scale = np.diag([spec.scale, spec.scale, 1.0])
    return scale @ rot @ shear


def affine_transform(vol: Volume3, mask: Optional[Mask3], spec: AugmentSpec):
    """Resample ``vol`` (trilinear) and ``mask`` (nearest) under ``spec``.

    Scaling and rotation act in the axial (x-y) plane about the physical
    center, identically for every slice. Samples from outside the grid are 0.
    """
    if spec.kind != "affine":
        raise ValueError(f"affine_transform needs an affine spec, got {spec.kind!r}")
    sp = np.asarray(vol.spacing)
    inv = np.linalg.inv(_physical_matrix(spec))
    # index-space map: idx_in = D^-1 inv D (idx_out - c) + c
    mat = np.diag(1.0 / sp) @ inv @ np.diag(sp)
    c = 0.5 * (np.asarray(vol.dims) - 1)
    offset = c - mat @ c
    out = ndimage.affine_transform(vol.values.astype(np.float64), mat, offset=offset,
                                   order=1, mode="constant", cval=0.0)
    out_vol = vol.with_values(out.astype(np.float32))
    out_mask = None
    if mask is not None:
        m = ndimage.affine_transform(mask.values.astype(np.float64), mat, offset=offset,
                                     order=0, mode="constant", cval=0.0)
        out_mask = mask.with_values((m >= 0.5).astype(np.uint8))
    return out_vol, out_mask


def apply(vol: Volume3, mask: Optional[Mask3], spec: AugmentSpec):
    """Apply any augmentation; intensity-only kinds pass the mask through."""
    if spec.kind == "sharpen":
        return sharpen(vol, spec.amount), (mask.copy() if mask is not None else None)
    if spec.kind == "sigmoid_contrast":
        v = np.clip(vol.values, 0.0, 1.0)
        return sigmoid_contrast(vol.with_values(v), spec.gain, spec.cutoff), (mask.copy() if mask is not None else None)
    return affine_transform(vol, mask, spec)
