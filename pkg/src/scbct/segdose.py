"""Segmentation overlap/distance metrics, the Dice+BCE loss, and dose metrics."""
from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .volgrid import Mask3, Volume3, require_same_grid

LOSS_EPS = 1e-6
_SIX = ndimage.generate_binary_structure(3, 1)


class EmptyMaskError(ValueError):
    pass


def dice(a: Mask3, b: Mask3) -> float:
    """2|A and B| / (|A| + |B|); two empty masks give 1."""
    require_same_grid(a, b)
    x = a.values.astype(bool)
    y = b.values.astype(bool)
    sa, sb = int(x.sum()), int(y.sum())
    if sa + sb == 0:
        return 1.0
    return 2.0 * int(np.logical_and(x, y).sum()) / (sa + sb)


def surface(mask: np.ndarray) -> np.ndarray:
    """Foreground voxels with a 6-neighbour in the background (outside counts as background)."""
    m = mask.astype(bool)
    inner = ndimage.binary_erosion(m, structure=_SIX, border_value=0)
    return m & ~inner


def surface_distances(a: Mask3, b: Mask3) -> np.ndarray:
    """Pooled distances (mm) from each surface voxel of one mask to the other surface."""
    require_same_grid(a, b)
    if a.count == 0 or b.count == 0:
        raise EmptyMaskError("surface distance needs two non-empty masks")
    sa = surface(a.values)
    sb = surface(b.values)
    dist_to_b = ndimage.distance_transform_edt(~sb, sampling=a.spacing)
    dist_to_a = ndimage.distance_transform_edt(~sa, sampling=a.spacing)
    return np.concatenate([dist_to_b[sa], dist_to_a[sb]])


def hd95(a: Mask3, b: Mask3) -> float:
    """95th percentile of the pooled symmetric surface distances, in mm."""
    return float(np.percentile(surface_distances(a, b), 95))


def combined_loss(pred: Volume3, truth: Mask3, w_dice: float = 1.0, w_bce: float = 1.0,
                  eps: float = LOSS_EPS) -> Tuple[float, np.ndarray]:
    """Soft-Dice + binary cross-entropy loss and its gradient w.r.t. ``pred``."""
    require_same_grid(pred, truth)
    if w_dice < 0 or w_bce < 0:
        raise ValueError("loss weights must be non-negative")
    p = pred.values.astype(np.float64)
    if p.min() < 0 or p.max() > 1:
        raise ValueError("predictions must lie in [0, 1]")
    g = truth.values.astype(np.float64)
    return loss_and_grad(p, g, w_dice, w_bce, eps)


def loss_and_grad(p: np.ndarray, g: np.ndarray, w_dice=1.0, w_bce=1.0, eps=LOSS_EPS):
    inter = np.sum(p * g)
    denom = np.sum(p) + np.sum(g) + eps
    soft = (2.0 * inter + eps) / denom
    bce = -g * np.log(p + eps) - (1.0 - g) * np.log(1.0 - p + eps)
    loss = w_dice * (1.0 - soft) + w_bce * bce.mean()
    d_soft = (2.0 * g * denom - (2.0 * inter + eps)) / denom ** 2
    d_bce = (-g / (p + eps) + (1.0 - g) / (1.0 - p + eps)) / p.size
    return float(loss), -w_dice * d_soft + w_bce * d_bce


# -- dose ---------------------------------------------------------------

def _masked_dose(dose: Volume3, mask: Mask3) -> np.ndarray:
    require_same_grid(dose, mask)
    m = mask.values.astype(bool)
    if not m.any():
        raise EmptyMaskError("structure mask is empty")
    d = dose.values.astype(np.float64)[m]
    if np.any(d < 0):
        raise ValueError("dose grid holds negative values")
    return d


def voxel_cc(vol: Volume3) -> float:
    sx, sy, sz = vol.spacing
    return sx * sy * sz / 1000.0


def mean_dose(dose: Volume3, mask: Mask3) -> float:
    return float(np.mean(_masked_dose(dose, mask)))


def d_cc(dose: Volume3, mask: Mask3, volume_cc: float = 5.0) -> float:
    """Minimum dose to the hottest ``volume_cc`` of the structure (Gy).

    The k-th hottest voxel is placed at cumulative volume ``k * voxel_cc``
    and the dose is linearly interpolated between those points.
    """
    d = np.sort(_masked_dose(dose, mask))[::-1]
    vv = voxel_cc(dose)
    if not volume_cc > 0:
        raise ValueError("volume_cc must be positive")
    if volume_cc > d.size * vv * (1 + 1e-12):
        raise ValueError(f"structure volume {d.size * vv:.4g} cc is smaller than {volume_cc} cc")
    cum = np.arange(1, d.size + 1) * vv
    return float(np.interp(volume_cc, cum, d))


@dataclass
class DvhCurve:
    dose_edges: np.ndarray
    volume_cc: np.ndarray

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["dose_Gy", "volume_cc"])
        for dgy, vcc in zip(self.dose_edges, self.volume_cc):
            w.writerow([repr(float(dgy)), repr(float(vcc))])
        return buf.getvalue()


def dvh(dose: Volume3, mask: Mask3, n_bins: int = 100) -> DvhCurve:
    """Cumulative DVH: structure volume (cc) receiving at least each dose level."""
    d = _masked_dose(dose, mask)
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    edges = np.linspace(0.0, d.max(), n_bins + 1)
    srt = np.sort(d)
    at_or_above = srt.size - np.searchsorted(srt, edges, side="left")
    return DvhCurve(edges, at_or_above * voxel_cc(dose))


@dataclass
class BlandAltmanStats:
    bias: float
    sd: float
    loa_low: float
    loa_high: float
    n: int

    def to_dict(self):
        return asdict(self)


def bland_altman(pairs: Iterable[Sequence[float]]) -> BlandAltmanStats:
    arr = np.asarray(list(pairs), dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 2 or arr.shape[1] != 2:
        raise ValueError("Bland-Altman needs at least two (x, y) pairs")
    diff = arr[:, 0] - arr[:, 1]
    bias = float(diff.mean())
    sd = float(diff.std(ddof=1))
    return BlandAltmanStats(bias, sd, bias - 1.96 * sd, bias + 1.96 * sd, int(diff.size))
