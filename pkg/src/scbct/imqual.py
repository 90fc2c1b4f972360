"""Image-similarity metrics between a synthetic CBCT and a reference."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass
from typing import Tuple

import numpy as np
from scipy import ndimage

from .volgrid import Volume3, require_same_grid

SSIM_WINDOW = 7
K1 = 0.01
K2 = 0.03
METRIC_SETTINGS = {"window": SSIM_WINDOW, "k1": K1, "k2": K2, "data_range": 1.0, "cc": "pearson"}


@dataclass
class SimilarityReport:
    ssim: float
    rmse: float
    cc: float
    uqi: float

    def to_dict(self, **extra) -> dict:
        d = asdict(self)
        d.update(extra)
        return d

    def to_json(self, **extra) -> str:
        return json.dumps(self.to_dict(**extra), sort_keys=True)

    def to_csv_row(self, **extra) -> str:
        d = self.to_dict(**extra)
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(d), lineterminator="\n")
        w.writeheader()
        w.writerow({k: json.dumps(v) if isinstance(v, (dict, list)) else v for k, v in d.items()})
        return buf.getvalue()


@dataclass
class HistogramCurve:
    bin_edges: np.ndarray
    frequencies: np.ndarray


def _arrays(a: Volume3, b: Volume3):
    require_same_grid(a, b)
    return a.values.astype(np.float64), b.values.astype(np.float64)


def _local_stats(x, y, win):
    """Window means, variances and covariance over every fully-inside window."""
    if any(n < win for n in x.shape):
        raise ValueError(f"volume {x.shape} smaller than the {win}^3 window")
    h = win // 2
    crop = tuple(slice(h, n - h) for n in x.shape)

    def mean(arr):
        return ndimage.uniform_filter(arr, size=win, mode="constant")[crop]

    mx, my = mean(x), mean(y)
    vx = np.maximum(mean(x * x) - mx * mx, 0.0)
    vy = np.maximum(mean(y * y) - my * my, 0.0)
    cxy = mean(x * y) - mx * my
    # constant windows have exactly zero (co)variance, not round-off
    const_x = (ndimage.maximum_filter(x, size=win) - ndimage.minimum_filter(x, size=win))[crop] == 0
    const_y = (ndimage.maximum_filter(y, size=win) - ndimage.minimum_filter(y, size=win))[crop] == 0
    vx[const_x] = 0.0
    vy[const_y] = 0.0
    cxy[const_x | const_y] = 0.0
    return mx, my, vx, vy, cxy, const_x & const_y


def ssim(a: Volume3, b: Volume3, window: int = SSIM_WINDOW) -> float:
    """Mean local SSIM over all fully-inside ``window``^3 uniform windows (unit dynamic range)."""
    x, y = _arrays(a, b)
    mx, my, vx, vy, cxy, _ = _local_stats(x, y, window)
    c1 = K1 ** 2
    c2 = K2 ** 2
    s = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
    return float(s.mean())


def uqi(a: Volume3, b: Volume3, window: int = SSIM_WINDOW) -> float:
    """SSIM with both stabilizing constants at zero.

    Windows with a zero denominator count as 1 when both patches are
    identical and are skipped otherwise.
    """
    x, y = _arrays(a, b)
    mx, my, vx, vy, cxy, both_const = _local_stats(x, y, window)
    num = 4 * mx * my * cxy
    den = (mx * mx + my * my) * (vx + vy)
    zero = den == 0
    ok = ~zero
    vals = np.empty_like(den)
    vals[ok] = num[ok] / den[ok]
    if zero.any():
        h = window // 2
        crop = tuple(slice(h, n - h) for n in x.shape)
        same = (ndimage.maximum_filter(np.abs(x - y), size=window)[crop] == 0)
        vals[zero & same] = 1.0
        ok = ok | (zero & same)
    if not ok.any():
        raise ValueError("UQI undefined: every window has a zero denominator")
    return float(vals[ok].mean())


def rmse(a: Volume3, b: Volume3) -> float:
    x, y = _arrays(a, b)
    return float(np.sqrt(np.mean((x - y) ** 2)))


def cc(a: Volume3, b: Volume3) -> float:
    """Pearson correlation of the flattened volumes."""
    x, y = _arrays(a, b)
    x = x.ravel() - x.mean()
    y = y.ravel() - y.mean()
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0 or ny == 0:
        raise ValueError("correlation undefined for a constant volume")
    return float(np.clip(np.dot(x, y) / (nx * ny), -1.0, 1.0))


def compare(a: Volume3, b: Volume3) -> SimilarityReport:
    return SimilarityReport(ssim=ssim(a, b), rmse=rmse(a, b), cc=cc(a, b), uqi=uqi(a, b))


def histogram_curve(vol: Volume3, n_bins: int = 256, value_range: Tuple[float, float] = (0.0, 1.0)) -> HistogramCurve:
    """Uniform-bin histogram normalized so the fullest bin is 1.

    Values outside the range are counted in the edge bins.
    """
    lo, hi = map(float, value_range)
    if n_bins < 1 or not lo < hi:
        raise ValueError(f"invalid histogram setup: n_bins={n_bins}, range=({lo}, {hi})")
    edges = np.linspace(lo, hi, n_bins + 1)
    v = vol.values.astype(np.float64).ravel()
    idx = np.floor((v - lo) / (hi - lo) * n_bins).astype(np.int64)
    idx = np.clip(idx, 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins).astype(np.float64)
    peak = counts.max()
    freq = counts / peak if peak > 0 else counts
    return HistogramCurve(edges, freq)
