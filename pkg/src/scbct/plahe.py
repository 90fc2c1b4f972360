"""Signed power-law adaptive histogram equalization (PL-AHE).

For a voxel with gray level ``u`` and the gray levels ``v`` inside its
window (``N`` voxels, truncated at the volume border) the mapping is::

    T(u) = 1/N * sum_v [ q(u - v, alpha) - beta * q(u - v, 1) + beta * u ]
    q(d, a) = 1/2 * sign(d) * |2 d| ** a

``alpha`` moves the cumulation function from the plain AHE step
(``alpha = 0``) to local-mean subtraction (``alpha = 1``); ``beta`` blends
the result back toward the input. The local histogram is the exact
empirical window distribution, so no intensity binning is involved.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numba
import numpy as np

from .volgrid import Volume3

#: The seven (alpha, beta) settings, in order (i)..(vii).
COMBO_PRESETS: Tuple[Tuple[float, float], ...] = (
    (0.5, 1.0),
    (1.0, 0.5),
    (0.5, 0.5),
    (1.0, 0.0),
    (0.5, 0.0),
    (0.0, 1.0),
    (0.0, 0.5),
)

DEFAULT_WINDOW = (5, 5, 5)
RANGE_TOL = 1e-6


@dataclass(frozen=True)
class PlaheParams:
    alpha: float
    beta: float
    window: Tuple[int, int, int] = DEFAULT_WINDOW
    extraction_mode: str = "residual"

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if len(self.window) != 3 or any(int(w) < 1 or int(w) % 2 == 0 for w in self.window):
            raise ValueError(f"window extents must be odd and >= 1, got {self.window}")
        if self.extraction_mode not in ("direct", "residual"):
            raise ValueError(f"unknown extraction mode {self.extraction_mode!r}")
        object.__setattr__(self, "window", tuple(int(w) for w in self.window))


def default_mode(beta: float) -> str:
    """``direct`` when beta is 0 (output is already detail only), else ``residual``."""
    return "direct" if beta == 0 else "residual"


def preset(index: int, window=DEFAULT_WINDOW, mode: str | None = None) -> PlaheParams:
    """Params for preset ``index`` in 1..7."""
    if not 1 <= index <= len(COMBO_PRESETS):
        raise ValueError(f"preset index must be in 1..{len(COMBO_PRESETS)}, got {index}")
    alpha, beta = COMBO_PRESETS[index - 1]
    return PlaheParams(alpha, beta, tuple(window), mode or default_mode(beta))


@numba.njit(cache=True, inline="always")
def _q(d, alpha):
    if d == 0.0:
        return 0.0
    ad = abs(2.0 * d)
    if alpha == 1.0:
        m = ad
    elif alpha == 0.0:
        m = 1.0
    elif alpha == 0.5:
        m = np.sqrt(ad)
    else:
        m = ad ** alpha
    return 0.5 * m if d > 0.0 else -0.5 * m


@numba.njit(parallel=True, cache=True)
def _plahe_kernel(u, alpha, beta, hx, hy, hz):
    nx, ny, nz = u.shape
    out = np.empty((nx, ny, nz), np.float64)
    for i in numba.prange(nx):
        i0 = max(i - hx, 0)
        i1 = min(i + hx + 1, nx)
        for j in range(ny):
            j0 = max(j - hy, 0)
            j1 = min(j + hy + 1, ny)
            for k in range(nz):
                k0 = max(k - hz, 0)
                k1 = min(k + hz + 1, nz)
                c = u[i, j, k]
                acc_pow = 0.0
                acc_lin = 0.0
                for a in range(i0, i1):
                    for b in range(j0, j1):
                        for e in range(k0, k1):
                            d = c - u[a, b, e]
                            acc_pow += _q(d, alpha)
                            acc_lin += d
                n = (i1 - i0) * (j1 - j0) * (k1 - k0)
                out[i, j, k] = (acc_pow - beta * acc_lin) / n + beta * c
    return out


def plahe_array(u: np.ndarray, alpha: float, beta: float, window=DEFAULT_WINDOW) -> np.ndarray:
    """PL-AHE on a raw float array; returns float64."""
    hx, hy, hz = (int(w) // 2 for w in window)
    return _plahe_kernel(np.ascontiguousarray(u, dtype=np.float64), float(alpha), float(beta), hx, hy, hz)


def plahe_transform(vol: Volume3, params: PlaheParams) -> Volume3:
    v = vol.values
    if v.min() < -RANGE_TOL or v.max() > 1 + RANGE_TOL:
        raise ValueError(
            f"PL-AHE expects intensities normalized to [0, 1], got [{v.min():g}, {v.max():g}]"
        )
    out = plahe_array(v, params.alpha, params.beta, params.window)
    return vol.with_values(out.astype(np.float32))


def extract_artifact(cbct: Volume3, params: PlaheParams) -> Volume3:
    """Artifact field from a [0, 1]-normalized CBCT.

    ``direct`` returns the PL-AHE image itself, ``residual`` returns its
    difference from the input.
    """
    t = plahe_transform(cbct, params)
    if params.extraction_mode == "direct":
        return t
    diff = t.values.astype(np.float64) - cbct.values.astype(np.float64)
    return cbct.with_values(diff.astype(np.float32))
