"""Synthetic thorax-like phantoms for desk-scale runs and tests."""
from __future__ import annotations

from pathlib import Path
from typing import Tuple

import numpy as np

from .metaimage import write_metaimage
from .volgrid import Mask3, Volume3

# (center xyz as fraction of half-extent, semi-axes as fraction, value in HU)
_ELLIPSOIDS = (
    ((0.0, 0.0, 0.0), (0.85, 0.62, 2.0), 0.0),        # soft-tissue body
    ((-0.40, 0.02, 0.0), (0.30, 0.42, 2.0), -800.0),  # right lung
    ((0.40, 0.02, 0.0), (0.30, 0.42, 2.0), -800.0),   # left lung
    ((0.0, -0.42, 0.0), (0.10, 0.10, 2.0), 700.0),    # vertebra
    ((0.05, 0.20, 0.0), (0.16, 0.12, 0.55), 40.0),    # heart
    ((-0.12, 0.28, 0.0), (0.05, 0.05, 2.0), 400.0),   # sternum-ish bone
)
_ESOPHAGUS = ((0.0, -0.22), (0.07, 0.06))
_ESOPHAGUS_HU = 60.0
AIR_HU = -1000.0


def _coords(dims):
    axes = [np.linspace(-1, 1, n) if n > 1 else np.zeros(1) for n in dims]
    return np.meshgrid(*axes, indexing="ij")


def esophagus_mask_array(dims) -> np.ndarray:
    x, y, z = _coords(dims)
    (cx, cy), (ax, ay) = _ESOPHAGUS
    # slight lateral drift along z so the tube is not axis-aligned
    cx = cx + 0.04 * z
    return ((x - cx) / ax) ** 2 + ((y - cy) / ay) ** 2 <= 1.0


def thorax_phantom(dims: Tuple[int, int, int] = (64, 64, 64),
                   spacing=(1.0, 1.0, 1.0), origin=None) -> Tuple[Volume3, Mask3]:
    """Piecewise-constant HU phantom and its esophagus mask.

    The default origin centers the grid on (0, 0, 0).
    """
    x, y, z = _coords(dims)
    hu = np.full(dims, AIR_HU)
    for (cx, cy, cz), (ax, ay, az), val in _ELLIPSOIDS:
        inside = ((x - cx) / ax) ** 2 + ((y - cy) / ay) ** 2 + ((z - cz) / az) ** 2 <= 1.0
        hu[inside] = val
    eso = esophagus_mask_array(dims)
    hu[eso] = _ESOPHAGUS_HU
    if origin is None:
        origin = tuple(-0.5 * (n - 1) * s for n, s in zip(dims, spacing))
    return Volume3(hu.astype(np.float32), spacing, origin), Mask3(eso.astype(np.uint8), spacing, origin)


def unit_phantom(dims=(64, 64, 64), spacing=(1.0, 1.0, 1.0)) -> Volume3:
    """The thorax phantom mapped to [0, 1] attenuation-like values."""
    vol, _ = thorax_phantom(dims, spacing)
    v = (vol.values - AIR_HU) / (700.0 - AIR_HU)
    return vol.with_values(v)


def corrupt_like_cbct(vol: Volume3, seed: int = 0, streak_hu: float = 120.0,
                      noise_hu: float = 40.0, cupping_hu: float = 150.0,
                      n_streaks: int = 12) -> Volume3:
    """Add streaks, cupping and noise typical of scatter-degraded CBCT.

    Streaks radiate from the densest structure in each axial slice;
    cupping is a radial low-frequency intensity drop; noise is white.
    """
    rng = np.random.default_rng(seed)
    x, y, z = _coords(vol.dims)
    v = vol.values.astype(np.float64)
    body = v > -500
    r2 = x ** 2 + y ** 2
    cupping = -cupping_hu * (1.0 - r2) * body
    # angular streak pattern centred on the vertebra
    phi = np.arctan2(y + 0.42, x)
    phases = rng.uniform(0, 2 * np.pi, size=2)
    streaks = streak_hu * (np.cos(n_streaks * phi + phases[0]) ** 8 - 0.5 * np.cos(0.5 * n_streaks * phi + phases[1]) ** 4)
    streaks *= np.exp(-np.sqrt(x ** 2 + (y + 0.42) ** 2) / 0.8)
    noise = rng.normal(0.0, noise_hu, size=v.shape)
    return vol.with_values((v + cupping + streaks + noise).astype(np.float32))


def dose_field(vol: Volume3, peak_gy: float = 60.0) -> Volume3:
    """Smooth non-negative dose blob centred just anterior of the esophagus."""
    x, y, z = _coords(vol.dims)
    d = peak_gy * np.exp(-((x / 0.45) ** 2 + ((y + 0.05) / 0.35) ** 2 + (z / 1.2) ** 2))
    return vol.with_values(d.astype(np.float32))


def write_case(directory, dims=(64, 64, 64), spacing=(1.0, 1.0, 1.0), seed: int = 1,
               with_dose: bool = True) -> dict:
    """Write a pCT/CBCT/esophagus(/dose) phantom case as .mha files.

    The CBCT is the pCT corrupted by :func:`corrupt_like_cbct`. Returns the
    file paths keyed ``pct``, ``cbct``, ``masks`` and ``dose``.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    pct, eso = thorax_phantom(dims, spacing)
    paths = {"pct": str(d / "pct.mha"), "cbct": str(d / "cbct.mha"),
             "masks": {"esophagus": str(d / "esophagus.mha")}, "dose": None}
    write_metaimage(pct, paths["pct"])
    write_metaimage(corrupt_like_cbct(pct, seed=seed), paths["cbct"])
    write_metaimage(eso, paths["masks"]["esophagus"])
    if with_dose:
        paths["dose"] = str(d / "dose.mha")
        write_metaimage(dose_field(pct), paths["dose"])
    return paths
