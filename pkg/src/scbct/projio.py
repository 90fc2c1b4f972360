"""Projection-set files: MetaImage data plus a JSON geometry sidecar.

The .mha holds ``DimSize = cols rows n_views``; the sidecar (same stem,
``.json``) records the scanner geometry and, optionally, the grid of the
projected volume.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .metaimage import atomic_write_bytes, read_array, write_array
from .volgrid import Grid
from .xproject import ConeBeamGeometry, ProjectionSet


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def write_projections(proj: ProjectionSet, path, grid: Grid | None = None):
    g = proj.geometry
    arr = np.transpose(proj.data, (2, 1, 0))  # -> [col, row, view]
    write_array(arr, (g.pixel_size[0], g.pixel_size[1], 1.0), (0.0, 0.0, 0.0), path)
    meta = {"geometry": g.to_dict()}
    if grid is not None:
        meta["grid"] = {"dims": list(grid.dims), "spacing": list(grid.spacing), "origin": list(grid.origin)}
    atomic_write_bytes(sidecar_path(path), (json.dumps(meta, indent=2, sort_keys=True) + "\n").encode())


def read_projections(path):
    """Return ``(ProjectionSet, Grid | None)``."""
    arr, _, _, _ = read_array(path)
    meta = json.loads(sidecar_path(path).read_text())
    geom = ConeBeamGeometry.from_dict(meta["geometry"])
    proj = ProjectionSet(geom, np.transpose(arr, (2, 1, 0)))
    grid = None
    if "grid" in meta:
        gm = meta["grid"]
        grid = Grid(tuple(gm["dims"]), tuple(gm["spacing"]), tuple(gm["origin"]))
    return proj, grid
