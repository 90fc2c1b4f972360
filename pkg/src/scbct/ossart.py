"""Ordered-subset SART reconstruction on top of the matched projector pair."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Callable, List, Optional

import numpy as np

from .volgrid import AnyGrid, Volume3, as_grid
from .xproject import ProjectionSet, back_array, default_step, forward_array

log = logging.getLogger(__name__)


class ReconstructionError(RuntimeError):
    pass


@dataclass(frozen=True)
class OssartParams:
    n_subsets: int = 20
    n_epochs: int = 20
    relaxation: float = 1.0
    nonnegativity: bool = True
    ordering: str = "interleaved"
    epsilon: float = 1e-6
    step_mm: Optional[float] = None

    def __post_init__(self):
        if self.n_subsets < 1:
            raise ValueError("n_subsets must be >= 1")
        if self.n_epochs < 1:
            raise ValueError("n_epochs must be >= 1")
        if not 0.0 < self.relaxation < 2.0:
            raise ValueError(f"relaxation must lie in (0, 2), got {self.relaxation}")
        if self.ordering not in ("interleaved", "sequential"):
            raise ValueError(f"unknown ordering {self.ordering!r}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.step_mm is not None and not self.step_mm > 0:
            raise ValueError("step_mm must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def subset_views(n_views: int, n_subsets: int, ordering: str = "interleaved") -> List[np.ndarray]:
    """Partition view indices into ``n_subsets`` groups.

    ``interleaved`` puts view ``v`` in subset ``v % n_subsets``;
    ``sequential`` uses contiguous blocks.
    """
    if n_subsets > n_views:
        raise ValueError(f"n_subsets ({n_subsets}) exceeds the number of views ({n_views})")
    views = np.arange(n_views)
    if ordering == "interleaved":
        return [views[k::n_subsets] for k in range(n_subsets)]
    return [np.asarray(b) for b in np.array_split(views, n_subsets)]


class _System:
    """Subset operators with cached normalizers."""

    def __init__(self, proj: ProjectionSet, grid, params: OssartParams):
        self.proj = proj
        self.grid = as_grid(grid)
        self.params = params
        self.step = params.step_mm or default_step(self.grid)
        self.subsets = subset_views(proj.geometry.n_views, params.n_subsets, params.ordering)
        self.geoms = [proj.geometry.subset(s) for s in self.subsets]
        self.data = [proj.data[s].astype(np.float64) for s in self.subsets]
        ones = np.ones(self.grid.dims)
        eps = params.epsilon
        self.inv_row = []
        self.inv_col = []
        for g in self.geoms:
            row = forward_array(ones, self.grid.spacing, g, self.step)
            col = back_array(np.ones((g.n_views, g.det_rows, g.det_cols)), self.grid.dims, self.grid.spacing, g, self.step)
            # zero-weight rays and voxels receive no update
            self.inv_row.append(np.where(row > eps, 1.0 / (row + eps), 0.0))
            self.inv_col.append(np.where(col > eps, 1.0 / (col + eps), 0.0))

    def fp(self, x, k):
        return forward_array(x, self.grid.spacing, self.geoms[k], self.step)

    def bp(self, y, k):
        return back_array(y, self.grid.dims, self.grid.spacing, self.geoms[k], self.step)

    def update(self, x, k):
        resid = (self.data[k] - self.fp(x, k)) * self.inv_row[k]
        x = x + self.params.relaxation * self.bp(resid, k) * self.inv_col[k]
        if self.params.nonnegativity:
            np.maximum(x, 0.0, out=x)
        return x

    def residual(self, x) -> float:
        full = forward_array(x, self.grid.spacing, self.proj.geometry, self.step)
        b = self.proj.data.astype(np.float64)
        nb = np.linalg.norm(b)
        nr = np.linalg.norm(b - full)
        if nb == 0:
            return 0.0 if nr == 0 else float("inf")
        return float(nr / nb)


def _run(proj, grid, params, x0=None, track_residual=False,
         callback: Optional[Callable[[int, np.ndarray], None]] = None):
    system = _System(proj, grid, params)
    x = np.zeros(system.grid.dims) if x0 is None else np.array(x0, dtype=np.float64)
    history = []
    for epoch in range(params.n_epochs):
        for k in range(len(system.subsets)):
            x = system.update(x, k)
            if not np.all(np.isfinite(x)):
                raise ReconstructionError(f"non-finite values at epoch {epoch}, subset {k}")
        if track_residual:
            history.append(system.residual(x))
            log.debug("epoch %d residual %.6g", epoch, history[-1])
        if callback is not None:
            callback(epoch, x)
    return x, history


def reconstruct(proj: ProjectionSet, grid: AnyGrid, params: OssartParams = OssartParams(),
                x0: Optional[np.ndarray] = None, callback=None) -> Volume3:
    """Reconstruct ``proj`` onto ``grid`` starting from zero (or ``x0``).

    ``callback(epoch, x)`` is called after each full pass, with ``x`` the
    float64 working array.
    """
    g = as_grid(grid)
    x, _ = _run(proj, g, params, x0=x0, callback=callback)
    return Volume3(x.astype(np.float32), g.spacing, g.origin)


def residual_history(proj: ProjectionSet, grid: AnyGrid, params: OssartParams = OssartParams(),
                     callback=None) -> List[float]:
    """Relative data residual ``|b - A x| / |b|`` after every epoch (0 for zero data)."""
    _, hist = _run(proj, as_grid(grid), params, track_residual=True, callback=callback)
    return hist
