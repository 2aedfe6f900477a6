"""Velocity evaluation: locate a cell, then interpolate vertex velocities.

A :class:`FieldEvaluator` bundles the locator strategy with the two counters
(``locate_count``, ``interp_count``) that the cost model's per-evaluation
terms are calibrated against.  Out-of-bounds is a signal (None), counted on
the locate side only.
"""
from __future__ import annotations

from typing import Optional

import numpy as np

from . import _batch as B
from .locate import (
    LocateResult, WalkCache, ensure_celltree,
    locate_celltree, locate_rectilinear, locate_uniform, locate_walk,
)
from .mesh import Dataset, MeshError, RectilinearGrid, TetMesh, UniformGrid

STRATEGIES = ("uniform", "rectilinear", "celltree", "celltree+walk")


def trilinear_interpolate(dataset: Dataset, r: LocateResult) -> np.ndarray:
    """8-corner blend on a structured grid at r's cell and fractions."""
    grid = dataset.mesh
    if not isinstance(grid, (UniformGrid, RectilinearGrid)):
        raise MeshError("trilinear interpolation needs a structured grid")
    nx, ny, nz = (int(d) for d in grid.dims)
    cell = int(r.cell)
    if not 0 <= cell < grid.cell_count:
        raise MeshError(f"cell {cell} out of range")
    ix = cell % (nx - 1)
    rest = cell // (nx - 1)
    iy = rest % (ny - 1)
    iz = rest // (ny - 1)
    fx, fy, fz = (np.asarray([float(v)]) for v in r.local)
    vx, vy, vz = B.trilinear_rows(
        dataset.velocity, nx, ny,
        np.asarray([ix], dtype=np.int64), np.asarray([iy], dtype=np.int64),
        np.asarray([iz], dtype=np.int64), fx, fy, fz)
    return np.array([vx[0], vy[0], vz[0]])


def barycentric_coords(mesh: TetMesh, cell: int, p) -> np.ndarray:
    """All four barycentric coordinates of p in the given tet."""
    p = np.asarray(p, dtype=float)
    return B.bary_rows(mesh.vertices, mesh.tets,
                       np.asarray([int(cell)], dtype=np.int64),
                       np.asarray([p[0]]), np.asarray([p[1]]),
                       np.asarray([p[2]]))[0]


def tet_interpolate(dataset: Dataset, r: LocateResult) -> np.ndarray:
    """Barycentric blend of the four vertex velocities.

    r.local stores (b1, b2, b3); the first weight is derived as
    1 - b1 - b2 - b3, matching the batch engine's rounding exactly.
    """
    mesh = dataset.mesh
    if not isinstance(mesh, TetMesh):
        raise MeshError("tet interpolation needs a tetrahedral mesh")
    b1, b2, b3 = (float(v) for v in r.local)
    b0 = 1.0 - b1 - b2 - b3
    a, b, c, d = (int(v) for v in mesh.tets[int(r.cell)])
    vel = dataset.velocity
    return np.array([
        b0 * vel[a, 0] + b1 * vel[b, 0] + b2 * vel[c, 0] + b3 * vel[d, 0],
        b0 * vel[a, 1] + b1 * vel[b, 1] + b2 * vel[c, 1] + b3 * vel[d, 1],
        b0 * vel[a, 2] + b1 * vel[b, 2] + b2 * vel[c, 2] + b3 * vel[d, 2],
    ])


class FieldEvaluator:
    """Locate-then-interpolate with per-component counters.

    ``strategy`` is one of "uniform", "rectilinear", "celltree",
    "celltree+walk", or "auto" (the mesh's natural choice; unstructured
    meshes get the walk).  One evaluator per worker: the counters and walk
    cache are mutable, the dataset is shared read-only.
    """

    def __init__(self, dataset: Dataset, strategy: str = "auto"):
        if strategy == "auto":
            strategy = {"uniform": "uniform",
                        "rectilinear": "rectilinear",
                        "unstructured": "celltree+walk"}[dataset.kind]
        if strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {strategy!r}")
        structured = strategy in ("uniform", "rectilinear")
        if structured and strategy != dataset.kind:
            raise ValueError(
                f"strategy {strategy!r} does not apply to a {dataset.kind} mesh")
        if not structured and dataset.kind != "unstructured":
            raise ValueError(
                f"strategy {strategy!r} does not apply to a {dataset.kind} mesh")
        self.dataset = dataset
        self.strategy = strategy
        self.locate_count = 0
        self.interp_count = 0
        self.cache = WalkCache()
        self._tree = (ensure_celltree(dataset)
                      if dataset.kind == "unstructured" else None)

    def reset_counters(self) -> None:
        self.locate_count = 0
        self.interp_count = 0

    def locate(self, p) -> Optional[LocateResult]:
        self.locate_count += 1
        if self.strategy == "uniform":
            return locate_uniform(self.dataset.mesh, p)
        if self.strategy == "rectilinear":
            return locate_rectilinear(self.dataset.mesh, p)
        if self.strategy == "celltree":
            return locate_celltree(self._tree, self.dataset.mesh, p)
        return locate_walk(self.cache, self._tree, self.dataset.mesh, p)

    def evaluate(self, p) -> Optional[np.ndarray]:
        r = self.locate(p)
        if r is None:
            return None
        self.interp_count += 1
        if self.strategy in ("uniform", "rectilinear"):
            return trilinear_interpolate(self.dataset, r)
        return tet_interpolate(self.dataset, r)


def evaluate_velocity(ev: FieldEvaluator, p) -> Optional[np.ndarray]:
    """Velocity at p, or None when p is outside the domain."""
    return ev.evaluate(p)
