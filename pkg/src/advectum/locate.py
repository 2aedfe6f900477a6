"""Cell location for all three mesh kinds.

Structured grids locate analytically (uniform) or by per-axis binary search
(rectilinear).  Tetrahedral meshes locate through a bounding interval
hierarchy over cell boxes ("cell tree") and, for coherent query streams,
a face-to-face walk seeded from the previous cell.

Boundary ownership is total and deterministic: a point on a shared interior
plane belongs to the higher interval, the exact upper domain boundary to the
last cell, and a point on a shared tet face to the lowest containing tet id.
Out-of-bounds is a signal (None), not an error.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import _batch as B
from .mesh import Dataset, MeshError, RectilinearGrid, TetMesh, UniformGrid

EPS_BARY = B.EPS_BARY
WALK_LIMIT = B.WALK_LIMIT


@dataclass(frozen=True)
class LocateResult:
    """A located cell plus the local coordinates interpolation needs.

    For hex cells ``local`` holds the three unit-cell fractions; for tets it
    holds the last three barycentric coordinates (b0 = 1 - b1 - b2 - b3,
    the same derivation the batch engine uses, so blends match bitwise).
    """
    cell: int
    local: tuple[float, float, float]


@dataclass
class WalkCache:
    last_cell: Optional[int] = None


@dataclass(frozen=True)
class CellTree:
    """Bounding interval hierarchy over tet bounding boxes.

    Interior node i splits on ``axis[i]``: the left child holds cells whose
    box maxima are all <= lmax[i], the right child cells whose minima are all
    >= rmin[i] (the intervals may overlap).  ``left[i]`` is the left child
    index, the right child is left[i] + 1; leaves have left[i] == -1 and own
    cells[start[i] : start[i] + count[i]].
    """
    axis: np.ndarray
    lmax: np.ndarray
    rmin: np.ndarray
    left: np.ndarray
    start: np.ndarray
    count: np.ndarray
    cells: np.ndarray
    leaf_size: int
    max_depth: int

    @property
    def node_count(self) -> int:
        return len(self.left)


def build_celltree(mesh: TetMesh, leaf_size: int = 8,
                   max_depth: int = 32) -> CellTree:
    """Median-split BIH build: longest box axis, median of box centers."""
    if leaf_size < 1 or max_depth < 1:
        raise ValueError("leaf_size and max_depth must be >= 1")
    ntet = len(mesh.tets)
    if ntet == 0:
        raise MeshError("cannot build a cell tree over an empty mesh")
    corners = mesh.vertices[mesh.tets]
    lo = corners.min(axis=1)
    hi = corners.max(axis=1)
    centers = 0.5 * (lo + hi)

    cells = np.arange(ntet, dtype=np.int64)
    axis_l: list[int] = []
    lmax_l: list[float] = []
    rmin_l: list[float] = []
    left_l: list[int] = []
    start_l: list[int] = []
    count_l: list[int] = []

    def new_node() -> int:
        axis_l.append(0)
        lmax_l.append(0.0)
        rmin_l.append(0.0)
        left_l.append(-1)
        start_l.append(0)
        count_l.append(0)
        return len(left_l) - 1

    root = new_node()
    todo = [(root, 0, ntet, 0)]
    while todo:
        node, start, count, depth = todo.pop()
        seg = cells[start:start + count]
        if count <= leaf_size or depth >= max_depth:
            start_l[node] = start
            count_l[node] = count
            continue
        box_lo = lo[seg].min(axis=0)
        box_hi = hi[seg].max(axis=0)
        ax = int(np.argmax(box_hi - box_lo))
        mid = count // 2
        order = np.argpartition(centers[seg, ax], mid)
        seg[:] = seg[order]
        axis_l[node] = ax
        lmax_l[node] = float(hi[seg[:mid], ax].max())
        rmin_l[node] = float(lo[seg[mid:], ax].min())
        lchild = new_node()
        new_node()
        left_l[node] = lchild
        todo.append((lchild + 1, start + mid, count - mid, depth + 1))
        todo.append((lchild, start, mid, depth + 1))

    return CellTree(
        axis=np.asarray(axis_l, dtype=np.int64),
        lmax=np.asarray(lmax_l),
        rmin=np.asarray(rmin_l),
        left=np.asarray(left_l, dtype=np.int64),
        start=np.asarray(start_l, dtype=np.int64),
        count=np.asarray(count_l, dtype=np.int64),
        cells=cells,
        leaf_size=leaf_size,
        max_depth=max_depth,
    )


def ensure_celltree(dataset: Dataset, leaf_size: int = 8,
                    max_depth: int = 32) -> CellTree:
    """The dataset's cell tree, built on first use and cached."""
    if dataset.kind != "unstructured":
        raise MeshError("cell trees apply to unstructured meshes only")
    tree = dataset._celltree
    if tree is None:
        tree = build_celltree(dataset.mesh, leaf_size, max_depth)
        dataset._celltree = tree
    return tree


# --------------------------------------------------------------------------
# structured grids


def _locate_structured(grid, p) -> Optional[LocateResult]:
    p = np.asarray(p, dtype=float)
    b = grid.bounds()
    if not (b.min[0] <= p[0] <= b.max[0]
            and b.min[1] <= p[1] <= b.max[1]
            and b.min[2] <= p[2] <= b.max[2]):
        return None
    one = np.empty(1)
    is_rect = isinstance(grid, RectilinearGrid)
    idx = []
    frac = []
    for a in range(3):
        one[0] = p[a]
        if is_rect:
            i, f = B.axis_rect(one, grid.axis_coords(a))
        else:
            i, f = B.axis_uniform(one, grid.origin[a], grid.spacing[a],
                                  grid.dims[a])
        idx.append(int(i[0]))
        frac.append(float(f[0]))
    nx, ny, _ = (int(d) - 1 for d in grid.dims)
    cell = idx[0] + nx * (idx[1] + ny * idx[2])
    return LocateResult(cell=cell, local=(frac[0], frac[1], frac[2]))


def locate_uniform(grid: UniformGrid, p) -> Optional[LocateResult]:
    """Analytic index computation; None when p is outside the grid bounds."""
    if not isinstance(grid, UniformGrid):
        raise TypeError("locate_uniform expects a UniformGrid")
    return _locate_structured(grid, p)


def locate_rectilinear(grid: RectilinearGrid, p) -> Optional[LocateResult]:
    """Per-axis binary search; None when p is outside the grid bounds."""
    if not isinstance(grid, RectilinearGrid):
        raise TypeError("locate_rectilinear expects a RectilinearGrid")
    return _locate_structured(grid, p)


def structured_cell_index(grid, ix: int, iy: int, iz: int) -> int:
    """Flattened x-fastest cell index."""
    nx, ny, _ = (int(d) - 1 for d in grid.dims)
    return ix + nx * (iy + ny * iz)


# --------------------------------------------------------------------------
# tetrahedral meshes


def _tet_result(mesh: TetMesh, cell: int, p) -> LocateResult:
    bb = B.bary_rows(mesh.vertices, mesh.tets,
                     np.asarray([cell], dtype=np.int64),
                     np.asarray([p[0]]), np.asarray([p[1]]),
                     np.asarray([p[2]]))[0]
    return LocateResult(cell=int(cell),
                        local=(float(bb[1]), float(bb[2]), float(bb[3])))


def locate_celltree(tree: CellTree, mesh: TetMesh, p) -> Optional[LocateResult]:
    """Tree lookup returning the lowest containing tet id, or None."""
    p = np.asarray(p, dtype=float)
    cells, b = B.celltree_query_rows(tree, mesh.vertices, mesh.tets,
                                     np.asarray([p[0]]), np.asarray([p[1]]),
                                     np.asarray([p[2]]))
    if cells[0] < 0:
        return None
    bb = b[0]
    return LocateResult(cell=int(cells[0]),
                        local=(float(bb[1]), float(bb[2]), float(bb[3])))


def locate_walk(cache: WalkCache, tree: CellTree, mesh: TetMesh,
                p) -> Optional[LocateResult]:
    """Walk from the cached cell, falling back to the tree.

    Hops across the face of the most negative barycentric coordinate.  A
    strictly interior hit is returned directly (a unique owner exists); a hit
    on a cell boundary defers to the tree so shared-face ties resolve to the
    lowest tet id on every code path.  The cache is updated to the returned
    cell, or cleared on an out-of-bounds result.
    """
    p = np.asarray(p, dtype=float)
    result: Optional[LocateResult] = None
    if cache.last_cell is not None:
        cell = int(cache.last_cell)
        px = np.asarray([p[0]])
        py = np.asarray([p[1]])
        pz = np.asarray([p[2]])
        for _ in range(WALK_LIMIT + 1):
            bb = B.bary_rows(mesh.vertices, mesh.tets,
                             np.asarray([cell], dtype=np.int64),
                             px, py, pz)[0]
            k = int(np.argmin(bb))
            minb = bb[k]
            if minb >= -EPS_BARY:
                if minb > EPS_BARY:
                    result = LocateResult(
                        cell=cell,
                        local=(float(bb[1]), float(bb[2]), float(bb[3])))
                break
            nb = int(mesh.neighbors[cell, k])
            if nb < 0:
                break
            cell = nb
    if result is None:
        result = locate_celltree(tree, mesh, p)
    cache.last_cell = None if result is None else result.cell
    return result


def brute_force_locate(mesh: Union[UniformGrid, RectilinearGrid, TetMesh],
                       p) -> Optional[LocateResult]:
    """Linear-scan oracle returning the lowest-index containing cell.

    Structured grids scan half-open intervals [c_i, c_{i+1}) per axis with
    the exact upper boundary owned by the last interval; tet meshes scan all
    cells in ascending id order.
    """
    p = np.asarray(p, dtype=float)
    if isinstance(mesh, (UniformGrid, RectilinearGrid)):
        idx = []
        frac = []
        for a in range(3):
            coords = mesh.axis_coords(a)
            x = p[a]
            if x < coords[0] or x > coords[-1]:
                return None
            n = len(coords)
            if x == coords[-1]:
                i = n - 2
            else:
                i = 0
                while i < n - 2 and not (coords[i] <= x < coords[i + 1]):
                    i += 1
            idx.append(i)
            frac.append(float((x - coords[i]) / (coords[i + 1] - coords[i])))
        cell = structured_cell_index(mesh, idx[0], idx[1], idx[2])
        return LocateResult(cell=cell, local=(frac[0], frac[1], frac[2]))
    if isinstance(mesh, TetMesh):
        ntet = len(mesh.tets)
        cells = np.arange(ntet, dtype=np.int64)
        bb = B.bary_rows(mesh.vertices, mesh.tets, cells,
                         np.full(ntet, p[0]), np.full(ntet, p[1]),
                         np.full(ntet, p[2]))
        inside = np.nonzero(bb.min(axis=1) >= -EPS_BARY)[0]
        if len(inside) == 0:
            return None
        cell = int(inside[0])
        b = bb[cell]
        return LocateResult(cell=cell,
                            local=(float(b[1]), float(b[2]), float(b[3])))
    raise TypeError(f"unsupported mesh type: {type(mesh).__name__}")
