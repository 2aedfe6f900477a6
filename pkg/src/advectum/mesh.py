"""Meshes, analytic velocity fields, and dataset construction.

A :class:`Dataset` couples a mesh (uniform grid, rectilinear grid, or
tetrahedral mesh) with one velocity vector per mesh vertex.  Vertices of
structured grids are numbered x-fastest::

    vertex(ix, iy, iz) = ix + nx * (iy + ny * iz)

and flattened cell ids use the same rule with per-axis cell counts.  All
geometry is float64 throughout; velocities must be finite.

Analytic fields are named by small id strings (``circular``, ``saddle``,
``shear``, ``constant(cx,cy,cz)``) so that configs and the CLI can request
them without code.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Union

import numpy as np


class MeshError(ValueError):
    """Invalid mesh input: bad shapes, degenerate cells, broken topology."""


# --------------------------------------------------------------------------
# analytic velocity fields

_CONSTANT_RE = re.compile(
    r"^constant\(\s*([^\s,]+)\s*,\s*([^\s,]+)\s*,\s*([^\s,)]+)\s*\)$"
)


def field_velocity(field_id: str, points: np.ndarray) -> np.ndarray:
    """Evaluate an analytic field at ``points`` (shape ``(n, 3)``)."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise MeshError(f"points must have shape (n, 3), got {pts.shape}")
    x, y = pts[:, 0], pts[:, 1]
    zeros = np.zeros(len(pts))
    if field_id == "circular":
        # rigid rotation about the z axis: v = (-y, x, 0)
        return np.stack([-y, x, zeros], axis=1)
    if field_id == "saddle":
        # stretch along x, compress along y: v = (x, -y, 0)
        return np.stack([x, -y, zeros], axis=1)
    if field_id == "shear":
        # x velocity proportional to y: v = (y, 0, 0)
        return np.stack([y, zeros, zeros], axis=1)
    m = _CONSTANT_RE.match(field_id)
    if m:
        c = np.array([float(m.group(k)) for k in (1, 2, 3)])
        return np.broadcast_to(c, pts.shape).copy()
    raise MeshError(f"unknown analytic field id {field_id!r}")


def sample_analytic_field(field_id: str, p) -> np.ndarray:
    """Evaluate an analytic field at a single point."""
    return field_velocity(field_id, np.asarray(p, dtype=np.float64)[None, :])[0]


# --------------------------------------------------------------------------
# geometry primitives


@dataclass(frozen=True)
class Bounds3:
    """Axis-aligned box; ``min <= max`` componentwise, all finite."""

    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=np.float64).reshape(3).copy()
        hi = np.asarray(self.max, dtype=np.float64).reshape(3).copy()
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise MeshError("bounds must be finite")
        if np.any(lo > hi):
            raise MeshError(f"bounds min {lo} exceeds max {hi}")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    def contains(self, p) -> bool:
        p = np.asarray(p, dtype=np.float64)
        return bool(np.all(p >= self.min) and np.all(p <= self.max))

    def extent(self) -> np.ndarray:
        return self.max - self.min

    def diagonal(self) -> float:
        return float(np.linalg.norm(self.max - self.min))


@dataclass(frozen=True, eq=False)
class UniformGrid:
    """Regular grid: ``origin``, positive ``spacing``, ``dims`` vertices per axis."""

    origin: np.ndarray
    spacing: np.ndarray
    dims: np.ndarray

    kind = "uniform"

    def __post_init__(self):
        origin = np.asarray(self.origin, dtype=np.float64).reshape(3).copy()
        spacing = np.asarray(self.spacing, dtype=np.float64).reshape(3).copy()
        dims = np.asarray(self.dims, dtype=np.int64).reshape(3).copy()
        if np.any(spacing <= 0) or not np.all(np.isfinite(spacing)):
            raise MeshError(f"spacing must be positive, got {spacing}")
        if not np.all(np.isfinite(origin)):
            raise MeshError("origin must be finite")
        if np.any(dims < 2):
            raise MeshError(f"need at least 2 vertices per axis, got dims {dims}")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "dims", dims)

    @property
    def point_count(self) -> int:
        return int(np.prod(self.dims))

    @property
    def cell_dims(self) -> np.ndarray:
        return self.dims - 1

    @property
    def cell_count(self) -> int:
        return int(np.prod(self.dims - 1))

    def bounds(self) -> Bounds3:
        return Bounds3(self.origin, self.origin + self.spacing * (self.dims - 1))

    def axis_coords(self, axis: int) -> np.ndarray:
        return self.origin[axis] + self.spacing[axis] * np.arange(self.dims[axis])

    def point_positions(self) -> np.ndarray:
        return _lattice_points(
            self.axis_coords(0), self.axis_coords(1), self.axis_coords(2)
        )


@dataclass(frozen=True, eq=False)
class RectilinearGrid:
    """Tensor-product grid with strictly increasing per-axis coordinates."""

    coords_x: np.ndarray
    coords_y: np.ndarray
    coords_z: np.ndarray

    kind = "rectilinear"

    def __post_init__(self):
        for name in ("coords_x", "coords_y", "coords_z"):
            c = np.asarray(getattr(self, name), dtype=np.float64).ravel().copy()
            if len(c) < 2:
                raise MeshError(f"{name}: need at least 2 coordinates")
            if not np.all(np.isfinite(c)):
                raise MeshError(f"{name}: coordinates must be finite")
            if np.any(np.diff(c) <= 0):
                raise MeshError(f"{name}: coordinates must be strictly increasing")
            object.__setattr__(self, name, c)

    @property
    def coords(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (self.coords_x, self.coords_y, self.coords_z)

    @property
    def dims(self) -> np.ndarray:
        return np.array(
            [len(self.coords_x), len(self.coords_y), len(self.coords_z)],
            dtype=np.int64,
        )

    @property
    def point_count(self) -> int:
        return int(np.prod(self.dims))

    @property
    def cell_dims(self) -> np.ndarray:
        return self.dims - 1

    @property
    def cell_count(self) -> int:
        return int(np.prod(self.dims - 1))

    def bounds(self) -> Bounds3:
        return Bounds3(
            [self.coords_x[0], self.coords_y[0], self.coords_z[0]],
            [self.coords_x[-1], self.coords_y[-1], self.coords_z[-1]],
        )

    def axis_coords(self, axis: int) -> np.ndarray:
        return self.coords[axis]

    def point_positions(self) -> np.ndarray:
        return _lattice_points(self.coords_x, self.coords_y, self.coords_z)


def _lattice_points(xs, ys, zs) -> np.ndarray:
    """Vertex positions in x-fastest order, shape (nx*ny*nz, 3)."""
    X, Y, Z = np.meshgrid(xs, ys, zs, indexing="ij")
    return np.stack(
        [X.ravel(order="F"), Y.ravel(order="F"), Z.ravel(order="F")], axis=1
    )


@dataclass(frozen=True, eq=False)
class TetMesh:
    """Tetrahedral mesh with face adjacency.

    ``neighbors[t, k]`` is the tet sharing the face opposite vertex ``k`` of
    tet ``t``, or -1 on the boundary.  Tets are stored with positive
    orientation (positive signed volume).
    """

    vertices: np.ndarray
    tets: np.ndarray
    neighbors: np.ndarray

    kind = "unstructured"

    @property
    def point_count(self) -> int:
        return len(self.vertices)

    @property
    def cell_count(self) -> int:
        return len(self.tets)

    def bounds(self) -> Bounds3:
        return Bounds3(self.vertices.min(axis=0), self.vertices.max(axis=0))

    def point_positions(self) -> np.ndarray:
        return self.vertices


def _tet_volumes6(vertices: np.ndarray, tets: np.ndarray) -> np.ndarray:
    """Six times the signed volume of each tet."""
    v0 = vertices[tets[:, 0]]
    e1 = vertices[tets[:, 1]] - v0
    e2 = vertices[tets[:, 2]] - v0
    e3 = vertices[tets[:, 3]] - v0
    return (
        e1[:, 0] * (e2[:, 1] * e3[:, 2] - e2[:, 2] * e3[:, 1])
        - e1[:, 1] * (e2[:, 0] * e3[:, 2] - e2[:, 2] * e3[:, 0])
        + e1[:, 2] * (e2[:, 0] * e3[:, 1] - e2[:, 1] * e3[:, 0])
    )


def build_tet_topology(vertices, tets) -> TetMesh:
    """Validate tets, normalize orientation, and compute face adjacency.

    Raises :class:`MeshError` for out-of-range indices, degenerate cells
    (|volume| below 1e-12 times the cubed bounding-box diagonal), or
    non-manifold faces (any face shared by more than two tets).
    """
    vertices = np.ascontiguousarray(vertices, dtype=np.float64)
    tets = np.ascontiguousarray(tets, dtype=np.int64)
    if vertices.ndim != 2 or vertices.shape[1] != 3:
        raise MeshError(f"vertices must have shape (n, 3), got {vertices.shape}")
    if not np.all(np.isfinite(vertices)):
        raise MeshError("vertices must be finite")
    if tets.ndim != 2 or tets.shape[1] != 4:
        raise MeshError(f"tets must have shape (t, 4), got {tets.shape}")
    if len(tets) == 0:
        raise MeshError("mesh has no tets")
    if tets.min() < 0 or tets.max() >= len(vertices):
        raise MeshError("tet vertex index out of range")

    diag = float(np.linalg.norm(vertices.max(axis=0) - vertices.min(axis=0)))
    eps_vol6 = 6.0 * 1e-12 * diag**3
    vol6 = _tet_volumes6(vertices, tets)
    if np.any(np.abs(vol6) <= eps_vol6):
        bad = int(np.argmin(np.abs(vol6)))
        raise MeshError(f"degenerate tet {bad} (|6V| = {abs(vol6[bad]):.3g})")
    neg = vol6 < 0
    if np.any(neg):
        tets = tets.copy()
        tets[neg, 2], tets[neg, 3] = tets[neg, 3].copy(), tets[neg, 2].copy()

    # face k of a tet is the triple opposite vertex k
    faces = tets[:, [[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]]].reshape(-1, 3)
    faces = np.sort(faces, axis=1)
    order = np.lexsort((faces[:, 2], faces[:, 1], faces[:, 0]))
    fs = faces[order]
    same = np.all(fs[1:] == fs[:-1], axis=1)
    if np.any(same[1:] & same[:-1]):
        raise MeshError("non-manifold mesh: a face is shared by more than two tets")
    neighbors = np.full(len(tets) * 4, -1, dtype=np.int64)
    a = order[:-1][same]
    b = order[1:][same]
    neighbors[a] = b // 4
    neighbors[b] = a // 4
    return TetMesh(vertices, tets, neighbors.reshape(-1, 4))


# --------------------------------------------------------------------------
# datasets

Mesh = Union[UniformGrid, RectilinearGrid, TetMesh]


@dataclass(eq=False)
class Dataset:
    """A mesh plus one velocity vector per vertex.

    Treat as immutable once built; the advection engines share datasets
    across worker threads without copying.
    """

    mesh: Mesh
    velocity: np.ndarray
    bounds: Bounds3
    field_id: str | None = None
    _celltree: object = dc_field(default=None, repr=False, compare=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.velocity, dtype=np.float64)
        if v.shape != (self.mesh.point_count, 3):
            raise MeshError(
                f"velocity shape {v.shape} does not match "
                f"{self.mesh.point_count} mesh vertices"
            )
        if not np.all(np.isfinite(v)):
            raise MeshError("velocity contains non-finite values")
        self.velocity = v

    @property
    def kind(self) -> str:
        return self.mesh.kind

    @property
    def cell_count(self) -> int:
        return self.mesh.cell_count


def _velocities_for(mesh: Mesh, field_id: str | None, velocities) -> np.ndarray:
    if velocities is not None:
        return np.ascontiguousarray(velocities, dtype=np.float64)
    if field_id is None:
        raise MeshError("either a field id or explicit velocities is required")
    return field_velocity(field_id, mesh.point_positions())


def build_uniform(origin, spacing, dims, field: str | None = None,
                  velocities=None) -> Dataset:
    grid = UniformGrid(origin, spacing, dims)
    return Dataset(grid, _velocities_for(grid, field, velocities),
                   grid.bounds(), field_id=field)


def build_rectilinear(coords_x, coords_y, coords_z, field: str | None = None,
                      velocities=None) -> Dataset:
    grid = RectilinearGrid(coords_x, coords_y, coords_z)
    return Dataset(grid, _velocities_for(grid, field, velocities),
                   grid.bounds(), field_id=field)


def build_tet_mesh(vertices, tets, field: str | None = None,
                   velocities=None) -> Dataset:
    mesh = build_tet_topology(vertices, tets)
    return Dataset(mesh, _velocities_for(mesh, field, velocities),
                   mesh.bounds(), field_id=field)


# hex corners in local order: (0,0,0) (1,0,0) (1,1,0) (0,1,0)
#                             (0,0,1) (1,0,1) (1,1,1) (0,1,1)
_HEX_OFFSETS = np.array(
    [(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
     (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)],
    dtype=np.int64,
)
# six tets around the 0-6 body diagonal; adjacent hexes induce matching
# face diagonals, so the subdivision is conforming across the whole grid
_HEX_TO_TETS = np.array(
    [(0, 1, 2, 6), (0, 2, 3, 6), (0, 3, 7, 6),
     (0, 7, 4, 6), (0, 4, 5, 6), (0, 5, 1, 6)],
    dtype=np.int64,
)


def tetrahedralize(source: Dataset | UniformGrid | RectilinearGrid,
                   field: str | None = None) -> Dataset:
    """Split every hex cell of a structured grid into six tets.

    Each hex is cut along its 0-6 body diagonal, producing ``6 * cell_count``
    tets that exactly tile the original volume.  Vertices (and their
    velocities, when ``source`` is a dataset) are carried over unchanged.
    """
    if isinstance(source, Dataset):
        grid = source.mesh
        velocities = source.velocity
        field = source.field_id if field is None else field
    else:
        grid = source
        velocities = None
    if not isinstance(grid, (UniformGrid, RectilinearGrid)):
        raise MeshError(f"cannot tetrahedralize a {type(grid).__name__}")

    nx, ny, nz = (int(d) for d in grid.dims)
    cx, cy, cz = np.meshgrid(
        np.arange(nx - 1), np.arange(ny - 1), np.arange(nz - 1), indexing="ij"
    )
    cx = cx.ravel(order="F")
    cy = cy.ravel(order="F")
    cz = cz.ravel(order="F")
    # vertex ids of the 8 corners of every cell, x-fastest cell order
    corners = np.empty((len(cx), 8), dtype=np.int64)
    for k, (dx, dy, dz) in enumerate(_HEX_OFFSETS):
        corners[:, k] = (cx + dx) + nx * ((cy + dy) + ny * (cz + dz))
    tets = corners[:, _HEX_TO_TETS].reshape(-1, 4)

    if velocities is None and field is None:
        raise MeshError("tetrahedralize of a bare grid requires a field id")
    vel = (velocities if velocities is not None
           else field_velocity(field, grid.point_positions()))
    mesh = build_tet_topology(grid.point_positions(), tets)
    return Dataset(mesh, vel, mesh.bounds(), field_id=field)


# --------------------------------------------------------------------------
# text mesh files
#
# Layout: a "advectum-mesh <kind>" header, the mesh definition, an optional
# "field <id>" metadata line, then one "vx vy vz" line per vertex.  Floats
# are written with repr(), which round-trips float64 exactly, so
# save -> load -> save reproduces the file byte for byte.


def _fmt(x: float) -> str:
    return repr(float(x))


def save_mesh(dataset: Dataset, path) -> None:
    """Write a dataset to the structured-text mesh format."""
    mesh = dataset.mesh
    lines: list[str] = [f"advectum-mesh {mesh.kind}"]
    if isinstance(mesh, UniformGrid):
        lines.append("origin " + " ".join(_fmt(v) for v in mesh.origin))
        lines.append("spacing " + " ".join(_fmt(v) for v in mesh.spacing))
        lines.append("dims " + " ".join(str(int(v)) for v in mesh.dims))
    elif isinstance(mesh, RectilinearGrid):
        for name, coords in zip(("coords_x", "coords_y", "coords_z"), mesh.coords):
            lines.append(
                f"{name} {len(coords)} " + " ".join(_fmt(v) for v in coords)
            )
    elif isinstance(mesh, TetMesh):
        lines.append(f"vertices {len(mesh.vertices)}")
        lines.extend(" ".join(_fmt(v) for v in row) for row in mesh.vertices)
        lines.append(f"tets {len(mesh.tets)}")
        lines.extend(" ".join(str(int(v)) for v in row) for row in mesh.tets)
    else:
        raise MeshError(f"cannot save mesh of type {type(mesh).__name__}")
    lines.append(f"field {dataset.field_id if dataset.field_id else '-'}")
    lines.append(f"velocity {len(dataset.velocity)}")
    lines.extend(" ".join(_fmt(v) for v in row) for row in dataset.velocity)
    Path(path).write_text("\n".join(lines) + "\n")


class _LineReader:
    def __init__(self, path):
        self.path = str(path)
        self.lines = Path(path).read_text().splitlines()
        self.pos = 0

    def next(self) -> str:
        while self.pos < len(self.lines):
            line = self.lines[self.pos].strip()
            self.pos += 1
            if line:
                return line
        raise MeshError(f"{self.path}: unexpected end of file")

    def expect(self, keyword: str) -> list[str]:
        line = self.next()
        parts = line.split()
        if parts[0] != keyword:
            raise MeshError(
                f"{self.path}:{self.pos}: expected {keyword!r}, got {parts[0]!r}"
            )
        return parts[1:]


def load_mesh(path) -> Dataset:
    """Load a dataset written by :func:`save_mesh`."""
    r = _LineReader(path)
    header = r.next().split()
    if len(header) != 2 or header[0] != "advectum-mesh":
        raise MeshError(f"{r.path}: not an advectum mesh file")
    kind = header[1]

    if kind == "uniform":
        origin = [float(v) for v in r.expect("origin")]
        spacing = [float(v) for v in r.expect("spacing")]
        dims = [int(v) for v in r.expect("dims")]
        mesh: Mesh = UniformGrid(origin, spacing, dims)
    elif kind == "rectilinear":
        coords = []
        for name in ("coords_x", "coords_y", "coords_z"):
            parts = r.expect(name)
            n = int(parts[0])
            vals = [float(v) for v in parts[1:]]
            if len(vals) != n:
                raise MeshError(f"{r.path}: {name} declares {n} coords, "
                                f"found {len(vals)}")
            coords.append(vals)
        mesh = RectilinearGrid(*coords)
    elif kind == "unstructured":
        nv = int(r.expect("vertices")[0])
        vertices = np.array(
            [[float(v) for v in r.next().split()] for _ in range(nv)]
        )
        nt = int(r.expect("tets")[0])
        tets = np.array(
            [[int(v) for v in r.next().split()] for _ in range(nt)],
            dtype=np.int64,
        )
        mesh = build_tet_topology(vertices, tets)
    else:
        raise MeshError(f"{r.path}: unknown mesh kind {kind!r}")

    field_parts = r.expect("field")
    field_id = None if field_parts[0] == "-" else field_parts[0]
    nvel = int(r.expect("velocity")[0])
    if nvel != mesh.point_count:
        raise MeshError(
            f"{r.path}: velocity count {nvel} does not match "
            f"{mesh.point_count} vertices"
        )
    velocity = np.array(
        [[float(v) for v in r.next().split()] for _ in range(nvel)]
    )
    return Dataset(mesh, velocity, mesh.bounds(), field_id=field_id)
