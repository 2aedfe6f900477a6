"""The advance loop: seed particles, step them to termination, analyze.

run_workload is the batch entry point.  It partitions particles into
contiguous blocks over a thread pool (particles are independent, so results
are bitwise identical for any thread count) and advances each block with the
selected backend engine.  Wall time is measured around the advection phase
only; dataset construction, seeding, and kernel warmup are excluded.

advance_particle is the single-particle reference loop built from the public
solver steps; it produces the same trajectories as the batch engines.

Termination semantics (shared by both paths):
  * a stage evaluation outside the dataset -> terminated_bounds, no motion;
  * a step landing outside the termination bounds -> terminated_bounds, the
    step is discarded (final positions always lie within bounds);
  * otherwise the step commits, then max_steps is checked before max_time.
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from enum import IntEnum
from pathlib import Path
from typing import Optional

import numpy as np

from . import _batch as B
from .backend import resolve_backend, thread_count_from_env
from .locate import WalkCache, ensure_celltree
from .mesh import Bounds3, Dataset, RectilinearGrid, TetMesh, UniformGrid
from .solve import (
    SolverConfig, StepStatus, default_config, euler_step, rk4_step,
    rkf45_step, solver_code,
)

ANALYZER_KINDS = ("source_dest", "streamline", "flow_map")
SEEDING_KINDS = ("sparse", "packed", "curve")

_TRAJ_BYTES_LIMIT = 4 << 30


class ParticleStatus(IntEnum):
    ACTIVE = 0
    TERMINATED_STEPS = 1
    TERMINATED_BOUNDS = 2
    TERMINATED_TIME = 3


@dataclass
class Particle:
    id: int
    position: np.ndarray
    time: float = 0.0
    steps_taken: int = 0
    status: ParticleStatus = ParticleStatus.ACTIVE
    walk_cache: WalkCache = dc_field(default_factory=WalkCache)

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)


@dataclass
class TerminationCriteria:
    """max_steps always applies; bounds defaults to the dataset extent.

    max_time caps accumulated integration time (sum of h_used), not wall
    clock; None disables it.
    """
    max_steps: int
    bounds: Optional[Bounds3] = None
    max_time: Optional[float] = None

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.max_time is not None and not self.max_time > 0:
            raise ValueError("max_time must be positive when set")


@dataclass
class Workload:
    seeding: str
    particle_count: int
    solver: SolverConfig
    termination: TerminationCriteria
    seed_count_class: Optional[str] = None
    rng_seed: int = 0
    curve_start: Optional[np.ndarray] = None
    curve_end: Optional[np.ndarray] = None
    seed_bounds: Optional[Bounds3] = None

    def __post_init__(self):
        if self.seeding not in SEEDING_KINDS:
            raise ValueError(f"unknown seeding kind {self.seeding!r}")
        if self.particle_count < 0:
            raise ValueError("particle_count must be >= 0")
        if self.seed_count_class is not None \
                and self.seed_count_class not in ("small", "medium", "large"):
            raise ValueError(
                f"unknown seed count class {self.seed_count_class!r}")


def classify_seed_count(particle_count: int, cell_count: int) -> str:
    """Band of the seed-count scale: small <= 1/1K cells, large >= 1/cell."""
    if particle_count * 1000 <= cell_count:
        return "small"
    if particle_count >= cell_count:
        return "large"
    return "medium"


def _seed_positions(workload: Workload, dataset: Dataset):
    """Returns (positions, lattice_dims, lattice_spacing).

    lattice_dims/spacing are set for packed seeding only; packed rounds the
    requested count to the nearest cube n^3 and fills the seed box with an
    n x n x n lattice at sub-box cell centers.
    """
    box = workload.seed_bounds if workload.seed_bounds is not None \
        else dataset.bounds
    pc = workload.particle_count
    if pc == 0:
        return np.zeros((0, 3)), None, None
    if workload.seeding == "sparse":
        rng = np.random.Generator(np.random.Philox(key=workload.rng_seed))
        u = rng.random((pc, 3))
        return box.min + u * box.extent(), None, None
    if workload.seeding == "packed":
        n = max(1, int(round(pc ** (1.0 / 3.0))))
        # snap to the closer of the two candidate cubes
        if abs((n + 1) ** 3 - pc) < abs(n ** 3 - pc):
            n += 1
        spacing = box.extent() / n
        axes = [box.min[a] + (np.arange(n) + 0.5) * spacing[a]
                for a in range(3)]
        X, Y, Z = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([X.ravel(order="F"), Y.ravel(order="F"),
                        Z.ravel(order="F")], axis=1)
        return pts, (n, n, n), spacing
    if workload.curve_start is None or workload.curve_end is None:
        raise ValueError("curve seeding requires curve_start and curve_end")
    a = np.asarray(workload.curve_start, dtype=float).reshape(3)
    b = np.asarray(workload.curve_end, dtype=float).reshape(3)
    t = np.linspace(0.0, 1.0, pc).reshape(-1, 1)
    return a + t * (b - a), None, None


def seed_particles(workload: Workload, dataset: Dataset) -> list[Particle]:
    """Deterministic seed placement per the workload's seeding kind."""
    if workload.seed_count_class is not None:
        actual = classify_seed_count(workload.particle_count,
                                     dataset.cell_count)
        if actual != workload.seed_count_class:
            raise ValueError(
                f"{workload.particle_count} particles on "
                f"{dataset.cell_count} cells is a {actual!r} workload, "
                f"not {workload.seed_count_class!r}")
    pts, _, _ = _seed_positions(workload, dataset)
    return [Particle(id=i, position=pts[i]) for i in range(len(pts))]


class Analyzer:
    """Per-step observer; storage depends on kind.

    source_dest keeps nothing (final positions live on the particles);
    streamline records one polyline vertex per committed step; flow_map maps
    each seed to its end state.
    """

    def __init__(self, kind: str):
        if kind not in ANALYZER_KINDS:
            raise ValueError(f"unknown analyzer kind {kind!r}")
        self.kind = kind
        self.polylines: dict[int, list[tuple]] = {}
        self.entries: dict[int, tuple] = {}
        self._seeds: dict[int, np.ndarray] = {}

    def start(self, particle: Particle) -> None:
        if self.kind == "streamline":
            x, y, z = particle.position
            self.polylines[particle.id] = [(x, y, z, particle.time)]
        elif self.kind == "flow_map":
            self._seeds[particle.id] = particle.position.copy()

    def observe(self, particle: Particle) -> None:
        if self.kind == "streamline":
            x, y, z = particle.position
            self.polylines[particle.id].append((x, y, z, particle.time))

    def finish(self, particle: Particle) -> None:
        if self.kind == "flow_map":
            self.entries[particle.id] = (
                self._seeds[particle.id], particle.position.copy(),
                particle.time)


def advance_particle(dataset: Dataset, evaluator, cfg: SolverConfig,
                     analyzer: Optional[Analyzer],
                     term: TerminationCriteria,
                     particle: Particle) -> Particle:
    """Step -> analyze -> terminate-check, repeated until termination."""
    if particle.status != ParticleStatus.ACTIVE:
        raise ValueError(f"particle {particle.id} is already terminated")
    bounds = term.bounds if term.bounds is not None else dataset.bounds
    h_try = min(max(cfg.h, cfg.h_min), cfg.h_max)
    if getattr(evaluator, "strategy", None) == "celltree+walk":
        evaluator.cache = particle.walk_cache
    if analyzer is not None:
        analyzer.start(particle)
    while particle.status == ParticleStatus.ACTIVE:
        if cfg.kind == "euler":
            res = euler_step(evaluator, particle.position, cfg.h)
        elif cfg.kind == "rk4":
            res = rk4_step(evaluator, particle.position, cfg.h)
        else:
            res = rkf45_step(evaluator, particle.position, cfg, h_try)
        if res.status is not StepStatus.OK:
            particle.status = ParticleStatus.TERMINATED_BOUNDS
            break
        landing = res.new_position
        if not bounds.contains(landing):
            particle.status = ParticleStatus.TERMINATED_BOUNDS
            break
        particle.position = landing
        particle.time += res.h_used
        particle.steps_taken += 1
        if res.h_next is not None:
            h_try = res.h_next
        if analyzer is not None:
            analyzer.observe(particle)
        if particle.steps_taken >= term.max_steps:
            particle.status = ParticleStatus.TERMINATED_STEPS
        elif term.max_time is not None and particle.time >= term.max_time:
            particle.status = ParticleStatus.TERMINATED_TIME
    if analyzer is not None:
        analyzer.finish(particle)
    return particle


@dataclass
class FlowMapOutput:
    """Seed -> end mapping, with lattice metadata when packed-seeded."""
    seeds: np.ndarray
    ends: np.ndarray
    times: np.ndarray
    statuses: np.ndarray
    lattice_dims: Optional[tuple] = None
    spacing: Optional[np.ndarray] = None


@dataclass
class WorkloadResult:
    particles: list[Particle]
    total_steps: int
    step_counts: np.ndarray
    locate_count: int
    interp_count: int
    wall_seconds: float
    analyzer_kind: str
    thread_count: int
    backend: str
    streamlines: Optional[list[np.ndarray]] = None
    flow_map: Optional[FlowMapOutput] = None


def _block_ranges(n: int, workers: int) -> list[tuple]:
    block = (n + workers - 1) // workers
    return [(s, min(s + block, n))
            for s in range(0, n, block)] if n else []


def run_workload(dataset: Dataset, workload: Workload,
                 analyzer_kind: str = "source_dest",
                 thread_count: Optional[int] = None,
                 backend: Optional[str] = None,
                 locator: str = "auto") -> WorkloadResult:
    """Advance a whole workload to termination.

    locator selects the unstructured strategy: "celltree+walk" (default via
    "auto") exploits step-to-step coherence, "celltree" resolves every
    evaluation through the tree alone.  Structured meshes ignore it.
    Results are independent of thread_count and backend; wall_seconds covers
    the advection phase only.
    """
    if analyzer_kind not in ANALYZER_KINDS:
        raise ValueError(f"unknown analyzer kind {analyzer_kind!r}")
    if locator not in ("auto", "celltree", "celltree+walk"):
        raise ValueError(f"unknown locator {locator!r}")
    if thread_count is None:
        thread_count = thread_count_from_env()
    if thread_count < 1:
        raise ValueError("thread_count must be >= 1")
    chosen = resolve_backend(backend)

    if workload.seed_count_class is not None:
        actual = classify_seed_count(workload.particle_count,
                                     dataset.cell_count)
        if actual != workload.seed_count_class:
            raise ValueError(
                f"{workload.particle_count} particles on "
                f"{dataset.cell_count} cells is a {actual!r} workload, "
                f"not {workload.seed_count_class!r}")

    seeds, lattice_dims, lattice_spacing = _seed_positions(workload, dataset)
    n = len(seeds)
    cfg = workload.solver
    term = workload.termination
    bounds = term.bounds if term.bounds is not None else dataset.bounds
    max_steps = int(term.max_steps)
    max_time = -1.0 if term.max_time is None else float(term.max_time)
    skind = solver_code(cfg.kind)
    h_init = min(max(cfg.h, cfg.h_min), cfg.h_max) if cfg.kind == "rkf45" \
        else cfg.h

    pos = np.ascontiguousarray(seeds, dtype=np.float64).copy()
    tim = np.zeros(n)
    steps = np.zeros(n, dtype=np.int64)
    status = np.zeros(n, dtype=np.int64)
    h_carry = np.full(n, float(h_init))
    loc_n = np.zeros(n, dtype=np.int64)
    itp_n = np.zeros(n, dtype=np.int64)
    cache = np.full(n, -1, dtype=np.int64)

    store_traj = analyzer_kind == "streamline"
    if store_traj:
        need = n * (max_steps + 1) * 4 * 8
        if need > _TRAJ_BYTES_LIMIT:
            raise ValueError(
                f"streamline storage would need {need / 2**30:.1f} GiB; "
                "reduce particle_count or max_steps")
        traj = np.zeros((max(n, 1), max_steps + 1, 4))
        if n:
            traj[:, 0, 0] = pos[:, 0]
            traj[:, 0, 1] = pos[:, 1]
            traj[:, 0, 2] = pos[:, 2]
            traj[:, 0, 3] = 0.0
    else:
        traj = np.zeros((1, 1, 4))

    mesh = dataset.mesh
    vel = dataset.velocity
    dmin = dataset.bounds.min
    dmax = dataset.bounds.max
    tmin = np.asarray(bounds.min, dtype=np.float64)
    tmax = np.asarray(bounds.max, dtype=np.float64)
    use_walk = locator != "celltree"

    if isinstance(mesh, (UniformGrid, RectilinearGrid)):
        is_rect = isinstance(mesh, RectilinearGrid)
        dims = np.asarray(mesh.dims, dtype=np.int64)
        if is_rect:
            origin = np.zeros(3)
            spacing = np.ones(3)
            cx, cy, cz = (np.ascontiguousarray(c, dtype=np.float64)
                          for c in mesh.coords)
        else:
            origin = np.asarray(mesh.origin, dtype=np.float64)
            spacing = np.asarray(mesh.spacing, dtype=np.float64)
            cx = cy = cz = np.zeros(1)

        if chosen == "numba":
            from . import _kernels as K

            def run_range(start: int, stop: int) -> None:
                K.advance_structured(
                    pos, tim, steps, status, h_carry, loc_n, itp_n, traj,
                    start, stop, is_rect, origin, spacing, dims, cx, cy, cz,
                    dmin, dmax, vel, skind, float(cfg.h), float(cfg.tol),
                    float(cfg.h_min), float(cfg.h_max), max_steps, max_time,
                    tmin, tmax, store_traj)
        else:
            evalf = B.make_structured_eval(is_rect, origin, spacing, dims,
                                           cx, cy, cz, dmin, dmax, vel)

            def run_range(start: int, stop: int) -> None:
                B.advance_rows(
                    evalf, pos, tim, steps, status, h_carry, loc_n, itp_n,
                    traj, start, stop, skind, float(cfg.h), float(cfg.tol),
                    float(cfg.h_min), float(cfg.h_max), max_steps, max_time,
                    tmin, tmax, store_traj)
    elif isinstance(mesh, TetMesh):
        tree = ensure_celltree(dataset)
        if chosen == "numba":
            from . import _kernels as K

            def run_range(start: int, stop: int) -> None:
                K.advance_tet(
                    pos, tim, steps, status, h_carry, cache, loc_n, itp_n,
                    traj, start, stop, use_walk,
                    tree.axis, tree.lmax, tree.rmin, tree.left, tree.start,
                    tree.count, tree.cells, mesh.vertices, mesh.tets,
                    mesh.neighbors, vel, dmin, dmax, skind, float(cfg.h),
                    float(cfg.tol), float(cfg.h_min), float(cfg.h_max),
                    max_steps, max_time, tmin, tmax, store_traj)
        else:
            evalf = B.make_tet_eval(cache, use_walk, tree, mesh.vertices,
                                    mesh.tets, mesh.neighbors, vel,
                                    dmin, dmax)

            def run_range(start: int, stop: int) -> None:
                B.advance_rows(
                    evalf, pos, tim, steps, status, h_carry, loc_n, itp_n,
                    traj, start, stop, skind, float(cfg.h), float(cfg.tol),
                    float(cfg.h_min), float(cfg.h_max), max_steps, max_time,
                    tmin, tmax, store_traj)
    else:
        raise TypeError(f"unsupported mesh type {type(mesh).__name__}")

    run_range(0, 0)  # warm the kernel (numba compiles here, outside timing)

    ranges = _block_ranges(n, thread_count)
    t0 = time.perf_counter()
    if thread_count == 1 or len(ranges) <= 1:
        for start, stop in ranges:
            run_range(start, stop)
    else:
        with ThreadPoolExecutor(max_workers=thread_count) as pool:
            futures = [pool.submit(run_range, start, stop)
                       for start, stop in ranges]
            for fut in futures:
                fut.result()
    wall = time.perf_counter() - t0

    particles = []
    for i in range(n):
        wc = WalkCache(int(cache[i]) if cache[i] >= 0 else None)
        particles.append(Particle(
            id=i, position=pos[i].copy(), time=float(tim[i]),
            steps_taken=int(steps[i]),
            status=ParticleStatus(int(status[i])), walk_cache=wc))

    streamlines = None
    if store_traj:
        streamlines = [traj[i, :steps[i] + 1].copy() for i in range(n)]
    flow_map = None
    if analyzer_kind == "flow_map":
        flow_map = FlowMapOutput(
            seeds=seeds.copy(), ends=pos.copy(), times=tim.copy(),
            statuses=status.copy(), lattice_dims=lattice_dims,
            spacing=lattice_spacing)

    return WorkloadResult(
        particles=particles,
        total_steps=int(steps.sum()),
        step_counts=steps.copy(),
        locate_count=int(loc_n.sum()),
        interp_count=int(itp_n.sum()),
        wall_seconds=wall,
        analyzer_kind=analyzer_kind,
        thread_count=thread_count,
        backend=chosen,
        streamlines=streamlines,
        flow_map=flow_map,
    )


# --------------------------------------------------------------------------
# flow-map post-processing


def compute_ftle(flow_map: FlowMapOutput, horizon: float,
                 spacing=None) -> np.ndarray:
    """Finite-time Lyapunov exponent field over a lattice flow map.

    The flow-map Jacobian F is formed as I + the central-difference gradient
    of the displacement field (ends - seeds), so an identity flow map gives
    exactly zero.  Returns an array indexed [iz, iy, ix]; boundary entries
    (no central difference available) are NaN.
    """
    if flow_map.lattice_dims is None:
        raise ValueError("FTLE needs a flow map seeded on a packed lattice")
    if horizon == 0:
        raise ValueError("horizon must be nonzero")
    n0, n1, n2 = flow_map.lattice_dims
    if min(n0, n1, n2) < 3:
        raise ValueError("FTLE lattice needs at least 3 seeds per axis")
    sp = np.asarray(spacing if spacing is not None else flow_map.spacing,
                    dtype=float).reshape(3)
    shape = (n2, n1, n0)
    seeds = flow_map.seeds.reshape(*shape, 3)
    ends = flow_map.ends.reshape(*shape, 3)
    disp = ends - seeds

    jac = np.zeros((*shape, 3, 3))
    for a in range(3):
        gz, gy, gx = np.gradient(disp[..., a], sp[2], sp[1], sp[0])
        jac[..., a, 0] = gx
        jac[..., a, 1] = gy
        jac[..., a, 2] = gz
    f = jac
    f[..., 0, 0] += 1.0
    f[..., 1, 1] += 1.0
    f[..., 2, 2] += 1.0
    c = np.einsum("...ki,...kj->...ij", f, f)
    lam = np.linalg.eigvalsh(c)[..., 2]
    ftle = np.log(lam) / (2.0 * abs(horizon))
    ftle[0, :, :] = np.nan
    ftle[-1, :, :] = np.nan
    ftle[:, 0, :] = np.nan
    ftle[:, -1, :] = np.nan
    ftle[:, :, 0] = np.nan
    ftle[:, :, -1] = np.nan
    return ftle


# --------------------------------------------------------------------------
# workload presets
#
# Seed-count classes relative to the mesh cell count: small is one seed per
# thousand cells, medium one per hundred, large one per cell.  Step classes:
# small 100, medium 1000, large 10000.

_SEED_DIVISOR = {"small": 1000, "medium": 100, "large": 1}
_STEP_COUNT = {"small": 100, "medium": 1000, "large": 10000}
_PRESET_ALIASES = {
    "streamlines": ("sparse", "small", "large"),
    "streamsurface": ("curve", "medium", "large"),
    "ftle": ("packed", "large", "small"),
    "packed-large-steps": ("packed", "large", "large"),
}


def preset_names() -> list[str]:
    return sorted(_PRESET_ALIASES)


def workload_preset(name: str, dataset: Dataset,
                    solver: Optional[SolverConfig] = None,
                    rng_seed: int = 0, curve_start=None,
                    curve_end=None) -> Workload:
    """A Workload from a named preset or a "seeding-seeds-steps" triple.

    Application presets: streamlines (sparse/small/large), streamsurface
    (curve/medium/large), ftle (packed/large/small).  Generic names combine
    a seeding kind with seed and step classes, e.g. "packed-medium-large".
    """
    if name in _PRESET_ALIASES:
        seeding, seed_class, step_class = _PRESET_ALIASES[name]
    else:
        parts = name.split("-")
        if len(parts) != 3 or parts[0] not in SEEDING_KINDS \
                or parts[1] not in _SEED_DIVISOR or parts[2] not in _STEP_COUNT:
            raise ValueError(
                f"unknown preset {name!r}; use one of {preset_names()} or "
                "a seeding-seeds-steps triple like 'packed-medium-large'")
        seeding, seed_class, step_class = parts
    cells = dataset.cell_count
    pc = max(1, cells // _SEED_DIVISOR[seed_class])
    if solver is None:
        solver = default_config(dataset, "rk4")
    if seeding == "curve" and curve_start is None:
        lo = dataset.bounds.min
        ext = dataset.bounds.extent()
        mid = 0.5 * (dataset.bounds.min + dataset.bounds.max)
        curve_start = np.array([lo[0] + 0.05 * ext[0], mid[1], mid[2]])
        curve_end = np.array([lo[0] + 0.95 * ext[0], mid[1], mid[2]])
    return Workload(
        seeding=seeding,
        particle_count=pc,
        solver=solver,
        termination=TerminationCriteria(max_steps=_STEP_COUNT[step_class]),
        seed_count_class=seed_class,
        rng_seed=rng_seed,
        curve_start=curve_start,
        curve_end=curve_end,
    )


# --------------------------------------------------------------------------
# output writers


def write_streamlines(path, result: WorkloadResult) -> None:
    """Plain-text polylines: a "particle <id>" line, then "x y z t" rows."""
    if result.streamlines is None:
        raise ValueError("result has no streamline storage")
    lines = []
    for particle, poly in zip(result.particles, result.streamlines):
        lines.append(f"particle {particle.id}")
        for row in poly:
            lines.append(" ".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def write_flow_map_csv(path, flow_map: FlowMapOutput) -> None:
    lines = ["seed_x,seed_y,seed_z,end_x,end_y,end_z,time"]
    for s, e, t in zip(flow_map.seeds, flow_map.ends, flow_map.times):
        lines.append(",".join(repr(float(v)) for v in (*s, *e, t)))
    Path(path).write_text("\n".join(lines) + "\n")


def write_ftle_csv(path, flow_map: FlowMapOutput, ftle: np.ndarray) -> None:
    """One row per lattice seed: indices, position, exponent (nan on edges)."""
    if flow_map.lattice_dims is None:
        raise ValueError("flow map has no lattice metadata")
    n0, n1, n2 = flow_map.lattice_dims
    lines = ["ix,iy,iz,x,y,z,ftle"]
    seeds = flow_map.seeds
    k = 0
    for iz in range(n2):
        for iy in range(n1):
            for ix in range(n0):
                x, y, z = seeds[k]
                v = ftle[iz, iy, ix]
                lines.append(
                    f"{ix},{iy},{iz},{x!r},{y!r},{z!r},{float(v)!r}")
                k += 1
    Path(path).write_text("\n".join(lines) + "\n")
