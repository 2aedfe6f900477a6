"""advectum: a particle advection performance laboratory.

Building blocks for steady-field particle advection (solvers, cell
locators, interpolation, termination, analysis) paired with an analytical
FLOP cost model, a calibration workflow mapping predicted FLOPs to wall
time on the current machine, and an advisor that compares workload cost
against a time budget.
"""

from .backend import BACKENDS, default_backend, resolve_backend
from .mesh import (
    Bounds3, Dataset, MeshError, RectilinearGrid, TetMesh, UniformGrid,
    build_rectilinear, build_tet_mesh, build_uniform, field_velocity,
    load_mesh, sample_analytic_field, save_mesh, tetrahedralize,
)
from .locate import (
    CellTree, LocateResult, WalkCache, brute_force_locate, build_celltree,
    ensure_celltree, locate_celltree, locate_rectilinear, locate_uniform,
    locate_walk,
)
from .evaluate import (
    STRATEGIES, FieldEvaluator, barycentric_coords, evaluate_velocity,
    tet_interpolate, trilinear_interpolate,
)
from .solve import (
    EVALS_PER_STEP, SOLVER_KINDS, SolverConfig, StepResult, StepStatus,
    default_config, euler_step, rk4_step, rkf45_step,
)
from .advect import (
    ANALYZER_KINDS, SEEDING_KINDS, Analyzer, FlowMapOutput, Particle,
    ParticleStatus, TerminationCriteria, Workload, WorkloadResult,
    advance_particle, classify_seed_count, compute_ftle, preset_names,
    run_workload, seed_particles, workload_preset, write_flow_map_csv,
    write_ftle_csv, write_streamlines,
)
from .costmodel import (
    Advice, CalibrationModel, CostConstants, CostEstimate, MESH_TYPES,
    StrategyRecommendation, Suggestion, WorkloadSpec, advise, calibrate,
    estimate_cost, locate_cost, per_step_cost, predict_time,
    recommend_parallel_strategy,
)

__version__ = "0.1.0"

__all__ = [
    "ANALYZER_KINDS", "Advice", "Analyzer", "BACKENDS", "Bounds3",
    "CalibrationModel", "CellTree", "CostConstants", "CostEstimate",
    "Dataset", "EVALS_PER_STEP", "FieldEvaluator", "FlowMapOutput",
    "LocateResult", "MESH_TYPES", "MeshError", "Particle",
    "ParticleStatus", "RectilinearGrid", "SEEDING_KINDS", "SOLVER_KINDS",
    "STRATEGIES", "SolverConfig", "StepResult", "StepStatus",
    "StrategyRecommendation", "Suggestion", "TerminationCriteria",
    "TetMesh", "UniformGrid", "WalkCache", "Workload", "WorkloadResult",
    "WorkloadSpec", "advance_particle", "advise", "barycentric_coords",
    "brute_force_locate", "build_celltree", "build_rectilinear",
    "build_tet_mesh", "build_uniform", "calibrate", "classify_seed_count",
    "compute_ftle", "default_backend", "default_config", "ensure_celltree",
    "estimate_cost", "euler_step", "evaluate_velocity", "field_velocity",
    "load_mesh", "locate_celltree", "locate_cost", "locate_rectilinear",
    "locate_uniform", "locate_walk", "per_step_cost", "predict_time",
    "preset_names", "recommend_parallel_strategy", "resolve_backend",
    "rk4_step", "rkf45_step", "run_workload", "sample_analytic_field",
    "save_mesh", "seed_particles", "tet_interpolate", "tetrahedralize",
    "trilinear_interpolate", "workload_preset", "write_flow_map_csv",
    "write_ftle_csv", "write_streamlines",
]
