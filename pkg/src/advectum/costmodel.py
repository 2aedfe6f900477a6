"""Analytical FLOP cost model, calibration to wall time, and the advisor.

The per-step cost of one particle is

    solve + K * (locate + interp) + analyze + terminate

with K velocity evaluations per step (1 for Euler, 4 for RK4, 6 for the
adaptive embedded pair), and a whole workload costs particles * steps of
that.  The constants live in CostConstants; the defaults are the published
per-component counts for a d=50 cubed grid, with location cost given by
closed formulas in d so the model tracks resolution.

Predicted FLOPs become predicted seconds through a per-machine least-squares
line fitted by calibrate(); advise() compares the prediction against a time
budget and proposes cheaper re-specifications when it does not fit.
"""
from __future__ import annotations

import json
import math
import os
import platform
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Optional

from .solve import EVALS_PER_STEP, SOLVER_KINDS

MESH_TYPES = ("uniform", "rectilinear", "unstructured")

# Per-eval interpolation cost and per-step solver arithmetic, counted
# statically from the kernels: weighted corner/vertex blends for interp,
# stage combinations for the fixed-step solvers.  The adaptive-pair solve
# cost covers one accepted attempt (6 stage position builds, both embedded
# solutions, the error norm, and the step-size update).
_DEFAULT_SOLVE = {"euler": 6.0, "rk4": 37.0, "rkf45": 178.0}
_DEFAULT_INTERP = {"uniform": 15.0, "rectilinear": 15.0, "unstructured": 35.0}
_DEFAULT_TERMINATE = 5.0
_DEFAULT_ANALYZE = 0.0
_DEFAULT_D = 50

STRATEGY_OVER_DATA = "parallelize-over-data"
STRATEGY_OVER_PARTICLES = "parallelize-over-particles"
STRATEGY_MIXED = "mixed"


def locate_cost(mesh_type: str, d: int) -> float:
    """Cell-location FLOPs per evaluation on a d^3 mesh.

    uniform: 15 (index arithmetic, independent of d);
    rectilinear: ceil(3 * log2(d)), three per-axis binary searches;
    unstructured: ceil(10 * log2(d^3)) + 748, a tree descent over d^3 cells
    at 10 FLOPs per level plus two 374-FLOP containment iterations.
    Log base 2 with an outer ceiling: the unique simple reading that
    reproduces the published values 17 and 918 at d=50.
    """
    if d < 2:
        raise ValueError(f"resolution d={d}: need at least 2 points per axis")
    if mesh_type == "uniform":
        return 15.0
    if mesh_type == "rectilinear":
        return float(math.ceil(3.0 * math.log2(d)))
    if mesh_type == "unstructured":
        return float(math.ceil(10.0 * math.log2(float(d) ** 3)) + 748)
    raise ValueError(f"unknown mesh type {mesh_type!r}: "
                     f"expected one of {MESH_TYPES}")


@dataclass(frozen=True)
class CostConstants:
    """Per-component FLOP counts; defaults are the published d=50 table.

    locate_override pins specific mesh types to fixed costs; other types use
    the closed formulas evaluated at this resolution d.
    """
    solve: dict = dc_field(default_factory=lambda: dict(_DEFAULT_SOLVE))
    interp: dict = dc_field(default_factory=lambda: dict(_DEFAULT_INTERP))
    terminate: float = _DEFAULT_TERMINATE
    analyze: float = _DEFAULT_ANALYZE
    d: int = _DEFAULT_D
    locate_override: Optional[dict] = None

    def __post_init__(self):
        if self.d < 2:
            raise ValueError("d must be >= 2")
        for kind in self.solve:
            if kind not in SOLVER_KINDS:
                raise ValueError(f"unknown solver kind {kind!r} in solve")
        for mt in self.interp:
            if mt not in MESH_TYPES:
                raise ValueError(f"unknown mesh type {mt!r} in interp")
        values = list(self.solve.values()) + list(self.interp.values()) \
            + [self.terminate, self.analyze]
        if self.locate_override is not None:
            for mt in self.locate_override:
                if mt not in MESH_TYPES:
                    raise ValueError(
                        f"unknown mesh type {mt!r} in locate_override")
            values += list(self.locate_override.values())
        if any(v < 0 for v in values):
            raise ValueError("cost constants must be >= 0")

    def locate(self, mesh_type: str) -> float:
        if self.locate_override and mesh_type in self.locate_override:
            if mesh_type not in MESH_TYPES:
                raise ValueError(f"unknown mesh type {mesh_type!r}")
            return float(self.locate_override[mesh_type])
        return locate_cost(mesh_type, self.d)

    def to_dict(self) -> dict:
        out = {
            "d": self.d,
            "solve": dict(self.solve),
            "interp": dict(self.interp),
            "terminate": self.terminate,
            "analyze": self.analyze,
        }
        if self.locate_override is not None:
            out["locate"] = dict(self.locate_override)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "CostConstants":
        known = {"d", "solve", "interp", "terminate", "analyze", "locate"}
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown cost constant keys {sorted(extra)}")
        base = cls()
        return cls(
            solve={**base.solve, **data.get("solve", {})},
            interp={**base.interp, **data.get("interp", {})},
            terminate=float(data.get("terminate", base.terminate)),
            analyze=float(data.get("analyze", base.analyze)),
            d=int(data.get("d", base.d)),
            locate_override=dict(data["locate"]) if "locate" in data
            else None,
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "CostConstants":
        return cls.from_dict(json.loads(Path(path).read_text()))


def per_step_cost(constants: CostConstants, solver: str, mesh_type: str,
                  analyze: Optional[float] = None) -> float:
    """FLOPs for one advection step of one particle."""
    if solver not in SOLVER_KINDS:
        raise ValueError(f"unknown solver kind {solver!r}")
    if mesh_type not in MESH_TYPES:
        raise ValueError(f"unknown mesh type {mesh_type!r}: "
                         f"expected one of {MESH_TYPES}")
    k = EVALS_PER_STEP[solver]
    a = constants.analyze if analyze is None else float(analyze)
    return (constants.solve[solver]
            + k * (constants.locate(mesh_type) + constants.interp[mesh_type])
            + a + constants.terminate)


@dataclass(frozen=True)
class WorkloadSpec:
    """What the model needs to know about a workload: P, N (or per-particle
    N_i), solver, and mesh type.  K follows from the solver."""
    particle_count: int
    solver: str
    mesh_type: str
    steps: Optional[int] = None
    steps_list: Optional[tuple] = None

    def __post_init__(self):
        if self.particle_count < 0:
            raise ValueError("particle_count must be >= 0")
        if self.solver not in SOLVER_KINDS:
            raise ValueError(f"unknown solver kind {self.solver!r}")
        if self.mesh_type not in MESH_TYPES:
            raise ValueError(f"unknown mesh type {self.mesh_type!r}")
        if (self.steps is None) == (self.steps_list is None):
            raise ValueError("provide exactly one of steps or steps_list")
        if self.steps is not None and self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.steps_list is not None:
            object.__setattr__(self, "steps_list",
                               tuple(int(n) for n in self.steps_list))
            if len(self.steps_list) != self.particle_count:
                raise ValueError(
                    f"steps_list has {len(self.steps_list)} entries for "
                    f"{self.particle_count} particles")
            if any(n < 0 for n in self.steps_list):
                raise ValueError("per-particle step counts must be >= 0")

    @property
    def evals_per_step(self) -> int:
        return EVALS_PER_STEP[self.solver]

    @property
    def total_steps(self) -> int:
        if self.steps is not None:
            return self.particle_count * self.steps
        return sum(self.steps_list)

    def replace(self, **kw) -> "WorkloadSpec":
        base = {
            "particle_count": self.particle_count,
            "solver": self.solver,
            "mesh_type": self.mesh_type,
            "steps": self.steps,
            "steps_list": self.steps_list,
        }
        base.update(kw)
        return WorkloadSpec(**base)


BREAKDOWN_FIELDS = ("solve", "locate", "interp", "analyze", "terminate")


@dataclass(frozen=True)
class CostEstimate:
    total_flop: float
    breakdown: dict

    def __post_init__(self):
        missing = set(BREAKDOWN_FIELDS) - set(self.breakdown)
        if missing:
            raise ValueError(f"breakdown missing fields {sorted(missing)}")
        s = sum(self.breakdown.values())
        scale = max(abs(self.total_flop), abs(s), 1.0)
        if abs(s - self.total_flop) > 1e-9 * scale:
            raise ValueError(
                f"breakdown sums to {s!r}, total is {self.total_flop!r}")


def estimate_cost(spec: WorkloadSpec,
                  constants: Optional[CostConstants] = None,
                  analyze: Optional[float] = None) -> CostEstimate:
    """Total workload FLOPs: (sum of steps over particles) * per-step cost,
    with a per-component breakdown."""
    c = constants if constants is not None else CostConstants()
    a = c.analyze if analyze is None else float(analyze)
    w = float(spec.total_steps)
    k = spec.evals_per_step
    breakdown = {
        "solve": w * c.solve[spec.solver],
        "locate": w * k * c.locate(spec.mesh_type),
        "interp": w * k * c.interp[spec.mesh_type],
        "analyze": w * a,
        "terminate": w * c.terminate,
    }
    return CostEstimate(total_flop=sum(breakdown.values()),
                        breakdown=breakdown)


# --------------------------------------------------------------------------
# calibration


@dataclass(frozen=True)
class CalibrationModel:
    """Least-squares line mapping predicted FLOPs to seconds on one machine."""
    m: float
    b: float
    r_squared: float
    sample_count: int
    machine: str = ""

    def __post_init__(self):
        if not self.m > 0:
            raise ValueError("calibration slope must be positive")
        if not 0.0 <= self.r_squared <= 1.0:
            raise ValueError("r_squared must lie in [0, 1]")
        if self.sample_count < 3:
            raise ValueError("a calibration needs at least 3 samples")

    def to_dict(self) -> dict:
        return {"m": self.m, "b": self.b, "r_squared": self.r_squared,
                "sample_count": self.sample_count, "machine": self.machine}

    @classmethod
    def from_dict(cls, data: dict) -> "CalibrationModel":
        return cls(m=float(data["m"]), b=float(data["b"]),
                   r_squared=float(data["r_squared"]),
                   sample_count=int(data["sample_count"]),
                   machine=str(data.get("machine", "")))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "CalibrationModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def calibrate(samples, machine: Optional[str] = None) -> CalibrationModel:
    """Ordinary least squares over (predicted_flop, measured_seconds) pairs.

    Requires at least 3 samples with distinct FLOP values and rejects fits
    whose slope is not positive (more work must cost more time for the model
    to be usable).
    """
    pairs = [(float(f), float(t)) for f, t in samples]
    if len({f for f, _ in pairs}) < 3:
        raise ValueError(
            "calibration needs >= 3 samples with distinct predicted_flop")
    n = len(pairs)
    sx = sum(f for f, _ in pairs)
    sy = sum(t for _, t in pairs)
    mx = sx / n
    my = sy / n
    sxx = sum((f - mx) ** 2 for f, _ in pairs)
    sxy = sum((f - mx) * (t - my) for f, t in pairs)
    m = sxy / sxx
    if not m > 0:
        raise ValueError(
            f"calibration slope {m!r} is not positive; measured times do "
            "not grow with predicted work")
    b = my - m * mx
    ss_res = sum((t - (m * f + b)) ** 2 for f, t in pairs)
    ss_tot = sum((t - my) ** 2 for _, t in pairs)
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    r2 = min(max(r2, 0.0), 1.0)
    if machine is None:
        machine = platform.node()
    return CalibrationModel(m=m, b=b, r_squared=r2, sample_count=n,
                            machine=machine)


def predict_time(model: CalibrationModel, flops: float) -> float:
    """Predicted seconds for a FLOP count, floored at zero."""
    return max(model.m * float(flops) + model.b, 0.0)


# --------------------------------------------------------------------------
# advisory workflow


_VOTES = {
    "dataset_size": {"large": STRATEGY_OVER_DATA,
                     "small": STRATEGY_OVER_PARTICLES},
    "particle_count": {"small": STRATEGY_OVER_DATA,
                       "large": STRATEGY_OVER_PARTICLES},
    "seed_distribution": {"sparse": STRATEGY_OVER_DATA,
                          "dense": STRATEGY_OVER_PARTICLES},
    # critical points starve over-data (imbalance where particles cluster);
    # a circular field starves over-particles (unbounded per-particle work);
    # a benign field constrains neither.
    "field_complexity": {"critical_points": STRATEGY_OVER_PARTICLES,
                         "circular": STRATEGY_OVER_DATA,
                         "benign": None},
}


@dataclass(frozen=True)
class StrategyRecommendation:
    strategy: str
    votes: dict
    conflicts: tuple


def recommend_parallel_strategy(dataset_size: str, particle_count: str,
                                seed_distribution: str,
                                field_complexity: str
                                ) -> StrategyRecommendation:
    """Majority vote over the four workload factors.

    Each factor votes for one strategy (a benign field abstains); the
    minority factors are reported as conflicts.  A tie yields "mixed" with
    every voting factor listed as conflicting.
    """
    settings = {
        "dataset_size": dataset_size,
        "particle_count": particle_count,
        "seed_distribution": seed_distribution,
        "field_complexity": field_complexity,
    }
    votes = {}
    for factor, setting in settings.items():
        table = _VOTES[factor]
        if setting not in table:
            raise ValueError(
                f"{factor}={setting!r}: expected one of {sorted(table)}")
        votes[factor] = table[setting]
    over_data = [f for f, v in votes.items() if v == STRATEGY_OVER_DATA]
    over_part = [f for f, v in votes.items() if v == STRATEGY_OVER_PARTICLES]
    if len(over_data) > len(over_part):
        strategy, conflicts = STRATEGY_OVER_DATA, over_part
    elif len(over_part) > len(over_data):
        strategy, conflicts = STRATEGY_OVER_PARTICLES, over_data
    else:
        strategy, conflicts = STRATEGY_MIXED, over_data + over_part
    ordered = tuple(f for f in settings if f in conflicts)
    return StrategyRecommendation(strategy=strategy, votes=votes,
                                  conflicts=ordered)


@dataclass(frozen=True)
class Suggestion:
    """One re-specification that brings the workload inside the budget."""
    kind: str
    description: str
    predicted_seconds: float
    total_flop: float
    spec: Optional[WorkloadSpec] = None
    thread_count: Optional[int] = None


@dataclass(frozen=True)
class Advice:
    predicted_seconds: float
    within_budget: bool
    total_flop: float
    budget_seconds: float
    suggestions: tuple
    strategy: Optional[StrategyRecommendation] = None


def advise(spec: WorkloadSpec, budget_seconds: float,
           model: CalibrationModel, hints: Optional[dict] = None,
           constants: Optional[CostConstants] = None) -> Advice:
    """Estimate, predict, compare to budget, and propose fixes.

    When over budget, candidate re-specifications are evaluated and the ones
    whose re-predicted time fits are returned, cheapest first: a solver
    downgrade to Euler, resampling an unstructured mesh onto a uniform grid,
    and more worker threads under an ideal-scaling assumption (optimistic:
    real scaling is sublinear) capped at this machine's cores.

    hints may carry "available_threads" (overrides the core-count cap),
    "current_threads" (baseline, default 1), and the four workload factors
    "dataset_size", "particle_count", "seed_distribution",
    "field_complexity"; when all four are present the advice also carries a
    parallelization-strategy recommendation.
    """
    hints = dict(hints or {})
    est = estimate_cost(spec, constants)
    seconds = predict_time(model, est.total_flop)
    strategy = None
    factor_keys = ("dataset_size", "particle_count", "seed_distribution",
                   "field_complexity")
    if all(k in hints for k in factor_keys):
        strategy = recommend_parallel_strategy(
            *(hints[k] for k in factor_keys))
    if seconds <= budget_seconds:
        return Advice(predicted_seconds=seconds, within_budget=True,
                      total_flop=est.total_flop,
                      budget_seconds=budget_seconds, suggestions=(),
                      strategy=strategy)

    candidates: list[Suggestion] = []
    if spec.solver != "euler":
        alt = spec.replace(solver="euler")
        alt_est = estimate_cost(alt, constants)
        alt_s = predict_time(model, alt_est.total_flop)
        if alt_s <= budget_seconds:
            candidates.append(Suggestion(
                kind="solver_downgrade",
                description=(f"switch {spec.solver} to euler "
                             f"(first order; verify accuracy is acceptable)"),
                predicted_seconds=alt_s, total_flop=alt_est.total_flop,
                spec=alt))
    if spec.mesh_type == "unstructured":
        alt = spec.replace(mesh_type="uniform")
        alt_est = estimate_cost(alt, constants)
        alt_s = predict_time(model, alt_est.total_flop)
        if alt_s <= budget_seconds:
            candidates.append(Suggestion(
                kind="mesh_resample",
                description=("resample the unstructured mesh onto a uniform "
                             "grid (location cost drops; introduces "
                             "resampling error)"),
                predicted_seconds=alt_s, total_flop=alt_est.total_flop,
                spec=alt))
    cur = int(hints.get("current_threads", 1))
    cap = int(hints.get("available_threads", os.cpu_count() or 1))
    if cap > cur and seconds > 0:
        # smallest thread count that fits under ideal 1/k scaling
        need = math.ceil(seconds * cur / budget_seconds) \
            if budget_seconds > 0 else cap + 1
        if need <= cap:
            k = max(need, cur + 1)
            candidates.append(Suggestion(
                kind="thread_count",
                description=(f"run with {k} worker threads (ideal-scaling "
                             f"estimate, optimistic)"),
                predicted_seconds=seconds * cur / k,
                total_flop=est.total_flop, thread_count=k))
    candidates.sort(key=lambda s: s.predicted_seconds)
    return Advice(predicted_seconds=seconds, within_budget=False,
                  total_flop=est.total_flop, budget_seconds=budget_seconds,
                  suggestions=tuple(candidates), strategy=strategy)
