"""ODE solvers: one advection step from velocity evaluations.

Three schemes: explicit Euler (1 evaluation per step), classical RK4 (4),
and the embedded Fehlberg 4(5) pair (6 per attempt) with step-size control.
The adaptive solver propagates the 5th-order solution and proposes the next
step from the 4th/5th-order error estimate.

These functions drive a single particle through any object with an
``evaluate(p) -> velocity | None`` method (a FieldEvaluator, or an analytic
stand-in in tests).  They share their arithmetic with the batch engines, so
a step taken here is bit-identical to the same step inside run_workload.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from . import _batch as B
from .mesh import Dataset

SOLVER_KINDS = ("euler", "rk4", "rkf45")
_SOLVER_CODES = {"euler": B.SK_EULER, "rk4": B.SK_RK4, "rkf45": B.SK_RKF45}
EVALS_PER_STEP = {"euler": 1, "rk4": 4, "rkf45": 6}


class StepStatus(Enum):
    OK = "ok"
    EXITED_DOMAIN = "exited_domain"
    REJECTED_OVERFLOW = "rejected_overflow"


@dataclass(frozen=True)
class StepResult:
    new_position: np.ndarray
    h_used: float
    h_next: Optional[float]
    evals_used: int
    status: StepStatus


@dataclass(frozen=True)
class SolverConfig:
    kind: str
    h: float
    tol: float = 1e-6
    h_min: float = 1e-9
    h_max: float = 1.0

    def __post_init__(self):
        if self.kind not in SOLVER_KINDS:
            raise ValueError(f"unknown solver kind {self.kind!r}")
        if not self.h > 0:
            raise ValueError("h must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not 0 < self.h_min <= self.h_max:
            raise ValueError("need 0 < h_min <= h_max")


def solver_code(kind: str) -> int:
    return _SOLVER_CODES[kind]


def default_config(dataset: Dataset, kind: str = "rk4") -> SolverConfig:
    """Step-size defaults scaled to the domain diagonal."""
    diag = dataset.bounds.diagonal()
    return SolverConfig(kind=kind, h=diag / 500.0, tol=1e-6,
                        h_min=1e-6 * diag, h_max=0.05 * diag)


def _make_adapter(ev):
    """Wrap an evaluator as the batch engines' row-eval callback.

    Stops calling the evaluator after the first out-of-bounds stage so the
    evaluator's counters record exactly the attempted stages.
    """
    state = {"oob": False}
    f = np.zeros(1, dtype=bool)
    t = np.ones(1, dtype=bool)
    z = np.zeros(1)

    def evalf(px, py, pz, rows):
        if state["oob"]:
            return f, z, z, z
        v = ev.evaluate(np.array([px[0], py[0], pz[0]]))
        if v is None:
            state["oob"] = True
            return f, z, z, z
        return t, np.asarray([v[0]]), np.asarray([v[1]]), np.asarray([v[2]])

    return evalf, state


def _fixed_step(ev, p, h: float, kind: int) -> StepResult:
    if not h > 0:
        raise ValueError("h must be positive")
    p = np.asarray(p, dtype=float).reshape(3)
    pos = p.reshape(1, 3).copy()
    scratch = np.zeros(1, dtype=np.int64)
    evalf, _ = _make_adapter(ev)
    before = ev.locate_count
    idx = np.zeros(1, dtype=np.int64)
    ok, nxp, nyp, nzp = B._fixed_step_rows(
        evalf, idx, pos, scratch, scratch.copy(), kind, float(h))
    evals = ev.locate_count - before
    if ok[0]:
        return StepResult(np.array([nxp[0], nyp[0], nzp[0]]), float(h),
                          None, evals, StepStatus.OK)
    return StepResult(p.copy(), 0.0, None, evals, StepStatus.EXITED_DOMAIN)


def euler_step(ev, p, h: float) -> StepResult:
    """p + h * v(p)."""
    return _fixed_step(ev, p, h, B.SK_EULER)


def rk4_step(ev, p, h: float) -> StepResult:
    return _fixed_step(ev, p, h, B.SK_RK4)


def rkf45_step(ev, p, cfg: SolverConfig, h_try: float) -> StepResult:
    """One committed adaptive step (internal retries included).

    Accepts when the embedded error estimate is <= cfg.tol, or is forced to
    accept once the controller can no longer shrink the step (the h_min
    floor).  A non-finite error estimate at the floor is reported as
    rejected_overflow.  evals_used counts the stages of every attempt.
    """
    if not cfg.h_min <= h_try <= cfg.h_max:
        raise ValueError(
            f"h_try {h_try} outside [{cfg.h_min}, {cfg.h_max}]")
    p = np.asarray(p, dtype=float).reshape(3)
    pos = p.reshape(1, 3).copy()
    scratch = np.zeros(1, dtype=np.int64)
    h_carry = np.array([float(h_try)])
    evalf, state = _make_adapter(ev)
    before = ev.locate_count
    idx = np.zeros(1, dtype=np.int64)
    acc, exi, nxp, nyp, nzp, h_used = B._rkf45_step_rows(
        evalf, idx, pos, scratch, scratch.copy(), h_carry,
        cfg.tol, cfg.h_min, cfg.h_max)
    evals = ev.locate_count - before
    if acc[0]:
        return StepResult(np.array([nxp[0], nyp[0], nzp[0]]),
                          float(h_used[0]), float(h_carry[0]),
                          evals, StepStatus.OK)
    status = (StepStatus.EXITED_DOMAIN if state["oob"]
              else StepStatus.REJECTED_OVERFLOW)
    return StepResult(p.copy(), 0.0, None, evals, status)
