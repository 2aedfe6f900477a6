"""Solver unit tests.

The adaptive step is checked against an independent Fehlberg 4(5)
implementation written directly from the published tableau, and the fixed
steps against closed-form oracles (constant fields, the truncated Taylor
series of a rotation).  Convergence orders come from a Richardson sweep on
the circular field, whose exact solution is a rigid rotation.
"""
import math

import numpy as np
import pytest

from advectum.mesh import build_uniform
from advectum.solve import (
    EVALS_PER_STEP, SolverConfig, StepStatus, default_config, euler_step,
    rk4_step, rkf45_step, solver_code,
)


class AnalyticEvaluator:
    """evaluate() stand-in driven by a velocity function, no mesh."""

    def __init__(self, fn, lo=None, hi=None):
        self.fn = fn
        self.lo = None if lo is None else np.asarray(lo, dtype=float)
        self.hi = None if hi is None else np.asarray(hi, dtype=float)
        self.locate_count = 0
        self.interp_count = 0

    def evaluate(self, p):
        self.locate_count += 1
        p = np.asarray(p, dtype=float)
        if self.lo is not None:
            if np.any(p < self.lo) or np.any(p > self.hi):
                return None
        self.interp_count += 1
        return np.asarray(self.fn(p), dtype=float)


def rotation(p):
    return (-p[1], p[0], 0.0)


# --------------------------------------------------------------------------
# configuration and constants


def test_solver_config_rejects_bad_values():
    with pytest.raises(ValueError):
        SolverConfig(kind="heun", h=0.1)
    with pytest.raises(ValueError):
        SolverConfig(kind="rk4", h=0.0)
    with pytest.raises(ValueError):
        SolverConfig(kind="rkf45", h=0.1, tol=-1.0)
    with pytest.raises(ValueError):
        SolverConfig(kind="rkf45", h=0.1, h_min=0.5, h_max=0.1)


def test_stage_evaluation_counts():
    assert EVALS_PER_STEP == {"euler": 1, "rk4": 4, "rkf45": 6}


def test_solver_codes_are_stable():
    assert solver_code("euler") == 0
    assert solver_code("rk4") == 1
    assert solver_code("rkf45") == 2


def test_default_config_scales_with_domain():
    ds = build_uniform((0, 0, 0), (1, 1, 1), (5, 5, 5), field="constant(1,0,0)")
    diag = math.sqrt(3.0) * 4.0
    cfg = default_config(ds, "rkf45")
    assert cfg.kind == "rkf45"
    assert cfg.h == pytest.approx(diag / 500.0, rel=1e-15)
    assert cfg.h_min == pytest.approx(1e-6 * diag, rel=1e-15)
    assert cfg.h_max == pytest.approx(0.05 * diag, rel=1e-15)


# --------------------------------------------------------------------------
# fixed steps against closed forms


def test_euler_step_is_p_plus_h_v():
    ev = AnalyticEvaluator(lambda p: (2.0, -1.0, 0.5))
    res = euler_step(ev, (1.0, 2.0, 3.0), 0.25)
    assert res.status is StepStatus.OK
    assert np.array_equal(res.new_position, [1.5, 1.75, 3.125])
    assert res.h_used == 0.25
    assert res.evals_used == 1
    assert ev.locate_count == 1 and ev.interp_count == 1


def test_rk4_step_constant_field_moves_h_v():
    ev = AnalyticEvaluator(lambda p: (3.0, 0.0, -2.0))
    res = rk4_step(ev, (0.0, 0.0, 0.0), 0.5)
    assert res.status is StepStatus.OK
    assert np.allclose(res.new_position, [1.5, 0.0, -1.0], rtol=1e-15)
    assert res.evals_used == 4


def test_rk4_step_matches_truncated_rotation_series():
    # linear ODE p' = W p: one RK4 step equals sum_{k<=4} (hW)^k/k! applied
    w = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    h = 0.3
    m = np.eye(3)
    term = np.eye(3)
    for k in range(1, 5):
        term = term @ (h * w) / k
        m = m + term
    p0 = np.array([0.8, -0.4, 0.6])
    res = rk4_step(AnalyticEvaluator(rotation), p0, h)
    assert np.allclose(res.new_position, m @ p0, atol=1e-15)


@pytest.mark.parametrize("kind,expected,tol", [
    ("euler", 1.0, 0.2),
    ("rk4", 4.0, 0.5),
])
def test_richardson_convergence_order(kind, expected, tol):
    step = euler_step if kind == "euler" else rk4_step
    exact = np.array([math.cos(1.0), math.sin(1.0), 0.0])
    hs = [0.1, 0.05, 0.025, 0.0125]
    errs = []
    for h in hs:
        ev = AnalyticEvaluator(rotation)
        p = np.array([1.0, 0.0, 0.0])
        for _ in range(round(1.0 / h)):
            p = step(ev, p, h).new_position
        errs.append(np.linalg.norm(p - exact))
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert abs(slope - expected) <= tol


def test_fixed_step_out_of_domain_keeps_position():
    ev = AnalyticEvaluator(lambda p: (1.0, 0.0, 0.0), lo=(0, 0, 0), hi=(1, 1, 1))
    res = euler_step(ev, (2.0, 2.0, 2.0), 0.1)
    assert res.status is StepStatus.EXITED_DOMAIN
    assert np.array_equal(res.new_position, [2.0, 2.0, 2.0])
    assert res.h_used == 0.0
    assert res.evals_used == 1


def test_rk4_counts_only_attempted_stages():
    # stage 1 inside, stage 2 lands outside: stages 3 and 4 never evaluated
    ev = AnalyticEvaluator(lambda p: (1.0, 0.0, 0.0), lo=(0, 0, 0), hi=(1, 1, 1))
    res = rk4_step(ev, (0.99, 0.5, 0.5), 0.5)
    assert res.status is StepStatus.EXITED_DOMAIN
    assert res.evals_used == 2
    assert ev.locate_count == 2
    assert ev.interp_count == 1


# --------------------------------------------------------------------------
# adaptive step against an independent implementation

# published Fehlberg coefficients, written down separately from the engine
_FEHLBERG_A = [
    [],
    [1 / 4],
    [3 / 32, 9 / 32],
    [1932 / 2197, -7200 / 2197, 7296 / 2197],
    [439 / 216, -8, 3680 / 513, -845 / 4104],
    [-8 / 27, 2, -3544 / 2565, 1859 / 4104, -11 / 40],
]
_FEHLBERG_B5 = [16 / 135, 0, 6656 / 12825, 28561 / 56430, -9 / 50, 2 / 55]
_FEHLBERG_B4 = [25 / 216, 0, 1408 / 2565, 2197 / 4104, -1 / 5, 0]


def _reference_rkf45(fn, p, htry, tol, h_min, h_max):
    """Attempt loop with the textbook tableau; returns (p5, h_used, h_next)."""
    p = np.asarray(p, dtype=float)
    h = float(htry)
    while True:
        ks = []
        for row in _FEHLBERG_A:
            stage = p + h * sum(a * k for a, k in zip(row, ks)) if ks else p.copy()
            ks.append(np.asarray(fn(stage), dtype=float))
        p5 = p + h * sum(b * k for b, k in zip(_FEHLBERG_B5, ks))
        p4 = p + h * sum(b * k for b, k in zip(_FEHLBERG_B4, ks))
        err = float(np.linalg.norm(p5 - p4))
        if err <= tol:
            hn = h_max if err == 0.0 else min(
                max(h * 0.9 * math.pow(tol / err, 0.2), h_min), h_max)
            return p5, h, hn
        hn = min(max(h * 0.9 * math.pow(tol / err, 0.2), h_min), h_max)
        if hn >= h:
            return p5, h, hn           # forced accept at the floor
        h = hn


def _swirl(p):
    return (-p[1], p[0], 0.05 * p[0] * p[0])


def test_rkf45_matches_reference_tableau():
    cfg = SolverConfig(kind="rkf45", h=0.2, tol=1e-8, h_min=1e-9, h_max=1.0)
    p0 = (1.0, 0.2, -0.3)
    res = rkf45_step(AnalyticEvaluator(_swirl), p0, cfg, 0.2)
    ref_p, ref_h, ref_hn = _reference_rkf45(_swirl, p0, 0.2, 1e-8, 1e-9, 1.0)
    assert res.status is StepStatus.OK
    assert np.allclose(res.new_position, ref_p, rtol=1e-13, atol=1e-15)
    assert res.h_used == pytest.approx(ref_h, rel=1e-13)
    assert res.h_next == pytest.approx(ref_hn, rel=1e-13)


def test_rkf45_zero_error_proposes_h_max():
    ev = AnalyticEvaluator(lambda p: (1.0, -2.0, 0.5))
    cfg = SolverConfig(kind="rkf45", h=0.1, tol=1e-6, h_min=1e-6, h_max=0.7)
    res = rkf45_step(ev, (0.0, 0.0, 0.0), cfg, 0.1)
    assert res.status is StepStatus.OK
    assert res.evals_used == 6
    assert res.h_used == 0.1
    assert res.h_next == 0.7
    assert np.allclose(res.new_position, [0.1, -0.2, 0.05], rtol=1e-15)


def test_rkf45_forced_accept_when_floor_reached():
    cfg = SolverConfig(kind="rkf45", h=0.3, tol=1e-30, h_min=0.3, h_max=0.3)
    res = rkf45_step(AnalyticEvaluator(rotation), (1.0, 0.0, 0.0), cfg, 0.3)
    assert res.status is StepStatus.OK
    assert res.h_used == 0.3
    assert res.h_next == 0.3
    assert res.evals_used == 6


def test_rkf45_nonfinite_error_at_floor_is_rejected():
    ev = AnalyticEvaluator(lambda p: (math.nan, 0.0, 0.0))
    cfg = SolverConfig(kind="rkf45", h=0.1, tol=1e-6, h_min=0.1, h_max=0.1)
    res = rkf45_step(ev, (0.0, 0.0, 0.0), cfg, 0.1)
    assert res.status is StepStatus.REJECTED_OVERFLOW
    assert np.array_equal(res.new_position, [0.0, 0.0, 0.0])
    assert res.h_used == 0.0
    assert res.evals_used == 6


def test_rkf45_retries_count_every_attempted_stage():
    ev = AnalyticEvaluator(_swirl)
    cfg = SolverConfig(kind="rkf45", h=1.0, tol=1e-10, h_min=1e-9, h_max=1.0)
    res = rkf45_step(ev, (1.0, 0.2, -0.3), cfg, 1.0)
    assert res.status is StepStatus.OK
    assert res.evals_used >= 12 and res.evals_used % 6 == 0
    assert ev.locate_count == res.evals_used


def test_rkf45_h_try_outside_limits_raises():
    cfg = SolverConfig(kind="rkf45", h=0.1, tol=1e-6, h_min=0.01, h_max=0.5)
    with pytest.raises(ValueError):
        rkf45_step(AnalyticEvaluator(rotation), (1, 0, 0), cfg, 0.001)


def test_rkf45_out_of_domain_mid_stage():
    ev = AnalyticEvaluator(lambda p: (1.0, 0.0, 0.0), lo=(0, 0, 0), hi=(1, 1, 1))
    cfg = SolverConfig(kind="rkf45", h=0.8, tol=1e-6, h_min=1e-6, h_max=1.0)
    res = rkf45_step(ev, (0.9, 0.5, 0.5), cfg, 0.8)
    assert res.status is StepStatus.EXITED_DOMAIN
    assert np.array_equal(res.new_position, [0.9, 0.5, 0.5])
    assert res.evals_used == 2           # stage 1 inside, stage 2 out
