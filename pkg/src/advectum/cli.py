"""Command-line harness: run workloads, estimate cost, calibrate, validate.

Exit codes are a stable contract: 0 success, 1 usage or configuration
error, 2 validation-threshold failure.  All commands are deterministic for
fixed flags and rng_seed except for wall-clock fields.

`run` accepts a JSON config file (--config) whose keys mirror the flags;
explicit flags override the file.  Minimal example:

    {"dataset": {"kind": "uniform", "d": 50, "field": "circular"},
     "workload": {"preset": "streamlines"}}
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import platform
import statistics
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from .advect import (
    ANALYZER_KINDS, SEEDING_KINDS, TerminationCriteria, Workload,
    compute_ftle, preset_names, run_workload, workload_preset,
    write_flow_map_csv, write_ftle_csv, write_streamlines,
)
from .backend import BACKENDS
from .costmodel import (
    CalibrationModel, CostConstants, MESH_TYPES, WorkloadSpec, advise,
    calibrate, estimate_cost, predict_time,
)
from .mesh import (
    Bounds3, Dataset, MeshError, UniformGrid, build_rectilinear,
    build_uniform, tetrahedralize,
)
from .solve import SOLVER_KINDS, SolverConfig, default_config


class ConfigError(ValueError):
    """Bad config file or flag combination; exits with code 1."""


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # route argparse failures through our exit-code contract (1, not 2)
    def error(self, message):
        raise _UsageError(message)


def _num(v: float):
    """Integral floats print as integers (FLOP counts are usually whole)."""
    f = float(v)
    return int(f) if f.is_integer() and abs(f) < 2 ** 63 else f


def _require(mapping: dict, key: str, context: str):
    if key not in mapping:
        raise ConfigError(f"{context}: missing required field {key!r}")
    return mapping[key]


# --------------------------------------------------------------------------
# dataset construction


def build_dataset_spec(kind: str, d: int, field: str) -> Dataset:
    """A d^3-point mesh of the requested kind centered on the origin.

    The lattice has unit spacing from -(d-1)/2 to (d-1)/2 per axis, so the
    circular and saddle fields rotate and stretch about the grid center.
    Rectilinear uses the same coordinates (stored per axis); unstructured
    splits each hex cell into six tets.
    """
    if kind not in MESH_TYPES:
        raise ConfigError(
            f"dataset: unknown kind {kind!r}; expected one of {MESH_TYPES}")
    if d < 2:
        raise ConfigError("dataset: d must be >= 2")
    lo = -(d - 1) / 2.0
    origin = (lo, lo, lo)
    if kind == "uniform":
        return build_uniform(origin, (1.0, 1.0, 1.0), (d, d, d), field=field)
    if kind == "rectilinear":
        ax = lo + np.arange(d, dtype=np.float64)
        return build_rectilinear(ax, ax.copy(), ax.copy(), field=field)
    grid = UniformGrid(origin, (1.0, 1.0, 1.0), (d, d, d))
    return tetrahedralize(grid, field=field)


def _shrunk_bounds(b: Bounds3, frac: float) -> Bounds3:
    if not 0 < frac <= 1:
        raise ConfigError("seed_frac must be in (0, 1]")
    c = 0.5 * (b.min + b.max)
    return Bounds3(c + frac * (b.min - c), c + frac * (b.max - c))


# --------------------------------------------------------------------------
# run


def _merge_config(args, flag_map: dict) -> dict:
    cfg = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file {str(path)!r} not found")
        try:
            cfg = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}:{e.lineno}: invalid JSON: {e.msg}")
        if not isinstance(cfg, dict):
            raise ConfigError(f"{path}: top level must be an object")
    for flag, keys in flag_map.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        node = cfg
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"config: {k!r} must be an object")
        node[keys[-1]] = value
    return cfg


_RUN_FLAGS = {
    "mesh": ("dataset", "kind"),
    "d": ("dataset", "d"),
    "field": ("dataset", "field"),
    "preset": ("workload", "preset"),
    "seeding": ("workload", "seeding"),
    "particles": ("workload", "particles"),
    "steps": ("workload", "steps"),
    "solver": ("workload", "solver"),
    "h": ("workload", "h"),
    "tol": ("workload", "tol"),
    "max_time": ("workload", "max_time"),
    "seed_frac": ("workload", "seed_frac"),
    "rng_seed": ("workload", "rng_seed"),
    "analyzer": ("analyzer",),
    "threads": ("threads",),
    "backend": ("backend",),
    "locator": ("locator",),
    "summary": ("output", "summary"),
    "streamlines": ("output", "streamlines"),
    "flow_map": ("output", "flow_map"),
    "ftle": ("output", "ftle"),
    "ftle_horizon": ("output", "ftle_horizon"),
}


def _solver_from_config(w: dict, dataset: Dataset) -> SolverConfig:
    kind = w.get("solver", "rk4")
    if kind not in SOLVER_KINDS:
        raise ConfigError(f"workload: unknown solver {kind!r}")
    base = default_config(dataset, kind)
    return SolverConfig(
        kind=kind,
        h=float(w.get("h", base.h)),
        tol=float(w.get("tol", base.tol)),
        h_min=float(w.get("h_min", base.h_min)),
        h_max=float(w.get("h_max", base.h_max)),
    )


def _workload_from_config(cfg: dict, dataset: Dataset) -> Workload:
    w = cfg.get("workload", {})
    if not isinstance(w, dict):
        raise ConfigError("config: 'workload' must be an object")
    rng_seed = int(w.get("rng_seed", 0))
    if "preset" in w:
        explicit = {"seeding", "particles", "steps"} & set(w)
        if explicit:
            raise ConfigError(
                f"workload: preset conflicts with {sorted(explicit)}")
        solver = _solver_from_config(w, dataset) if "solver" in w \
            or "h" in w or "tol" in w else None
        return workload_preset(w["preset"], dataset, solver=solver,
                               rng_seed=rng_seed)
    seeding = _require(w, "seeding", "workload")
    if seeding not in SEEDING_KINDS:
        raise ConfigError(f"workload: unknown seeding {seeding!r}")
    particles = int(_require(w, "particles", "workload"))
    steps = int(_require(w, "steps", "workload"))
    max_time = w.get("max_time")
    seed_bounds = None
    if "seed_frac" in w:
        seed_bounds = _shrunk_bounds(dataset.bounds, float(w["seed_frac"]))
    curve_start = w.get("curve_start")
    curve_end = w.get("curve_end")
    if seeding == "curve" and curve_start is None:
        preset_like = workload_preset("streamsurface", dataset)
        curve_start = preset_like.curve_start
        curve_end = preset_like.curve_end
    try:
        return Workload(
            seeding=seeding,
            particle_count=particles,
            solver=_solver_from_config(w, dataset),
            termination=TerminationCriteria(
                max_steps=steps,
                max_time=float(max_time) if max_time is not None else None),
            rng_seed=rng_seed,
            curve_start=curve_start,
            curve_end=curve_end,
            seed_bounds=seed_bounds,
        )
    except ValueError as e:
        raise ConfigError(f"workload: {e}")


def cmd_run(args) -> int:
    cfg = _merge_config(args, _RUN_FLAGS)
    ds_cfg = cfg.get("dataset")
    if ds_cfg is None:
        raise ConfigError("config: missing required section 'dataset'")
    kind = _require(ds_cfg, "kind", "dataset")
    d = int(_require(ds_cfg, "d", "dataset"))
    field = _require(ds_cfg, "field", "dataset")
    try:
        dataset = build_dataset_spec(kind, d, field)
    except MeshError as e:
        raise ConfigError(f"dataset: {e}")

    workload = _workload_from_config(cfg, dataset)
    analyzer = cfg.get("analyzer", "source_dest")
    if analyzer not in ANALYZER_KINDS:
        raise ConfigError(f"config: unknown analyzer {analyzer!r}")
    out = cfg.get("output", {})
    if not isinstance(out, dict):
        raise ConfigError("config: 'output' must be an object")
    if out.get("streamlines") and analyzer != "streamline":
        raise ConfigError(
            "output: streamlines requires the streamline analyzer")
    if (out.get("flow_map") or out.get("ftle")) and analyzer != "flow_map":
        raise ConfigError(
            "output: flow_map/ftle require the flow_map analyzer")
    if out.get("ftle") and workload.seeding != "packed":
        raise ConfigError("output: ftle requires packed seeding")

    result = run_workload(
        dataset, workload, analyzer_kind=analyzer,
        thread_count=cfg.get("threads"),
        backend=cfg.get("backend"),
        locator=cfg.get("locator", "auto"),
    )

    status_names = ("active", "terminated_steps", "terminated_bounds",
                    "terminated_time")
    status_counts = {name: 0 for name in status_names}
    for p in result.particles:
        status_counts[status_names[int(p.status)]] += 1

    summary = {
        "dataset": {"kind": kind, "d": d, "field": field,
                    "points": int(dataset.mesh.point_count),
                    "cells": int(dataset.cell_count)},
        "workload": {
            "seeding": workload.seeding,
            "particles": workload.particle_count,
            "max_steps": workload.termination.max_steps,
            "max_time": workload.termination.max_time,
            "solver": workload.solver.kind,
            "h": workload.solver.h,
            "rng_seed": workload.rng_seed,
        },
        "analyzer": analyzer,
        "backend": result.backend,
        "threads": result.thread_count,
        "total_steps": result.total_steps,
        "locate_count": result.locate_count,
        "interp_count": result.interp_count,
        "status_counts": status_counts,
        "wall_seconds": result.wall_seconds,
    }
    text = json.dumps(summary, indent=2)
    if out.get("summary"):
        Path(out["summary"]).write_text(text + "\n")
    print(text)

    if out.get("streamlines"):
        write_streamlines(out["streamlines"], result)
    if out.get("flow_map"):
        write_flow_map_csv(out["flow_map"], result.flow_map)
    if out.get("ftle"):
        horizon = out.get("ftle_horizon")
        if horizon is None:
            raise ConfigError("output: ftle requires ftle_horizon")
        ftle = compute_ftle(result.flow_map, float(horizon))
        write_ftle_csv(out["ftle"], result.flow_map, ftle)
    return 0


# --------------------------------------------------------------------------
# estimate


def _spec_from_args(args) -> tuple:
    if args.constants:
        constants = CostConstants.load(args.constants)
    elif args.d is not None:
        constants = CostConstants(d=args.d)
    else:
        constants = CostConstants()
    if args.d is not None and args.constants:
        constants = CostConstants(
            solve=constants.solve, interp=constants.interp,
            terminate=constants.terminate, analyze=constants.analyze,
            d=args.d, locate_override=constants.locate_override)
    spec = WorkloadSpec(
        particle_count=args.particles,
        solver=args.solver,
        mesh_type=args.mesh,
        steps=args.steps,
    )
    return spec, constants


def cmd_estimate(args) -> int:
    spec, constants = _spec_from_args(args)
    est = estimate_cost(spec, constants, analyze=args.analyze)
    if args.format == "json":
        payload = {"total_flop": _num(est.total_flop),
                   "breakdown": {k: _num(v)
                                 for k, v in est.breakdown.items()}}
        print(json.dumps(payload, indent=2))
    elif args.format == "csv":
        fields = ["total_flop"] + list(est.breakdown)
        values = [est.total_flop] + list(est.breakdown.values())
        print(",".join(fields))
        print(",".join(str(_num(v)) for v in values))
    else:
        print(_num(est.total_flop))
    return 0


# --------------------------------------------------------------------------
# calibrate


def _read_samples_csv(path) -> list:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"samples file {str(p)!r} not found")
    with p.open(newline="") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        for need in ("predicted_flop", "measured_seconds"):
            if need not in cols:
                raise ConfigError(
                    f"{p}: missing column {need!r} (have {cols})")
        samples = []
        for i, row in enumerate(reader, start=2):
            try:
                samples.append((float(row["predicted_flop"]),
                                float(row["measured_seconds"])))
            except (TypeError, ValueError):
                raise ConfigError(f"{p}:{i}: non-numeric sample row")
    return samples


def cmd_calibrate(args) -> int:
    samples = _read_samples_csv(args.samples)
    model = calibrate(samples, machine=args.machine)
    model.save(args.out)
    print(f"m {model.m!r}")
    print(f"b {model.b!r}")
    print(f"r_squared {model.r_squared!r}")
    print(f"samples {model.sample_count}")
    print(f"model written to {args.out}")
    return 0


# --------------------------------------------------------------------------
# validate
#
# Built-in suite: every fixed-step solver x mesh type at two P*N magnitudes.
# Fixed-step only: the model's N must equal the realized step count, which
# the adaptive solver does not promise.  Rows use the circular field on the
# centered grid with seeds confined to the inner 35% of the extent, so no
# particle terminates early and realized work matches the prediction
# exactly (verified per row).  Unstructured rows resolve every evaluation
# through the cell tree, matching the model's per-evaluation location cost.

_SUITE_ROWS = (
    ("euler-rect-lo", "euler", "rectilinear", 800, 1000),
    ("euler-uniform-lo", "euler", "uniform", 1000, 1000),
    ("rk4-rect-lo", "rk4", "rectilinear", 300, 1000),
    ("rk4-uniform-lo", "rk4", "uniform", 400, 1000),
    ("euler-unstructured-lo", "euler", "unstructured", 100, 1000),
    ("rk4-unstructured-lo", "rk4", "unstructured", 100, 1000),
    ("euler-unstructured-hi", "euler", "unstructured", 500, 1000),
    ("rk4-unstructured-hi", "rk4", "unstructured", 250, 1000),
    ("rk4-rect-hi", "rk4", "rectilinear", 2000, 10000),
    ("euler-rect-hi", "euler", "rectilinear", 8000, 10000),
    ("rk4-uniform-hi", "rk4", "uniform", 2500, 10000),
    ("euler-uniform-hi", "euler", "uniform", 10000, 10000),
)

_SUITE_H = 0.005
_SEED_FRAC = 0.35
_NOISE_SPREAD = 0.20


def validation_suite(d: int, scale: float = 1.0) -> list:
    """Suite rows as (label, solver, mesh, P, N), N scaled for smoke runs."""
    if scale <= 0:
        raise ConfigError("scale must be positive")
    rows = []
    for label, solver, mesh, p, n in _SUITE_ROWS:
        rows.append((label, solver, mesh, p,
                     max(1, int(round(n * scale)))))
    return rows


def _measure_row(dataset: Dataset, solver: str, mesh: str, p: int, n: int,
                 repeats: int, rng_seed: int, backend: Optional[str]) -> dict:
    cfg = SolverConfig(kind=solver, h=_SUITE_H)
    workload = Workload(
        seeding="sparse", particle_count=p, solver=cfg,
        termination=TerminationCriteria(max_steps=n),
        rng_seed=rng_seed,
        seed_bounds=_shrunk_bounds(dataset.bounds, _SEED_FRAC),
    )
    locator = "celltree" if mesh == "unstructured" else "auto"
    times = []
    res = None
    for _ in range(repeats):
        res = run_workload(dataset, workload, thread_count=1,
                           backend=backend, locator=locator)
        times.append(res.wall_seconds)
    if res.total_steps != p * n:
        raise ConfigError(
            f"suite row terminated early ({res.total_steps} of {p * n} "
            "steps); the measured time no longer matches the prediction")
    return {"times": times, "backend": res.backend,
            "interp_count": res.interp_count}


def _spread(times: list) -> float:
    med = statistics.median(times)
    if med <= 0:
        return math.inf
    return (max(times) - min(times)) / med


def cmd_validate(args) -> int:
    if not 2 <= args.d:
        raise ConfigError("d must be >= 2")
    if args.repeats < 1:
        raise ConfigError("repeats must be >= 1")
    rows = validation_suite(args.d, args.scale)
    constants = CostConstants(d=args.d)
    datasets: dict[str, Dataset] = {}

    def dataset_for(mesh: str) -> Dataset:
        if mesh not in datasets:
            print(f"building {mesh} dataset (d={args.d}) ...",
                  file=sys.stderr)
            datasets[mesh] = build_dataset_spec(mesh, args.d, "circular")
        return datasets[mesh]

    records = []
    for i, (label, solver, mesh, p, n) in enumerate(rows):
        spec = WorkloadSpec(particle_count=p, solver=solver, mesh_type=mesh,
                            steps=n)
        predicted = estimate_cost(spec, constants).total_flop
        ds = dataset_for(mesh)
        meas = _measure_row(ds, solver, mesh, p, n, args.repeats,
                            rng_seed=42 + i, backend=args.backend)
        noisy = _spread(meas["times"]) > _NOISE_SPREAD
        if noisy and args.repeats > 1:
            # one escalation: re-measure with twice the repeats plus one
            retry = _measure_row(ds, solver, mesh, p, n,
                                 2 * args.repeats + 1, rng_seed=42 + i,
                                 backend=args.backend)
            meas = retry
            noisy = _spread(meas["times"]) > _NOISE_SPREAD
        seconds = statistics.median(meas["times"])
        records.append({
            "label": label, "mesh": mesh, "solver": solver, "P": p, "N": n,
            "predicted_flop": predicted, "measured_seconds": seconds,
            "repeat_seconds": meas["times"], "noisy": noisy,
            "backend": meas["backend"],
        })
        flag = "  [noisy]" if noisy else ""
        print(f"{label:24s} flop={predicted:.4g} "
              f"seconds={seconds:.6f}{flag}", file=sys.stderr)

    records.sort(key=lambda r: r["predicted_flop"])
    for a, b in zip(records, records[1:]):
        if not a["predicted_flop"] < b["predicted_flop"]:
            raise ConfigError(
                f"suite rows {a['label']} and {b['label']} do not have "
                "strictly increasing predicted_flop")

    csv_path = Path(args.out_csv)
    lines = ["label,mesh,solver,P,N,predicted_flop,measured_seconds"]
    for r in records:
        lines.append(
            f"{r['label']},{r['mesh']},{r['solver']},{r['P']},{r['N']},"
            f"{r['predicted_flop']!r},{r['measured_seconds']!r}")
    csv_path.write_text("\n".join(lines) + "\n")

    model = calibrate(
        [(r["predicted_flop"], r["measured_seconds"]) for r in records],
        machine=platform.node())
    passed = model.r_squared >= args.threshold
    model.save(args.model_out)

    report = {
        "d": args.d,
        "scale": args.scale,
        "repeats": args.repeats,
        "threshold": args.threshold,
        "machine": platform.node(),
        "backend": records[0]["backend"],
        "rows": records,
        "model": model.to_dict(),
        "r_squared": model.r_squared,
        "passed": passed,
    }
    if args.report:
        Path(args.report).write_text(json.dumps(report, indent=2) + "\n")

    print(f"rows {len(records)}")
    print(f"m {model.m!r}")
    print(f"b {model.b!r}")
    print(f"r_squared {model.r_squared!r}")
    print(f"csv written to {csv_path}")
    print(f"model written to {args.model_out}")
    print(f"verdict {'pass' if passed else 'fail'} "
          f"(threshold {args.threshold})")
    return 0 if passed else 2


# --------------------------------------------------------------------------
# advise


def cmd_advise(args) -> int:
    model_path = Path(args.model)
    if not model_path.exists():
        raise ConfigError(
            f"calibration model {str(model_path)!r} not found; create one "
            "with `advectum calibrate` (or `advectum validate`)")
    model = CalibrationModel.load(model_path)
    spec, constants = _spec_from_args(args)
    hints = {}
    for key in ("dataset_size", "particle_count", "seed_distribution",
                "field_complexity"):
        value = getattr(args, f"hint_{key}")
        if value is not None:
            hints[key] = value
    if args.available_threads is not None:
        hints["available_threads"] = args.available_threads
    if args.current_threads is not None:
        hints["current_threads"] = args.current_threads

    advice = advise(spec, args.budget, model, hints=hints,
                    constants=constants)
    if args.format == "json":
        payload = {
            "total_flop": _num(advice.total_flop),
            "predicted_seconds": advice.predicted_seconds,
            "budget_seconds": advice.budget_seconds,
            "within_budget": advice.within_budget,
            "suggestions": [
                {"kind": s.kind, "description": s.description,
                 "predicted_seconds": s.predicted_seconds,
                 "total_flop": _num(s.total_flop),
                 "thread_count": s.thread_count}
                for s in advice.suggestions],
        }
        if advice.strategy is not None:
            payload["strategy"] = {
                "strategy": advice.strategy.strategy,
                "votes": advice.strategy.votes,
                "conflicts": list(advice.strategy.conflicts),
            }
        print(json.dumps(payload, indent=2))
    else:
        print(f"predicted_seconds {advice.predicted_seconds!r}")
        print(f"budget_seconds {advice.budget_seconds!r}")
        print(f"within_budget {str(advice.within_budget).lower()}")
        if advice.within_budget:
            print("no changes needed")
        elif not advice.suggestions:
            print("no candidate re-specification fits the budget")
        for i, s in enumerate(advice.suggestions, start=1):
            print(f"{i}. [{s.kind}] {s.description} -> "
                  f"{s.predicted_seconds:.3f} s")
        if advice.strategy is not None:
            st = advice.strategy
            line = f"parallelization strategy: {st.strategy}"
            if st.conflicts:
                line += f" (conflicting factors: {', '.join(st.conflicts)})"
            print(line)
    return 0


# --------------------------------------------------------------------------
# parser


def _build_parser() -> _Parser:
    parser = _Parser(prog="advectum",
                     description="particle advection performance laboratory")
    sub = parser.add_subparsers(dest="command")

    run = sub.add_parser("run", help="advect a workload and summarize it")
    run.add_argument("--config", help="JSON config file; flags override it")
    run.add_argument("--mesh", choices=MESH_TYPES, dest="mesh")
    run.add_argument("--d", type=int)
    run.add_argument("--field",
                     help="circular|saddle|shear|constant(cx,cy,cz)")
    run.add_argument("--preset",
                     help=f"workload preset: {', '.join(preset_names())} "
                          "or seeding-seeds-steps")
    run.add_argument("--seeding", choices=SEEDING_KINDS)
    run.add_argument("--particles", type=int)
    run.add_argument("--steps", type=int)
    run.add_argument("--solver", choices=SOLVER_KINDS)
    run.add_argument("--h", type=float)
    run.add_argument("--tol", type=float)
    run.add_argument("--max-time", type=float, dest="max_time")
    run.add_argument("--seed-frac", type=float, dest="seed_frac",
                     help="confine seeds to this fraction of the extent")
    run.add_argument("--rng-seed", type=int, dest="rng_seed")
    run.add_argument("--analyzer", choices=ANALYZER_KINDS)
    run.add_argument("--threads", type=int)
    run.add_argument("--backend", choices=BACKENDS)
    run.add_argument("--locator",
                     choices=("auto", "celltree", "celltree+walk"))
    run.add_argument("--summary", help="also write the summary JSON here")
    run.add_argument("--streamlines", help="write polylines here")
    run.add_argument("--flow-map", dest="flow_map",
                     help="write the flow map CSV here")
    run.add_argument("--ftle", help="write the FTLE CSV here")
    run.add_argument("--ftle-horizon", type=float, dest="ftle_horizon")
    run.set_defaults(func=cmd_run)

    est = sub.add_parser("estimate", help="analytic FLOP cost of a workload")
    est.add_argument("--particles", type=int, required=True)
    est.add_argument("--steps", type=int, required=True)
    est.add_argument("--solver", choices=SOLVER_KINDS, default="rk4")
    est.add_argument("--mesh", choices=MESH_TYPES, default="uniform")
    est.add_argument("--d", type=int, default=None)
    est.add_argument("--analyze", type=float, default=None,
                     help="per-step analysis FLOPs (default 0)")
    est.add_argument("--constants", help="cost constants JSON file")
    est.add_argument("--format", choices=("text", "json", "csv"),
                     default="text")
    est.set_defaults(func=cmd_estimate)

    cal = sub.add_parser("calibrate",
                         help="fit seconds-per-FLOP from measured runs")
    cal.add_argument("samples", help="CSV with predicted_flop and "
                                     "measured_seconds columns")
    cal.add_argument("--out", default="calibration.json")
    cal.add_argument("--machine", default=None)
    cal.set_defaults(func=cmd_calibrate)

    val = sub.add_parser("validate",
                         help="measure the built-in suite and fit the model")
    val.add_argument("--d", type=int, default=50)
    val.add_argument("--repeats", type=int, default=3)
    val.add_argument("--threshold", type=float, default=0.95)
    val.add_argument("--scale", type=float, default=1.0,
                     help="scale every row's step count (smoke testing)")
    val.add_argument("--out-csv", dest="out_csv", default="validate.csv")
    val.add_argument("--report", default="validate_report.json")
    val.add_argument("--model-out", dest="model_out",
                     default="calibration.json")
    val.add_argument("--backend", choices=BACKENDS, default=None)
    val.set_defaults(func=cmd_validate)

    adv = sub.add_parser("advise",
                         help="compare predicted time against a budget")
    adv.add_argument("--model", required=True,
                     help="calibration model JSON from calibrate/validate")
    adv.add_argument("--budget", type=float, required=True)
    adv.add_argument("--particles", type=int, required=True)
    adv.add_argument("--steps", type=int, required=True)
    adv.add_argument("--solver", choices=SOLVER_KINDS, default="rk4")
    adv.add_argument("--mesh", choices=MESH_TYPES, default="uniform")
    adv.add_argument("--d", type=int, default=None)
    adv.add_argument("--analyze", type=float, default=None)
    adv.add_argument("--constants", help="cost constants JSON file")
    adv.add_argument("--hint-dataset-size", choices=("small", "large"),
                     dest="hint_dataset_size", default=None)
    adv.add_argument("--hint-particle-count", choices=("small", "large"),
                     dest="hint_particle_count", default=None)
    adv.add_argument("--hint-seed-distribution", choices=("sparse", "dense"),
                     dest="hint_seed_distribution", default=None)
    adv.add_argument("--hint-field-complexity",
                     choices=("critical_points", "circular", "benign"),
                     dest="hint_field_complexity", default=None)
    adv.add_argument("--available-threads", type=int,
                     dest="available_threads", default=None)
    adv.add_argument("--current-threads", type=int,
                     dest="current_threads", default=None)
    adv.add_argument("--format", choices=("text", "json"), default="text")
    adv.set_defaults(func=cmd_advise)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    if getattr(args, "command", None) is None:
        parser.print_help(sys.stderr)
        return 1
    try:
        return args.func(args)
    except (ConfigError, MeshError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
