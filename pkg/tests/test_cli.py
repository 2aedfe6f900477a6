"""End-to-end checks of the command line interface.

Every test calls advectum.cli.main(argv) in process and inspects the exit
code, captured stdout/stderr, and any files the command writes.
"""

import json
import math

import pytest

from advectum.cli import ConfigError, main, validation_suite
from advectum.costmodel import CalibrationModel


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


# --------------------------------------------------------------------------
# top-level contract


def test_no_command_prints_help(capsys):
    code, _, err = run_cli(capsys)
    assert code == 1
    assert "usage" in err


def test_unknown_command_is_usage_error(capsys):
    code, _, err = run_cli(capsys, "frobnicate")
    assert code == 1
    assert "usage error" in err


def test_bad_flag_value_is_usage_error(capsys):
    code, _, err = run_cli(capsys, "estimate", "--particles", "lots",
                           "--steps", "1")
    assert code == 1
    assert "usage error" in err


# --------------------------------------------------------------------------
# estimate


def test_estimate_reference_workload_text(capsys):
    code, out, _ = run_cli(capsys, "estimate", "--particles", "1000000",
                           "--steps", "1000")
    assert code == 0
    assert out.strip() == "162000000000"


def test_estimate_euler_rectilinear_single_step(capsys):
    code, out, _ = run_cli(capsys, "estimate", "--particles", "1",
                           "--steps", "1", "--solver", "euler",
                           "--mesh", "rectilinear")
    assert code == 0
    assert out.strip() == "43"


def test_estimate_zero_particles(capsys):
    code, out, _ = run_cli(capsys, "estimate", "--particles", "0",
                           "--steps", "1")
    assert code == 0
    assert out.strip() == "0"


def test_estimate_json_breakdown(capsys):
    code, out, _ = run_cli(capsys, "estimate", "--particles", "1000000",
                           "--steps", "1000", "--format", "json")
    assert code == 0
    payload = json.loads(out)
    assert payload["total_flop"] == 162000000000
    assert payload["breakdown"] == {
        "solve": 37000000000,
        "locate": 60000000000,
        "interp": 60000000000,
        "analyze": 0,
        "terminate": 5000000000,
    }
    assert sum(payload["breakdown"].values()) == payload["total_flop"]


def test_estimate_csv_matches_json(capsys):
    code, out, _ = run_cli(capsys, "estimate", "--particles", "1000000",
                           "--steps", "1000", "--format", "csv")
    assert code == 0
    header, values = out.strip().splitlines()
    cols = header.split(",")
    assert cols == ["total_flop", "solve", "locate", "interp", "analyze",
                    "terminate"]
    row = dict(zip(cols, (int(v) for v in values.split(","))))
    assert row["total_flop"] == 162000000000
    assert row["locate"] == 60000000000


def test_estimate_analyze_flag_adds_per_step_cost(capsys):
    # euler/uniform is 41 FLOPs per step; --analyze 2 makes it 43
    code, out, _ = run_cli(capsys, "estimate", "--particles", "10",
                           "--steps", "10", "--solver", "euler",
                           "--analyze", "2")
    assert code == 0
    assert out.strip() == "4300"


@pytest.mark.parametrize("d,expected", [(2, "824"), (50, "964")])
def test_estimate_d_moves_unstructured_location_cost(capsys, d, expected):
    code, out, _ = run_cli(capsys, "estimate", "--particles", "1",
                           "--steps", "1", "--solver", "euler",
                           "--mesh", "unstructured", "--d", str(d))
    assert code == 0
    assert out.strip() == expected


def test_estimate_constants_file(tmp_path, capsys):
    from advectum.costmodel import CostConstants

    path = tmp_path / "constants.json"
    CostConstants(d=2).save(path)
    code, out, _ = run_cli(capsys, "estimate", "--particles", "1",
                           "--steps", "1", "--solver", "euler",
                           "--mesh", "unstructured", "--constants",
                           str(path))
    assert code == 0
    assert out.strip() == "824"


# --------------------------------------------------------------------------
# run


def _write_config(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


_BASE_CFG = {
    "dataset": {"kind": "uniform", "d": 6, "field": "circular"},
    "workload": {"seeding": "sparse", "particles": 8, "steps": 20,
                 "rng_seed": 7},
}


def test_run_minimal_config(tmp_path, capsys):
    cfg = _write_config(tmp_path, _BASE_CFG)
    code, out, _ = run_cli(capsys, "run", "--config", cfg)
    assert code == 0
    summary = json.loads(out)
    assert summary["dataset"] == {"kind": "uniform", "d": 6,
                                  "field": "circular", "points": 216,
                                  "cells": 125}
    assert summary["workload"]["solver"] == "rk4"
    assert summary["workload"]["particles"] == 8
    assert sum(summary["status_counts"].values()) == 8
    assert 0 < summary["total_steps"] <= 8 * 20
    assert summary["wall_seconds"] >= 0


def test_run_flags_override_config(tmp_path, capsys):
    cfg = _write_config(tmp_path, _BASE_CFG)
    code, out, _ = run_cli(capsys, "run", "--config", cfg,
                           "--solver", "euler", "--particles", "4")
    assert code == 0
    summary = json.loads(out)
    assert summary["workload"]["solver"] == "euler"
    assert summary["workload"]["particles"] == 4


def test_run_is_deterministic_apart_from_wall_time(tmp_path, capsys):
    cfg = _write_config(tmp_path, _BASE_CFG)
    code, out1, _ = run_cli(capsys, "run", "--config", cfg)
    assert code == 0
    code, out2, _ = run_cli(capsys, "run", "--config", cfg)
    assert code == 0
    a, b = json.loads(out1), json.loads(out2)
    a.pop("wall_seconds")
    b.pop("wall_seconds")
    assert a == b


def test_run_summary_file_matches_stdout(tmp_path, capsys):
    cfg = _write_config(tmp_path, _BASE_CFG)
    summary_path = tmp_path / "summary.json"
    code, out, _ = run_cli(capsys, "run", "--config", cfg,
                           "--summary", str(summary_path))
    assert code == 0
    assert summary_path.read_text() == out


def test_run_missing_field_is_named(tmp_path, capsys):
    cfg = _write_config(tmp_path, {
        "dataset": {"kind": "uniform", "field": "circular"},
        "workload": {"seeding": "sparse", "particles": 4, "steps": 5},
    })
    code, _, err = run_cli(capsys, "run", "--config", cfg)
    assert code == 1
    assert "dataset: missing required field 'd'" in err


def test_run_missing_dataset_section(tmp_path, capsys):
    cfg = _write_config(tmp_path, {"workload": {"preset": "streamlines"}})
    code, _, err = run_cli(capsys, "run", "--config", cfg)
    assert code == 1
    assert "missing required section 'dataset'" in err


def test_run_config_file_not_found(tmp_path, capsys):
    code, _, err = run_cli(capsys, "run", "--config",
                           str(tmp_path / "nope.json"))
    assert code == 1
    assert "not found" in err


def test_run_invalid_json_reports_position(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text("{ this is not json")
    code, _, err = run_cli(capsys, "run", "--config", str(path))
    assert code == 1
    assert "invalid JSON" in err


def test_run_preset_conflicts_with_explicit_fields(tmp_path, capsys):
    cfg = _write_config(tmp_path, {
        "dataset": {"kind": "uniform", "d": 6, "field": "circular"},
        "workload": {"preset": "streamlines", "particles": 4},
    })
    code, _, err = run_cli(capsys, "run", "--config", cfg)
    assert code == 1
    assert "preset conflicts with" in err


def test_run_preset_from_flags(capsys):
    # d=11 gives exactly 1000 cells, the smallest dataset whose single
    # seed still classifies as a 'small' particle count
    code, out, _ = run_cli(capsys, "run", "--mesh", "uniform", "--d", "11",
                           "--field", "circular", "--preset", "streamlines")
    assert code == 0
    summary = json.loads(out)
    assert summary["workload"]["particles"] == 1
    assert summary["workload"]["max_steps"] == 10000


def test_run_preset_class_mismatch_is_config_error(capsys):
    code, _, err = run_cli(capsys, "run", "--mesh", "uniform", "--d", "6",
                           "--field", "circular", "--preset", "streamlines")
    assert code == 1
    assert "'small'" in err


def test_run_streamlines_require_streamline_analyzer(tmp_path, capsys):
    cfg = _write_config(tmp_path, _BASE_CFG)
    code, _, err = run_cli(capsys, "run", "--config", cfg,
                           "--streamlines", str(tmp_path / "s.txt"))
    assert code == 1
    assert "streamline analyzer" in err


def test_run_writes_streamlines(tmp_path, capsys):
    out_path = tmp_path / "lines.txt"
    code, out, _ = run_cli(
        capsys, "run", "--mesh", "uniform", "--d", "6",
        "--field", "constant(0.01,0,0)", "--seeding", "sparse",
        "--particles", "2", "--steps", "5", "--seed-frac", "0.5",
        "--rng-seed", "3", "--analyzer", "streamline",
        "--streamlines", str(out_path))
    assert code == 0
    summary = json.loads(out)
    assert summary["status_counts"]["terminated_steps"] == 2
    lines = out_path.read_text().splitlines()
    heads = [ln for ln in lines if ln.startswith("particle ")]
    assert heads == ["particle 0", "particle 1"]
    # each particle records its seed plus five accepted steps
    assert len(lines) == 2 * (1 + 6)
    assert all(len(ln.split()) == 4 for ln in lines
               if not ln.startswith("particle"))


def test_run_ftle_requires_packed_seeding(tmp_path, capsys):
    cfg = _write_config(tmp_path, _BASE_CFG)
    code, _, err = run_cli(capsys, "run", "--config", cfg,
                           "--analyzer", "flow_map",
                           "--ftle", str(tmp_path / "f.csv"),
                           "--ftle-horizon", "0.5")
    assert code == 1
    assert "packed seeding" in err


def test_run_ftle_requires_horizon(tmp_path, capsys):
    code, _, err = run_cli(
        capsys, "run", "--mesh", "uniform", "--d", "6",
        "--field", "circular", "--seeding", "packed", "--particles", "27",
        "--steps", "3", "--analyzer", "flow_map",
        "--ftle", str(tmp_path / "f.csv"))
    assert code == 1
    assert "ftle_horizon" in err


def test_run_writes_flow_map_and_ftle(tmp_path, capsys):
    fm_path = tmp_path / "fm.csv"
    ftle_path = tmp_path / "ftle.csv"
    code, _, _ = run_cli(
        capsys, "run", "--mesh", "uniform", "--d", "6",
        "--field", "circular", "--seeding", "packed", "--particles", "27",
        "--steps", "3", "--analyzer", "flow_map",
        "--flow-map", str(fm_path), "--ftle", str(ftle_path),
        "--ftle-horizon", "0.5")
    assert code == 0

    fm_lines = fm_path.read_text().splitlines()
    assert fm_lines[0] == "seed_x,seed_y,seed_z,end_x,end_y,end_z,time"
    assert len(fm_lines) == 1 + 27

    ftle_lines = ftle_path.read_text().splitlines()
    assert ftle_lines[0] == "ix,iy,iz,x,y,z,ftle"
    assert len(ftle_lines) == 1 + 27
    values = {}
    for ln in ftle_lines[1:]:
        ix, iy, iz, _, _, _, v = ln.split(",")
        values[(int(ix), int(iy), int(iz))] = float(v)
    # only the lattice center is interior on a 3x3x3 grid
    assert math.isfinite(values[(1, 1, 1)])
    assert math.isnan(values[(0, 0, 0)])
    assert math.isnan(values[(2, 2, 2)])


# --------------------------------------------------------------------------
# calibrate


def _write_samples(tmp_path, rows, header="predicted_flop,measured_seconds"):
    path = tmp_path / "samples.csv"
    path.write_text("\n".join([header] + rows) + "\n")
    return str(path)


def test_calibrate_exact_line(tmp_path, capsys):
    samples = _write_samples(tmp_path, [
        "1000000000,1.0", "2000000000,2.0", "4000000000,4.0"])
    out_path = tmp_path / "model.json"
    code, out, _ = run_cli(capsys, "calibrate", samples,
                           "--out", str(out_path), "--machine", "testbox")
    assert code == 0
    assert "m 1e-09" in out
    assert "b 0.0" in out
    assert "r_squared 1.0" in out
    assert "samples 3" in out
    model = CalibrationModel.load(out_path)
    assert model.m == 1e-9
    assert model.b == 0.0
    assert model.r_squared == 1.0
    assert model.machine == "testbox"


def test_calibrate_accepts_extra_columns(tmp_path, capsys):
    samples = _write_samples(
        tmp_path,
        ["a,1000,1.0", "b,2000,2.0", "c,4000,4.0"],
        header="label,predicted_flop,measured_seconds")
    code, out, _ = run_cli(capsys, "calibrate", samples,
                           "--out", str(tmp_path / "m.json"))
    assert code == 0
    assert "r_squared 1.0" in out


def test_calibrate_missing_file(tmp_path, capsys):
    code, _, err = run_cli(capsys, "calibrate",
                           str(tmp_path / "nope.csv"),
                           "--out", str(tmp_path / "m.json"))
    assert code == 1
    assert "not found" in err


def test_calibrate_missing_column(tmp_path, capsys):
    samples = _write_samples(tmp_path, ["1.0,2.0"], header="flop,seconds")
    code, _, err = run_cli(capsys, "calibrate", samples,
                           "--out", str(tmp_path / "m.json"))
    assert code == 1
    assert "missing column 'predicted_flop'" in err


def test_calibrate_non_numeric_row(tmp_path, capsys):
    samples = _write_samples(tmp_path, [
        "1000,1.0", "2000,fast", "4000,4.0"])
    code, _, err = run_cli(capsys, "calibrate", samples,
                           "--out", str(tmp_path / "m.json"))
    assert code == 1
    assert ":3: non-numeric sample row" in err


def test_calibrate_needs_three_distinct_samples(tmp_path, capsys):
    samples = _write_samples(tmp_path, [
        "1000,1.0", "1000,1.1", "1000,0.9"])
    code, _, err = run_cli(capsys, "calibrate", samples,
                           "--out", str(tmp_path / "m.json"))
    assert code == 1
    assert "3" in err


def test_calibrate_rejects_negative_slope(tmp_path, capsys):
    samples = _write_samples(tmp_path, [
        "1000,4.0", "2000,2.0", "4000,1.0"])
    code, _, err = run_cli(capsys, "calibrate", samples,
                           "--out", str(tmp_path / "m.json"))
    assert code == 1
    assert "not positive" in err


# --------------------------------------------------------------------------
# validate


def test_validation_suite_shape():
    rows = validation_suite(50)
    assert len(rows) == 12
    labels = [r[0] for r in rows]
    assert len(set(labels)) == 12
    pairs = {(solver, mesh) for _, solver, mesh, _, _ in rows}
    assert pairs == {(s, m) for s in ("euler", "rk4")
                     for m in ("uniform", "rectilinear", "unstructured")}


def test_validation_suite_scales_steps():
    full = {r[0]: r[4] for r in validation_suite(50)}
    half = {r[0]: r[4] for r in validation_suite(50, scale=0.5)}
    assert all(half[k] == max(1, round(full[k] * 0.5)) for k in full)
    tiny = validation_suite(50, scale=1e-9)
    assert all(r[4] == 1 for r in tiny)


def test_validation_suite_rejects_bad_scale():
    with pytest.raises(ConfigError):
        validation_suite(50, scale=0)


def test_validate_rejects_bad_arguments(tmp_path, capsys):
    code, _, err = run_cli(capsys, "validate", "--d", "1")
    assert code == 1
    assert "d must be >= 2" in err
    code, _, err = run_cli(capsys, "validate", "--repeats", "0")
    assert code == 1
    assert "repeats must be >= 1" in err


def test_validate_smoke_run_and_calibrate_roundtrip(tmp_path, capsys):
    csv_path = tmp_path / "validate.csv"
    report_path = tmp_path / "report.json"
    model_path = tmp_path / "model.json"
    code, out, err = run_cli(
        capsys, "validate", "--d", "8", "--scale", "0.01",
        "--repeats", "1", "--threshold", "0.0",
        "--out-csv", str(csv_path), "--report", str(report_path),
        "--model-out", str(model_path))
    assert code == 0
    assert "verdict pass" in out
    assert "rows 12" in out

    lines = csv_path.read_text().splitlines()
    assert lines[0] == "label,mesh,solver,P,N,predicted_flop,measured_seconds"
    assert len(lines) == 1 + 12

    report = json.loads(report_path.read_text())
    assert report["passed"] is True
    assert report["d"] == 8
    assert len(report["rows"]) == 12
    assert report["model"]["m"] > 0
    flops = [r["predicted_flop"] for r in report["rows"]]
    assert flops == sorted(flops)
    assert len(set(flops)) == 12

    # refitting from the CSV must land on the identical model: the file
    # stores full-precision reprs, so the OLS sees the same floats
    model2_path = tmp_path / "model2.json"
    code, _, _ = run_cli(capsys, "calibrate", str(csv_path),
                         "--out", str(model2_path))
    assert code == 0
    first = CalibrationModel.load(model_path)
    second = CalibrationModel.load(model2_path)
    assert second.m == first.m
    assert second.b == first.b
    assert second.r_squared == first.r_squared


def test_validate_threshold_failure_exits_two(tmp_path, capsys):
    code, out, _ = run_cli(
        capsys, "validate", "--d", "8", "--scale", "0.002",
        "--repeats", "1", "--threshold", "1.0",
        "--out-csv", str(tmp_path / "v.csv"),
        "--report", str(tmp_path / "r.json"),
        "--model-out", str(tmp_path / "m.json"))
    assert code == 2
    assert "verdict fail" in out
    # the model is still written so the run is not wasted
    assert (tmp_path / "m.json").exists()


# --------------------------------------------------------------------------
# advise


def _model_file(tmp_path, m=1e-9, b=0.0):
    path = tmp_path / "cal.json"
    CalibrationModel(m=m, b=b, r_squared=0.99, sample_count=12,
                     machine="testbox").save(path)
    return str(path)


def test_advise_missing_model_points_at_calibrate(tmp_path, capsys):
    code, _, err = run_cli(capsys, "advise",
                           "--model", str(tmp_path / "none.json"),
                           "--budget", "10",
                           "--particles", "100", "--steps", "10")
    assert code == 1
    assert "advectum calibrate" in err


def test_advise_within_budget(tmp_path, capsys):
    model = _model_file(tmp_path)
    code, out, _ = run_cli(capsys, "advise", "--model", model,
                           "--budget", "10",
                           "--particles", "1000", "--steps", "10")
    assert code == 0
    assert "within_budget true" in out
    assert "no changes needed" in out


def test_advise_over_budget_orders_suggestions(tmp_path, capsys):
    model = _model_file(tmp_path)
    code, out, _ = run_cli(
        capsys, "advise", "--model", model, "--budget", "100",
        "--particles", "1000000", "--steps", "1000",
        "--available-threads", "8", "--current-threads", "1",
        "--format", "json")
    assert code == 0
    payload = json.loads(out)
    assert payload["within_budget"] is False
    assert payload["predicted_seconds"] == pytest.approx(162.0, rel=1e-12)
    kinds = [s["kind"] for s in payload["suggestions"]]
    # euler re-spec (41 s) beats doubling the threads (81 s)
    assert kinds == ["solver_downgrade", "thread_count"]
    assert payload["suggestions"][0]["total_flop"] == 41000000000
    assert payload["suggestions"][1]["thread_count"] == 2
    assert payload["suggestions"][1]["predicted_seconds"] == pytest.approx(
        81.0, rel=1e-12)


def test_advise_resample_suggested_for_unstructured(tmp_path, capsys):
    model = _model_file(tmp_path)
    code, out, _ = run_cli(
        capsys, "advise", "--model", model, "--budget", "200",
        "--particles", "1000000", "--steps", "1000",
        "--mesh", "unstructured", "--format", "json")
    assert code == 0
    payload = json.loads(out)
    kinds = {s["kind"] for s in payload["suggestions"]}
    assert "mesh_resample" in kinds


def test_advise_no_candidate_fits(tmp_path, capsys):
    model = _model_file(tmp_path)
    code, out, _ = run_cli(
        capsys, "advise", "--model", model, "--budget", "0.0001",
        "--particles", "1000000", "--steps", "1000",
        "--solver", "euler", "--available-threads", "1")
    assert code == 0
    assert "no candidate re-specification fits the budget" in out


def test_advise_json_strategy_unanimous(tmp_path, capsys):
    model = _model_file(tmp_path)
    code, out, _ = run_cli(
        capsys, "advise", "--model", model, "--budget", "1000",
        "--particles", "100", "--steps", "10",
        "--hint-dataset-size", "large", "--hint-particle-count", "small",
        "--hint-seed-distribution", "sparse",
        "--hint-field-complexity", "circular", "--format", "json")
    assert code == 0
    payload = json.loads(out)
    assert payload["strategy"]["strategy"] == "parallelize-over-data"
    assert payload["strategy"]["conflicts"] == []
    assert set(payload["strategy"]["votes"]) == {
        "dataset_size", "particle_count", "seed_distribution",
        "field_complexity"}


def test_advise_text_strategy_reports_conflicts(tmp_path, capsys):
    model = _model_file(tmp_path)
    code, out, _ = run_cli(
        capsys, "advise", "--model", model, "--budget", "1000",
        "--particles", "100", "--steps", "10",
        "--hint-dataset-size", "large", "--hint-particle-count", "large",
        "--hint-seed-distribution", "dense",
        "--hint-field-complexity", "critical_points")
    assert code == 0
    assert ("parallelization strategy: parallelize-over-particles "
            "(conflicting factors: dataset_size)") in out


def test_advise_without_hints_has_no_strategy(tmp_path, capsys):
    model = _model_file(tmp_path)
    code, out, _ = run_cli(capsys, "advise", "--model", model,
                           "--budget", "10",
                           "--particles", "100", "--steps", "10",
                           "--format", "json")
    assert code == 0
    assert "strategy" not in json.loads(out)
