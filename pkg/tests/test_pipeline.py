import json

import numpy as np
import pytest

from dirac_vacua import arrayio, pipeline
from dirac_vacua.config import Config, from_dict
from dirac_vacua.errors import ConfigError, DiracVacuaError


def flat_cfg(**grid):
    cfg = Config()
    cfg.family.name = "flat"
    cfg.family.params = {}
    cfg.grid.points = grid.get("points", 16)
    cfg.grid.t_max = grid.get("t_max", 40.0)
    cfg.scattering.t_first = 5.0
    return cfg


def bump_cfg(mu=1.5, points=32, t_max=160.0):
    cfg = Config()
    cfg.family.params = {"mu": mu}
    cfg.grid.points = points
    cfg.grid.t_max = t_max
    cfg.scattering.directions = ["out"]
    return cfg


@pytest.fixture(scope="module")
def flat_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("flat")
    return root, pipeline.run(flat_cfg(), root)


@pytest.fixture(scope="module")
def bump_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("bump")
    return root, pipeline.run(bump_cfg(), root)


def test_flat_run_has_vacuum_in_and_out(flat_run):
    _, outcome = flat_run
    report = json.loads((outcome.run_dir / pipeline.REPORT).read_text())
    assert report["passed"]
    assert report["stages"] == ["geometry", "assembly", "evolution", "scattering", "states"]
    for d in ("out", "in"):
        assert report["states"][d]["distance_to_vacuum"] <= 1e-6
    assert report["scattering"]["out_in_difference"] <= 1e-6
    assert "static_out_in" in report["checks"]


def test_bump_run_recovers_decay_rate(bump_run):
    _, outcome = bump_run
    assert outcome.summary["passed"]
    assert 1.2 <= outcome.summary["mu_hat_out"] <= 1.8
    assert outcome.summary["identity_max"] <= 1e-6


def test_manifest_hashes_every_file(bump_run):
    _, outcome = bump_run
    files = outcome.manifest["files"]
    assert pipeline.REPORT in files
    assert "arrays/c_plus_out.dva" in files
    assert any(k.startswith("plots/moller_out") for k in files)
    assert pipeline._complete(outcome.run_dir, outcome.manifest["config_hash"])


def test_saved_projection_matches_recomputation(bump_run):
    _, outcome = bump_run
    c = arrayio.load(outcome.run_dir / "arrays" / "c_plus_out.dva")
    again = pipeline.execute(bump_cfg())
    assert np.array_equal(c, again.arrays["c_plus_out"])


def test_plot_tables_have_declared_columns(bump_run):
    _, outcome = bump_run
    rows = pipeline.read_csv(outcome.run_dir / "plots" / "moller_out.csv")
    assert list(rows[0]) == pipeline.PLOT_COLUMNS["moller_{d}.csv"]
    report = json.loads((outcome.run_dir / pipeline.REPORT).read_text())
    assert len(rows) == len(report["scattering"]["out"]["schedule"])


def test_completed_run_is_skipped(bump_run):
    root, outcome = bump_run
    report_bytes = (outcome.run_dir / pipeline.REPORT).read_bytes()
    again = pipeline.run(bump_cfg(), root)
    assert again.skipped
    assert again.manifest["results_hash"] == outcome.manifest["results_hash"]
    assert (outcome.run_dir / pipeline.REPORT).read_bytes() == report_bytes


def test_tampered_run_is_recomputed(tmp_path):
    cfg = flat_cfg()
    first = pipeline.run(cfg, tmp_path)
    target = first.run_dir / pipeline.REPORT
    target.write_text(target.read_text() + " ")
    assert not pipeline._complete(first.run_dir, cfg.digest())
    second = pipeline.run(cfg, tmp_path)
    assert not second.skipped
    assert second.manifest["results_hash"] == first.manifest["results_hash"]


def test_seed_changes_config_hash_only():
    a, b = flat_cfg(), flat_cfg()
    b.run.seed = 7
    assert a.digest() != b.digest()
    assert pipeline.run_dir_for(a, "r") != pipeline.run_dir_for(b, "r")


def test_errors_carry_stage():
    cfg = bump_cfg(t_max=20.0)
    cfg.scattering.t_first = 10.0
    with pytest.raises(DiracVacuaError) as info:
        pipeline.execute(cfg)
    assert getattr(info.value, "stage", None) == "scattering"
    assert "[stage scattering]" in str(info.value)


def test_failed_tolerance_is_reported_not_raised():
    cfg = flat_cfg()
    cfg.diagnostics.sum_rule_tol = 1e-300
    cfg.diagnostics.equation_tol = 1e-300
    out = pipeline.execute(cfg)
    assert not out.report["passed"]
    assert not out.report["checks"]["equation_out"]["passed"]


def test_sweep_rows_track_mu(tmp_path):
    cfg = bump_cfg(points=16, t_max=80.0)
    cfg.sweep = {"family.mu": [0.5, 1.0, 1.5]}
    outcome = pipeline.sweep(cfg, tmp_path)
    assert [r["status"] for r in outcome.rows] == ["ok"] * 3
    assert [r["mu"] for r in outcome.rows] == [0.5, 1.0, 1.5]
    mu_hat = [r["mu_hat_out"] for r in outcome.rows]
    assert mu_hat == sorted(mu_hat)
    rows = pipeline.read_csv(outcome.csv_path)
    assert list(rows[0]) == pipeline.SWEEP_COLUMNS
    assert [float(r["mu_hat_out"]) for r in rows] == mu_hat

    again = pipeline.sweep(cfg, tmp_path, resume=True)
    assert again.reused == 3
    assert again.csv_path.read_text() == outcome.csv_path.read_text()


def test_sweep_failure_becomes_a_row(tmp_path):
    cfg = bump_cfg(points=16, t_max=80.0)
    cfg.sweep = {"grid.points": [16, 15]}
    outcome = pipeline.sweep(cfg, tmp_path)
    assert [r["status"] for r in outcome.rows] == ["ok", "failed"]
    assert "grid.points" in outcome.rows[1]["reason"]


def test_empty_sweep_grid_writes_header_only(tmp_path):
    cfg = flat_cfg()
    cfg.sweep = {"family.mu": []}
    outcome = pipeline.sweep(cfg, tmp_path)
    assert outcome.rows == []
    assert outcome.csv_path.read_text() == ",".join(pipeline.SWEEP_COLUMNS) + "\n"


def test_odd_grid_is_a_config_error():
    with pytest.raises(ConfigError, match="grid.points"):
        from_dict({"grid": {"points": 33}})


def test_dumps_is_json_safe():
    text = pipeline.dumps({"a": float("inf"), "b": np.float64(1.5), "c": np.int64(2),
                           "d": (np.bool_(True),)})
    assert json.loads(text) == {"a": "inf", "b": 1.5, "c": 2, "d": [True]}
