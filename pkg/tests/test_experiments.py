"""Study-harness tests: summary arithmetic, persistence, degenerate cases."""

import math

import numpy as np
import pytest

from psdbp.errors import NonConvergenceError, ParameterDomainError
from psdbp.experiments import (
    EstimateRecord,
    ExperimentConfig,
    SummaryTable,
    estimator_label,
    read_records_csv,
    run_coverage_study,
    run_growing_study,
    run_stationary_study,
)
from psdbp.models import OffspringModel
from psdbp.simulate import SimConfig

BH_GEO = OffspringModel("bh", "geometric")
BH_BIN = OffspringModel("bh", "binary")


def _small_config(tmp_path, **overrides):
    defaults = dict(
        model=BH_GEO,
        theta0=(10.0, 2.0),
        sim=SimConfig(initial_size=2, horizon=60, replications=4, seed=42,
                      condition_on_survival=True),
        horizons=(60,),
        estimators=(("w2", "qprocess"), ("w1", "raw")),
        out_dir=str(tmp_path),
        label="t",
        grid_shape=(3, 3),
        refine_top_k=1,
    )
    defaults.update(overrides)
    return ExperimentConfig(**defaults)


def test_rmse_definition_reproduces_reference_cells():
    # relative MSE ((mean - truth)^2 + SD^2) / truth^2 against two
    # published K and v summary cells, to three decimals
    k_rmse = ((97.458 - 100.0) ** 2 + 62.931**2) / 100.0**2
    assert abs(k_rmse - 0.396) < 1e-3
    v_rmse = ((0.632 - 0.6) ** 2 + 0.052**2) / 0.6**2
    assert abs(v_rmse - 0.010) < 1e-3


def test_summary_table_from_records():
    records = [
        EstimateRecord(0, 25, "w2", "qprocess", 97.0, 0.61, 0.0, True),
        EstimateRecord(1, 25, "w2", "qprocess", 103.0, 0.59, 0.0, True),
    ]
    table = SummaryTable.from_records(records, (100.0, 0.6), ("K", "v"))
    rows = {(r[0], r[1]): r for r in table.rows}
    label = estimator_label("w2", "qprocess")
    mean_k = rows[(label, "K")][3]
    sd_k = rows[(label, "K")][5]
    assert mean_k == pytest.approx(100.0)
    assert sd_k == pytest.approx(np.std([97.0, 103.0], ddof=1))
    assert rows[(label, "K")][6] == pytest.approx((0.0 + sd_k**2) / 100.0**2)


def test_single_record_has_zero_sd_and_median_equals_mean():
    records = [EstimateRecord(0, 10, "w1", "raw", 42.0, 0.5, 0.0, True)]
    table = SummaryTable.from_records(records, (40.0, 0.6), ("K", "v"))
    _, _, _, mean, median, sd, _ = table.rows[0]
    assert sd == 0.0 and mean == median == 42.0


def test_nan_records_are_excluded_from_summaries():
    records = [
        EstimateRecord(0, 10, "w1", "raw", 42.0, 0.5, 0.0, True),
        EstimateRecord(1, 10, "w1", "raw", math.nan, math.nan, math.nan, False),
    ]
    table = SummaryTable.from_records(records, (40.0, 0.6), ("K", "v"))
    assert table.rows[0][3] == 42.0


def test_growing_study_smoke_and_reaggregation(tmp_path):
    config = _small_config(tmp_path)
    result = run_growing_study(config)
    assert len(result.records) == 4 * 2
    assert all(r.converged for r in result.records)
    # persisted per-replication estimates reproduce the table bit-exactly
    persisted = read_records_csv(tmp_path / "t_estimates.csv")
    table2 = SummaryTable.from_records(persisted, config.theta0, config.param_names())
    assert table2 == result.table
    assert (tmp_path / "t_differences.csv").exists()


def test_growing_study_requires_conditioning(tmp_path):
    with pytest.raises(ParameterDomainError):
        run_growing_study(_small_config(
            tmp_path,
            sim=SimConfig(initial_size=2, horizon=60, replications=4, seed=42),
        ))


def test_pooled_study_fits_once_per_estimator(tmp_path):
    config = _small_config(tmp_path, pooled=True)
    result = run_growing_study(config)
    assert len(result.records) == 2
    assert all(r.rep == -1 for r in result.records)


def test_stationary_study_emits_overlays(tmp_path):
    config = _small_config(tmp_path, estimators=(("w2", "qprocess"),))
    run_stationary_study(config)
    for name in ("t_histograms.csv", "t_density_overlay.csv", "t_ellipses_w2.csv"):
        assert (tmp_path / name).exists()


def test_coverage_degenerate_levels(tmp_path):
    config = _small_config(tmp_path, estimators=(("w2", "raw"),))
    full = run_coverage_study(config, level=1.0)
    assert full.coverage == {"K": 1.0, "mu": 1.0}
    none = run_coverage_study(config, level=0.0)
    assert all(c == 0.0 for c in none.coverage.values())


def test_coverage_counts_containment(tmp_path):
    config = _small_config(tmp_path, model=BH_GEO, theta0=(20.0, 2.0),
                           estimators=(("w2", "qprocess"),),
                           sim=SimConfig(initial_size=2, horizon=150, replications=4,
                                         seed=9, condition_on_survival=True,
                                         max_attempts=5000),
                           horizons=(150,))
    result = run_coverage_study(config, level=0.95)
    assert set(result.coverage) == {"K", "mu"}
    for value in result.coverage.values():
        assert 0.0 <= value <= 1.0


def test_study_aborts_when_fits_fail(tmp_path):
    config = _small_config(tmp_path, refine_top_k=0)  # no start is ever refined
    with pytest.raises(NonConvergenceError):
        run_growing_study(config)


def test_config_dict_round_trip(tmp_path):
    config = _small_config(tmp_path, compute_ci=True, ci_level=0.9)
    clone = ExperimentConfig.from_dict(config.to_dict(), out_dir=str(tmp_path))
    assert clone == config


def test_config_horizon_validation(tmp_path):
    with pytest.raises(ParameterDomainError):
        _small_config(tmp_path, horizons=())
    with pytest.raises(ParameterDomainError):
        _small_config(tmp_path, horizons=(60, 30))
    with pytest.raises(ParameterDomainError):
        _small_config(tmp_path, horizons=(120,))


def test_workers_do_not_change_results(tmp_path):
    serial = run_growing_study(_small_config(tmp_path, label="s", workers=1))
    parallel = run_growing_study(_small_config(tmp_path, label="p", workers=2))
    assert serial.records == parallel.records


def test_median_error_shrinks_with_horizon(tmp_path):
    # conditioned samples over longer windows pin the capacity down
    config = _small_config(
        tmp_path,
        model=BH_GEO, theta0=(20.0, 2.0),
        sim=SimConfig(initial_size=2, horizon=200, replications=20, seed=3,
                      condition_on_survival=True, max_attempts=5000),
        horizons=(50, 200),
        estimators=(("w2", "qprocess"),),
        workers=2,
    )
    result = run_growing_study(config)
    med = {}
    for horizon in (50, 200):
        errs = [abs(r.k - 20.0) for r in result.records if r.horizon == horizon]
        med[horizon] = np.median(errs)
    assert med[200] <= med[50]
