"""Tests for synthetic data generation, corruption and sweeps."""

import math
import tempfile
from pathlib import Path
from unittest.mock import patch

import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError

import tuckerl2e.simulation as simulation_module
from tuckerl2e.errors import DegenerateDataError, FitError, RankError, ShapeMismatchError
from tuckerl2e.simulation import (
    TABLE_COLUMNS,
    CorruptionSpec,
    ModelKind,
    Preset,
    Scale,
    SweepCondition,
    SweepGrid,
    SweepMethod,
    corrupt,
    generate_low_rank,
    least_squares_fit,
    misspec_grid,
    phase_grid,
    preset_grid,
    rank_sweep_grid,
    relative_error,
    run_misspec_sweep,
    run_rank_sweep,
    run_replicate,
    run_sweep,
    sample_std,
    summarize,
    write_table,
)
from tuckerl2e.tensors import DenseTensor, matricization_ranks


def _small_grid(**overrides) -> SweepGrid:
    condition = {
        "dims": (6, 6, 6),
        "true_rank": (2, 2, 2),
        "outlier_fraction": 0.1,
        "missing_fraction": 0.1,
    }
    condition.update(overrides.pop("condition", {}))
    return SweepGrid(conditions=[SweepCondition(**condition)], replicates=2, **overrides)


class TestGenerateLowRank:
    """Test random low-rank tensors."""

    def test_cp_matricization_ranks(self):
        L, truth = generate_low_rank(ModelKind.CP, (8, 9, 10), 3, seed=0)
        assert L.dims == (8, 9, 10)
        assert all(r <= 3 for r in matricization_ranks(L, rtol=1e-9))
        assert truth.rank == (3, 3, 3)
        assert truth.model == ModelKind.CP

    def test_tucker_matricization_ranks(self):
        L, _ = generate_low_rank("tucker", (5, 6, 7), (2, 3, 4), seed=1)
        assert matricization_ranks(L, rtol=1e-9) == (2, 3, 4)

    def test_tucker_full_rank(self):
        L, _ = generate_low_rank(ModelKind.TUCKER, (3, 4, 5), (3, 4, 5), seed=2)
        assert matricization_ranks(L, rtol=1e-9) == (3, 4, 5)

    def test_deterministic(self):
        a, _ = generate_low_rank(ModelKind.TUCKER, (4, 4, 4), (2, 2, 2), seed=3)
        b, _ = generate_low_rank(ModelKind.TUCKER, (4, 4, 4), (2, 2, 2), seed=3)
        c, _ = generate_low_rank(ModelKind.TUCKER, (4, 4, 4), (2, 2, 2), seed=4)
        assert np.array_equal(a.data, b.data)
        assert not np.array_equal(a.data, c.data)

    def test_cp_unequal_ranks(self):
        with pytest.raises(RankError):
            generate_low_rank(ModelKind.CP, (4, 4, 4), (2, 3, 2), seed=0)

    def test_tucker_rank_exceeds_dims(self):
        with pytest.raises(RankError):
            generate_low_rank(ModelKind.TUCKER, (4, 4, 4), (5, 2, 2), seed=0)


class TestCorrupt:
    """Test outliers, dense noise and missingness."""

    def test_clean_passthrough(self):
        L, _ = generate_low_rank(ModelKind.TUCKER, (5, 5, 5), (2, 2, 2), seed=5)
        data, truth = corrupt(L, CorruptionSpec())
        assert np.array_equal(data.values.data, L.data)
        assert data.observed_count == 125
        assert truth.outlier_indices.size == 0
        assert truth.noise is None

    def test_outlier_count_and_magnitude(self):
        L, _ = generate_low_rank(ModelKind.CP, (10, 10, 10), 2, seed=6)
        data, truth = corrupt(L, CorruptionSpec(outlier_fraction=0.25, seed=7))
        assert truth.outlier_indices.size == 250
        x = L.data
        mean = sum(x) / x.size
        two_pass = math.sqrt(sum((v - mean) ** 2 for v in x) / (x.size - 1))
        assert math.isclose(sample_std(x), two_pass, rel_tol=1e-12)
        assert math.isclose(truth.outlier_magnitude, 5.0 * two_pass, rel_tol=1e-12)
        sparse = truth.sparse.data
        assert np.all(np.abs(sparse) <= truth.outlier_magnitude)
        assert np.array_equal(np.flatnonzero(sparse), truth.outlier_indices)
        assert np.allclose(data.values.data, L.data + sparse, rtol=0.0, atol=0.0)

    def test_count_rounds_half_up(self):
        L = DenseTensor.from_array(np.arange(1.0, 6.0))
        _, truth = corrupt(L, CorruptionSpec(outlier_fraction=0.5, seed=9))
        assert truth.outlier_indices.size == 3

    def test_dense_noise_ratio(self):
        L, _ = generate_low_rank(ModelKind.TUCKER, (6, 7, 8), (2, 2, 2), seed=10)
        data, truth = corrupt(L, CorruptionSpec(outlier_fraction=0.1, dense_noise=True, seed=11))
        residual = data.values.data - L.data - truth.sparse.data
        ratio = np.linalg.norm(residual) / np.linalg.norm(L.data)
        assert abs(ratio - 0.1) < 1e-12

    def test_missing_entries(self):
        L, _ = generate_low_rank(ModelKind.TUCKER, (10, 10, 10), (2, 2, 2), seed=12)
        data, truth = corrupt(L, CorruptionSpec(missing_fraction=0.2, seed=13))
        assert data.observed_count == 800
        assert np.array_equal(np.flatnonzero(~data.observed), truth.missing_indices)

    def test_deterministic(self):
        L, _ = generate_low_rank(ModelKind.TUCKER, (5, 5, 5), (2, 2, 2), seed=14)
        spec = CorruptionSpec(outlier_fraction=0.2, missing_fraction=0.2, dense_noise=True, seed=15)
        a, _ = corrupt(L, spec)
        b, _ = corrupt(L, spec)
        assert np.array_equal(a.values.data, b.values.data)
        assert np.array_equal(a.mask.data, b.mask.data)

    def test_truth_dict(self):
        L, truth = generate_low_rank(ModelKind.TUCKER, (4, 4, 4), (2, 2, 2), seed=16)
        _, truth = corrupt(L, CorruptionSpec(outlier_fraction=0.25, seed=17), truth)
        out = truth.to_dict()
        assert out["outlier_count"] == 16
        assert out["rank"] == [2, 2, 2]
        assert out["seed"] == 16
        assert out["dense_noise"] is False

    def test_invalid_fraction(self):
        with pytest.raises(ValidationError):
            CorruptionSpec(missing_fraction=1.0)


class TestRelativeError:
    """Test the recovery metric."""

    def test_exact(self):
        L = DenseTensor.from_array(np.arange(1.0, 9.0).reshape((2, 2, 2)))
        assert relative_error(L, L) == 0.0

    def test_zero_estimate(self):
        L = DenseTensor.from_array(np.arange(1.0, 9.0).reshape((2, 2, 2)))
        assert math.isclose(relative_error(DenseTensor.zeros(L.dims), L), 1.0)

    def test_zero_truth(self):
        with pytest.raises(DegenerateDataError):
            relative_error(DenseTensor.ones((2, 2)), DenseTensor.zeros((2, 2)))

    def test_dims_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            relative_error(DenseTensor.ones((2, 2)), DenseTensor.ones((4,)))


class TestLeastSquaresFit:
    """Test the nonrobust reference fit."""

    def test_clean_exact_rank(self):
        L, _ = generate_low_rank(ModelKind.TUCKER, (6, 7, 8), (2, 2, 2), seed=18)
        data, _ = corrupt(L, CorruptionSpec())
        assert relative_error(least_squares_fit(data, (2, 2, 2)), L) < 1e-10

    def test_outliers_hurt(self):
        L, _ = generate_low_rank(ModelKind.TUCKER, (10, 10, 10), (2, 2, 2), seed=19)
        data, _ = corrupt(L, CorruptionSpec(outlier_fraction=0.1, seed=20))
        assert relative_error(least_squares_fit(data, (2, 2, 2)), L) > 0.05


class TestSweepConfig:
    """Test condition and grid validation."""

    def test_rank_length(self):
        with pytest.raises(ValidationError):
            SweepCondition(dims=(4, 4, 4), true_rank=(2, 2))

    def test_cp_needs_equal_ranks(self):
        with pytest.raises(ValidationError):
            SweepCondition(model=ModelKind.CP, dims=(4, 4, 4), true_rank=(2, 3, 2))

    def test_fit_rank_exceeds_dims(self):
        with pytest.raises(ValidationError):
            SweepCondition(dims=(4, 4, 4), true_rank=(2, 2, 2), fit_rank=(5, 2, 2))

    def test_resolved_fit_rank(self):
        cond = SweepCondition(dims=(4, 4, 4), true_rank=(2, 2, 2))
        assert cond.resolved_fit_rank == (2, 2, 2)
        wider = SweepCondition(dims=(4, 4, 4), true_rank=(2, 2, 2), fit_rank=(3, 3, 3))
        assert wider.resolved_fit_rank == (3, 3, 3)

    def test_grid_fit_config(self):
        grid = _small_grid(tau_max=20.0, max_iters=7)
        cfg = grid.fit_config((2, 2, 2))
        assert math.isclose(cfg.tau_max, 20.0)
        assert cfg.solver.max_iters == 7

    def test_grid_json_roundtrip(self):
        grid = _small_grid()
        assert SweepGrid.model_validate_json(grid.model_dump_json()) == grid


class TestSweeps:
    """Test sweep execution and its table."""

    def test_single_condition_table(self):
        table = run_sweep(_small_grid())
        assert list(table.columns) == TABLE_COLUMNS
        assert len(table) == 2
        assert list(table["replicate"]) == [0, 1]
        assert not table["status"].str.startswith("failed").any()
        assert table["relative_error"].notna().all()

    def test_row_depends_only_on_labels(self):
        grid = _small_grid()
        alone = run_replicate(grid, 0, 1)
        table = run_sweep(grid)
        row = table.iloc[1]
        assert row["seed"] == alone["seed"]
        assert row["relative_error"] == alone["relative_error"]

    def test_replicates_differ(self):
        table = run_sweep(_small_grid())
        assert table["seed"].iloc[0] != table["seed"].iloc[1]

    def test_master_seed_changes_rows(self):
        a = run_replicate(_small_grid(master_seed=1), 0, 0)
        b = run_replicate(_small_grid(master_seed=2), 0, 0)
        assert a["seed"] != b["seed"]

    def test_parallel_rows_in_order(self):
        grid = _small_grid()
        serial = run_sweep(grid)
        parallel = run_sweep(grid, jobs=2)
        assert list(parallel["seed"]) == list(serial["seed"])
        assert list(parallel["replicate"]) == [0, 1]

    def test_hooi_method(self):
        table = run_sweep(_small_grid(condition={"method": SweepMethod.HOOI}))
        assert set(table["status"]) == {"ok"}
        assert table["eta_star"].isna().all()
        assert (table["method"] == "hooi").all()

    def test_failed_fit_recorded(self):
        with patch.object(simulation_module, "fit", side_effect=FitError("diverged")):
            table = run_sweep(_small_grid())
        assert table["status"].str.startswith("failed").all()
        assert table["relative_error"].isna().all()

    def test_summarize(self):
        table = run_sweep(_small_grid())
        summary = summarize(table)
        assert len(summary) == 1
        assert summary["count"].iloc[0] == 2
        assert {"mean", "median"} <= set(summary.columns)

    def test_write_table(self):
        table = run_sweep(_small_grid())
        with tempfile.TemporaryDirectory() as tmpdir:
            path = write_table(table, Path(tmpdir) / "out" / "sweep.csv")
            loaded = pd.read_csv(path)
            assert list(loaded.columns) == TABLE_COLUMNS
            assert len(loaded) == 2


class TestPresets:
    """Test the built-in sweep grids."""

    def test_rank_sweep_desk(self):
        grid = rank_sweep_grid()
        assert [c.true_rank for c in grid.conditions] == [(3, 3, 3), (6, 6, 6), (9, 9, 9)]
        assert grid.replicates == 10
        assert all(c.missing_fraction == 0.2 and c.outlier_fraction == 0.1 for c in grid.conditions)

    def test_rank_sweep_paper(self):
        grid = rank_sweep_grid(Scale.PAPER)
        assert len(grid.conditions) == 2 * 2 * 2 * 9
        assert grid.replicates == 50
        assert all(c.dims == (50, 50, 50) for c in grid.conditions)

    def test_phase_grid_desk(self):
        grid = phase_grid()
        deltas = sorted({c.outlier_fraction for c in grid.conditions})
        assert deltas[0] == 0.0 and deltas[-1] == 0.5
        assert len(grid.conditions) == 5 * 6
        assert all(c.missing_fraction == 0.0 for c in grid.conditions)

    def test_misspec_desk(self):
        grid = misspec_grid()
        assert [c.resolved_fit_rank[0] for c in grid.conditions] == [1, 2, 3, 4, 5, 6]
        assert all(c.true_rank == (3, 3, 3) and c.model == ModelKind.CP for c in grid.conditions)

    def test_baseline_doubles_conditions(self):
        grid = misspec_grid(with_baseline=True)
        assert len(grid.conditions) == 12
        assert {c.method for c in grid.conditions} == {SweepMethod.TUCKER_L2E, SweepMethod.HOOI}

    def test_preset_lookup(self):
        assert preset_grid(Preset.MISSPEC, master_seed=3) == misspec_grid(master_seed=3)
        assert preset_grid("rank-sweep", replicates=2).replicates == 2


@pytest.mark.slow
class TestRecoverySweeps:
    """Reduced-replicate runs of the desk-scale presets."""

    def test_rank_sweep_recovers(self):
        table = run_rank_sweep(replicates=3)
        assert not table["status"].str.startswith("failed").any()
        means = table.groupby("condition")["relative_error"].mean()
        assert (means < 0.05).all()

    def test_overestimated_rank_tolerated(self):
        table = run_misspec_sweep(replicates=3)
        medians = table.groupby("fit_rank")["relative_error"].median()
        for r in (3, 4, 5, 6):
            assert medians[f"{r},{r},{r}"] < 0.05
        for r in (1, 2):
            assert medians[f"{r},{r},{r}"] > 0.2
        assert medians["6,6,6"] <= max(2.0 * medians["3,3,3"], 1e-3)
