"""
Tucker-L2E Simulation - Synthetic low-rank data, corruption and sweeps.

Data model: X = L + S + E with L low-rank (CP or Tucker), S sparse uniform
outliers, E optional dense Gaussian noise, then a random fraction of entries
marked missing.

Sweeps return one table row per (condition, replicate). Every row can be
regenerated from (master seed, condition, replicate) alone because all of
its randomness comes from seeds derived from those labels.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from collections.abc import Sequence
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from pydantic import BaseModel, Field, model_validator

from .baseline import HooiConfig, hooi
from .errors import DegenerateDataError, RankError, ShapeMismatchError, TuckerL2EError
from .l2e import FitConfig, InitMethod, MaskedTensor, fit, mean_absolute_deviation, predict
from .optim import SolverConfig
from .seeding import derive_seed
from .tensors import (
    DenseMatrix,
    DenseTensor,
    KruskalFactors,
    TuckerFactors,
    kruskal_to_full,
    tucker_to_full,
    validate_rank,
)

logger = logging.getLogger(__name__)


# === Enums ===


class ModelKind(str, Enum):
    CP = "cp"
    TUCKER = "tucker"


class SweepMethod(str, Enum):
    TUCKER_L2E = "tucker-l2e"
    HOOI = "hooi"


class Scale(str, Enum):
    DESK = "desk"
    PAPER = "paper"


class Preset(str, Enum):
    RANK_SWEEP = "rank-sweep"
    PHASE_GRID = "phase-grid"
    MISSPEC = "misspec"


# === Configuration ===


class CorruptionSpec(BaseModel):
    """How a clean tensor is corrupted: outliers, dense noise, missing entries."""

    outlier_fraction: float = Field(0.0, ge=0.0, le=1.0)
    outlier_magnitude_mult: float = Field(5.0, ge=0.0, description="M = mult * std(vec(L))")
    dense_noise: bool = False
    noise_ratio: float = Field(0.1, gt=0.0, description="||E||_F / ||L||_F")
    missing_fraction: float = Field(0.0, ge=0.0, lt=1.0)
    seed: int = 0


class SweepCondition(BaseModel):
    model: ModelKind = ModelKind.TUCKER
    dims: tuple[int, ...] = Field(..., min_length=1)
    true_rank: tuple[int, ...] = Field(..., min_length=1)
    fit_rank: tuple[int, ...] | None = None
    outlier_fraction: float = Field(0.0, ge=0.0, le=1.0)
    missing_fraction: float = Field(0.0, ge=0.0, lt=1.0)
    dense_noise: bool = False
    outlier_magnitude_mult: float = Field(5.0, ge=0.0)
    method: SweepMethod = SweepMethod.TUCKER_L2E

    @model_validator(mode="after")
    def _check_ranks(self) -> SweepCondition:
        if len(self.true_rank) != len(self.dims):
            raise ValueError("true_rank must have one entry per mode")
        if self.model == ModelKind.CP and len(set(self.true_rank)) != 1:
            raise ValueError("a CP condition needs the same rank in every mode")
        validate_rank(self.resolved_fit_rank, self.dims)
        return self

    @property
    def resolved_fit_rank(self) -> tuple[int, ...]:
        return self.fit_rank if self.fit_rank is not None else self.true_rank

    def key(self) -> dict[str, Any]:
        return self.model_dump(mode="json")


class SweepGrid(BaseModel):
    """A list of conditions, each replicated with derived seeds."""

    name: str = "custom"
    conditions: list[SweepCondition] = Field(..., min_length=1)
    replicates: int = Field(10, ge=1)
    master_seed: int = 0
    tau_max: float = Field(50.0, gt=0.0)
    lam: float = Field(1e-8, ge=0.0)
    init_method: InitMethod = InitMethod.HOSVD
    max_iters: int = Field(1000, ge=1)

    def fit_config(self, rank: tuple[int, ...]) -> FitConfig:
        return FitConfig.from_tau_max(
            rank,
            self.tau_max,
            lam=self.lam,
            init_method=self.init_method,
            solver=SolverConfig(max_iters=self.max_iters),
        )


# === Ground truth ===


def _no_indices() -> np.ndarray:
    return np.zeros(0, dtype=np.int64)


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Clean tensor plus the bookkeeping of how it was corrupted."""

    low_rank: DenseTensor
    model: ModelKind | None = None
    rank: tuple[int, ...] | None = None
    seed: int | None = None
    outlier_indices: np.ndarray = dataclasses.field(default_factory=_no_indices)
    missing_indices: np.ndarray = dataclasses.field(default_factory=_no_indices)
    outlier_magnitude: float = 0.0
    sparse: DenseTensor | None = None
    noise: DenseTensor | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "model": self.model.value if self.model else None,
            "dims": list(self.low_rank.dims),
            "rank": list(self.rank) if self.rank else None,
            "seed": self.seed,
            "outlier_magnitude": self.outlier_magnitude,
            "outlier_count": int(self.outlier_indices.size),
            "outlier_indices": self.outlier_indices.tolist(),
            "missing_count": int(self.missing_indices.size),
            "missing_indices": self.missing_indices.tolist(),
            "dense_noise": self.noise is not None,
        }


def _count(fraction: float, total: int) -> int:
    """Round half up: 0.25 of 1000 -> 250, 0.5 of 5 -> 3."""
    return int(math.floor(fraction * total + 0.5))


def sample_std(values: np.ndarray) -> float:
    """Sample standard deviation (n - 1 denominator)."""
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size < 2:
        return 0.0
    return float(np.std(arr, ddof=1))


def _orthogonal(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    Q, R = np.linalg.qr(rng.standard_normal((rows, cols)))
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return Q * signs


def generate_low_rank(
    model: ModelKind | str,
    dims: Sequence[int],
    rank: int | Sequence[int],
    seed: int,
) -> tuple[DenseTensor, GroundTruth]:
    """
    Random low-rank tensor.

    CP: unit weights, N(0,1) factor entries, rank r (any r >= 1).
    Tucker: N(0,1) core, orthonormal factors from the QR of Gaussian matrices
    with the signs of diag(R) folded into Q.
    """
    model = ModelKind(model)
    dims = tuple(int(d) for d in dims)
    if not dims or any(d < 1 for d in dims):
        raise ShapeMismatchError(f"invalid dims {dims}")
    ranks = (int(rank),) * len(dims) if isinstance(rank, (int, np.integer)) else tuple(rank)
    rng = np.random.default_rng(seed)

    if model == ModelKind.CP:
        if len(set(ranks)) != 1:
            raise RankError(ranks[0], reason=f"CP rank must be a single value, got {ranks}")
        r = ranks[0]
        if r < 1:
            raise RankError(r, reason=f"CP rank must be at least 1, got {r}")
        factors = tuple(DenseMatrix.from_array(rng.standard_normal((d, r))) for d in dims)
        L = kruskal_to_full(KruskalFactors(weights=np.ones(r), factors=factors))
    else:
        ranks = validate_rank(ranks, dims)
        core = rng.standard_normal(ranks)
        factors_arr = [_orthogonal(rng, d, r) for d, r in zip(dims, ranks)]
        L = tucker_to_full(TuckerFactors.from_arrays(core, factors_arr))

    return L, GroundTruth(low_rank=L, model=model, rank=ranks, seed=seed)


def corrupt(
    L: DenseTensor, spec: CorruptionSpec, truth: GroundTruth | None = None
) -> tuple[MaskedTensor, GroundTruth]:
    """
    Apply outliers, optional dense noise and missingness, in that order.

    Outliers are added to the clean value (S is additive). Outlier and
    missing positions are drawn independently, so an outlier may be masked.
    """
    rng = np.random.default_rng(spec.seed)
    total = L.size
    values = L.data.copy()

    n_out = _count(spec.outlier_fraction, total)
    outliers = np.sort(rng.choice(total, size=n_out, replace=False)).astype(np.int64)
    magnitude = spec.outlier_magnitude_mult * sample_std(L.data)
    sparse = np.zeros(total)
    sparse[outliers] = rng.uniform(-magnitude, magnitude, size=n_out)
    values += sparse

    noise = None
    if spec.dense_noise:
        E = rng.standard_normal(total)
        norm_e = float(np.linalg.norm(E))
        if norm_e > 0:
            E *= spec.noise_ratio * float(np.linalg.norm(L.data)) / norm_e
        values += E
        noise = DenseTensor(L.dims, E)

    n_miss = _count(spec.missing_fraction, total)
    if total - n_miss < 1:
        raise DegenerateDataError("corruption would leave no observed entries")
    missing = np.sort(rng.choice(total, size=n_miss, replace=False)).astype(np.int64)
    mask = np.ones(total)
    mask[missing] = 0.0

    data = MaskedTensor(values=DenseTensor(L.dims, values), mask=DenseTensor(L.dims, mask))
    base = truth if truth is not None else GroundTruth(low_rank=L)
    return data, dataclasses.replace(
        base,
        outlier_indices=outliers,
        missing_indices=missing,
        outlier_magnitude=magnitude,
        sparse=DenseTensor(L.dims, sparse),
        noise=noise,
    )


def relative_error(L_hat: DenseTensor, L: DenseTensor) -> float:
    """||L_hat - L||_F / ||L||_F."""
    if L_hat.dims != L.dims:
        raise ShapeMismatchError(f"dims differ: {L_hat.dims} vs {L.dims}", L.dims, L_hat.dims)
    norm_l = float(np.linalg.norm(L.data))
    if norm_l == 0.0:
        raise DegenerateDataError("relative error is undefined for a zero ground truth")
    return float(np.linalg.norm(L_hat.data - L.data)) / norm_l


def least_squares_fit(data: MaskedTensor, rank: tuple[int, ...]) -> DenseTensor:
    """Nonrobust reference: HOOI on the mean-imputed tensor."""
    observed = data.observed_values()
    if not mean_absolute_deviation(observed) > 0:
        raise DegenerateDataError("all observed entries are identical (MAD is zero)")
    imputed = DenseTensor(data.dims, data.filled(float(np.mean(observed))))
    return tucker_to_full(hooi(imputed, HooiConfig(rank=rank)))


# === Sweeps ===

TABLE_COLUMNS = [
    "condition",
    "model",
    "dims",
    "true_rank",
    "fit_rank",
    "outlier_fraction",
    "missing_fraction",
    "dense_noise",
    "outlier_magnitude_mult",
    "method",
    "replicate",
    "seed",
    "relative_error",
    "eta_star",
    "wall_ms",
    "status",
]


def _label(values: Sequence[int], sep: str) -> str:
    return sep.join(str(v) for v in values)


def run_replicate(grid: SweepGrid, index: int, replicate: int) -> dict[str, Any]:
    """One table row; depends only on (master seed, condition, replicate)."""
    cond = grid.conditions[index]
    seed = derive_seed(grid.master_seed, cond.key(), replicate)
    L, truth = generate_low_rank(
        cond.model, cond.dims, cond.true_rank, derive_seed(seed, "low_rank")
    )
    spec = CorruptionSpec(
        outlier_fraction=cond.outlier_fraction,
        outlier_magnitude_mult=cond.outlier_magnitude_mult,
        dense_noise=cond.dense_noise,
        missing_fraction=cond.missing_fraction,
        seed=derive_seed(seed, "corrupt"),
    )
    rank = cond.resolved_fit_rank
    row: dict[str, Any] = {
        "condition": index,
        "model": cond.model.value,
        "dims": _label(cond.dims, "x"),
        "true_rank": _label(cond.true_rank, ","),
        "fit_rank": _label(rank, ","),
        "outlier_fraction": cond.outlier_fraction,
        "missing_fraction": cond.missing_fraction,
        "dense_noise": cond.dense_noise,
        "outlier_magnitude_mult": cond.outlier_magnitude_mult,
        "method": cond.method.value,
        "replicate": replicate,
        "seed": seed,
        "relative_error": float("nan"),
        "eta_star": float("nan"),
        "wall_ms": 0.0,
        "status": "",
    }

    start = time.perf_counter()
    try:
        data, truth = corrupt(L, spec, truth)
        if cond.method == SweepMethod.HOOI:
            L_hat = least_squares_fit(data, rank)
            row["status"] = "ok"
        else:
            model = fit(data, grid.fit_config(rank))
            L_hat = predict(model)
            row["eta_star"] = model.eta
            row["status"] = str((model.solve or {}).get("status", "unknown"))
        row["relative_error"] = relative_error(L_hat, L)
    except (TuckerL2EError, np.linalg.LinAlgError) as exc:
        row["status"] = f"failed: {exc}"
    row["wall_ms"] = (time.perf_counter() - start) * 1000.0
    return row


def run_sweep(grid: SweepGrid, jobs: int = 1) -> pd.DataFrame:
    """
    Run every (condition, replicate) of a grid.

    Rows come back sorted by (condition, replicate) whatever the execution
    order. Failed fits become rows whose status starts with "failed".
    """
    tasks = [(i, rep) for i in range(len(grid.conditions)) for rep in range(grid.replicates)]
    logger.info("sweep %s: %d fits on %d workers", grid.name, len(tasks), jobs)
    rows = Parallel(n_jobs=jobs)(delayed(run_replicate)(grid, i, rep) for i, rep in tasks)
    table = pd.DataFrame(list(rows), columns=TABLE_COLUMNS)
    failed = table["status"].str.startswith("failed")
    if failed.any():
        logger.warning("%d of %d fits failed", int(failed.sum()), len(table))
    return table.sort_values(["condition", "replicate"], kind="stable").reset_index(drop=True)


def write_table(table: pd.DataFrame, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(path, index=False)
    return path


def summarize(table: pd.DataFrame) -> pd.DataFrame:
    """Mean and median relative error per condition."""
    keys = TABLE_COLUMNS[: TABLE_COLUMNS.index("replicate")]
    grouped = table.groupby(keys, sort=True)["relative_error"]
    return grouped.agg(["mean", "median", "count"]).reset_index()


# === Presets ===


def _methods(with_baseline: bool) -> list[SweepMethod]:
    return [SweepMethod.TUCKER_L2E, SweepMethod.HOOI] if with_baseline else [SweepMethod.TUCKER_L2E]


def rank_sweep_grid(
    scale: Scale | str = Scale.DESK,
    master_seed: int = 0,
    replicates: int | None = None,
    with_baseline: bool = False,
) -> SweepGrid:
    """
    Recovery against increasing rank at the true rank.

    desk:  30^3, Tucker ranks 3..9 step 3, delta 0.1, rho 0.2, no dense noise, 10 replicates.
    paper: 50^3, CP and Tucker ranks 5..45 step 5, delta in {0.1, 0.25}, rho 0.2,
           with and without dense noise, 50 replicates.
    """
    scale = Scale(scale)
    if scale == Scale.DESK:
        dims, ranks, models, deltas, noises, reps = (
            (30,) * 3,
            range(3, 10, 3),
            [ModelKind.TUCKER],
            [0.1],
            [False],
            10,
        )
    else:
        dims, ranks, models, deltas, noises, reps = (
            (50,) * 3,
            range(5, 50, 5),
            [ModelKind.CP, ModelKind.TUCKER],
            [0.1, 0.25],
            [False, True],
            50,
        )
    conditions = [
        SweepCondition(
            model=model,
            dims=dims,
            true_rank=(r,) * 3,
            outlier_fraction=delta,
            missing_fraction=0.2,
            dense_noise=noise,
            method=method,
        )
        for model in models
        for noise in noises
        for delta in deltas
        for r in ranks
        for method in _methods(with_baseline)
    ]
    return SweepGrid(
        name=f"rank-sweep-{scale.value}",
        conditions=conditions,
        replicates=replicates or reps,
        master_seed=master_seed,
    )


def phase_grid(
    scale: Scale | str = Scale.DESK,
    master_seed: int = 0,
    replicates: int | None = None,
    with_baseline: bool = False,
) -> SweepGrid:
    """
    High-rank recovery against outlier fraction, fully observed, no dense noise.

    desk:  20^3, Tucker ranks 10..18 step 2, delta 0..0.5 step 0.1, 5 replicates.
    paper: 50^3, CP and Tucker ranks 25..45 step 2, delta 0..0.5 step 0.05, 50 replicates.
    """
    scale = Scale(scale)
    if scale == Scale.DESK:
        dims, ranks, models, steps, reps = (20,) * 3, range(10, 19, 2), [ModelKind.TUCKER], 6, 5
    else:
        dims, ranks, models, steps, reps = (
            (50,) * 3,
            range(25, 46, 2),
            [ModelKind.CP, ModelKind.TUCKER],
            11,
            50,
        )
    deltas = [round(x, 4) for x in np.linspace(0.0, 0.5, steps)]
    conditions = [
        SweepCondition(
            model=model, dims=dims, true_rank=(r,) * 3, outlier_fraction=delta, method=method
        )
        for model in models
        for r in ranks
        for delta in deltas
        for method in _methods(with_baseline)
    ]
    return SweepGrid(
        name=f"phase-grid-{scale.value}",
        conditions=conditions,
        replicates=replicates or reps,
        master_seed=master_seed,
    )


def misspec_grid(
    scale: Scale | str = Scale.DESK,
    master_seed: int = 0,
    replicates: int | None = None,
    with_baseline: bool = False,
) -> SweepGrid:
    """
    Under- and over-specified fit ranks with 25% outliers, fully observed.

    desk:  true CP-rank 3 on 20^3, fit ranks (r,r,r) for r = 1..6, 10 replicates.
    paper: 50^3 with true CP-rank 15, Tucker-rank (30,10,5) and Tucker-rank (40,40,40);
           fit ranks (r,r,r) for r = 5..45 step 5, 50 replicates.
    """
    scale = Scale(scale)
    if scale == Scale.DESK:
        dims = (20,) * 3
        scenarios = [(ModelKind.CP, (3, 3, 3))]
        fit_ranks, reps = range(1, 7), 10
    else:
        dims = (50,) * 3
        scenarios = [
            (ModelKind.CP, (15, 15, 15)),
            (ModelKind.TUCKER, (30, 10, 5)),
            (ModelKind.TUCKER, (40, 40, 40)),
        ]
        fit_ranks, reps = range(5, 50, 5), 50
    conditions = [
        SweepCondition(
            model=model,
            dims=dims,
            true_rank=true_rank,
            fit_rank=(r,) * 3,
            outlier_fraction=0.25,
            method=method,
        )
        for model, true_rank in scenarios
        for r in fit_ranks
        for method in _methods(with_baseline)
    ]
    return SweepGrid(
        name=f"misspec-{scale.value}",
        conditions=conditions,
        replicates=replicates or reps,
        master_seed=master_seed,
    )


PRESETS = {
    Preset.RANK_SWEEP: rank_sweep_grid,
    Preset.PHASE_GRID: phase_grid,
    Preset.MISSPEC: misspec_grid,
}


def preset_grid(
    preset: Preset | str,
    scale: Scale | str = Scale.DESK,
    master_seed: int = 0,
    replicates: int | None = None,
    with_baseline: bool = False,
) -> SweepGrid:
    return PRESETS[Preset(preset)](scale, master_seed, replicates, with_baseline)


def run_rank_sweep(grid: SweepGrid | None = None, jobs: int = 1, **kwargs: Any) -> pd.DataFrame:
    return run_sweep(grid or rank_sweep_grid(**kwargs), jobs)


def run_phase_grid(grid: SweepGrid | None = None, jobs: int = 1, **kwargs: Any) -> pd.DataFrame:
    return run_sweep(grid or phase_grid(**kwargs), jobs)


def run_misspec_sweep(grid: SweepGrid | None = None, jobs: int = 1, **kwargs: Any) -> pd.DataFrame:
    return run_sweep(grid or misspec_grid(**kwargs), jobs)
