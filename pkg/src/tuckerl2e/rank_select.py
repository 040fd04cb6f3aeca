"""
Tucker-L2E Rank Selection - K-fold cross-validation over observed entries.

Each candidate rank is fitted K times, each time with one fold held out as
missing. The held-out predictions together form a predicted tensor, and the
rank's error is the mean absolute residual over all observed entries.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .errors import DegenerateDataError, ShapeMismatchError, TuckerL2EError
from .l2e import FitConfig, MaskedTensor, fit, predict
from .seeding import rng_for
from .tensors import validate_rank

logger = logging.getLogger(__name__)

UNOBSERVED = -1

CSV_COLUMNS = ["rank", "fold", "n_heldout", "abs_error_sum", "cv_error", "status"]


@dataclass(frozen=True, eq=False)
class CvPlan:
    """Fold of every entry in storage order: 0..k-1, or -1 if unobserved."""

    k: int
    seed: int
    fold_of_entry: np.ndarray

    def __post_init__(self) -> None:
        folds = np.array(self.fold_of_entry, dtype=np.int64).ravel()
        folds.setflags(write=False)
        object.__setattr__(self, "fold_of_entry", folds)

    @property
    def fold_sizes(self) -> list[int]:
        return [int(np.count_nonzero(self.fold_of_entry == f)) for f in range(self.k)]

    def held_out(self, fold: int) -> np.ndarray:
        return self.fold_of_entry == fold


def make_plan(data: MaskedTensor, k: int = 10, seed: int = 0) -> CvPlan:
    """
    Random partition of the observed entries into k folds whose sizes differ by at most one.

    Raises:
        DegenerateDataError: fewer observed entries than folds
    """
    if k < 2:
        raise ValueError(f"k must be at least 2, got {k}")
    observed = data.observed_indices()
    if observed.size < k:
        raise DegenerateDataError(f"{observed.size} observed entries cannot fill {k} folds")
    rng = rng_for(seed, "cv-folds")
    folds = np.full(data.values.size, UNOBSERVED, dtype=np.int64)
    folds[rng.permutation(observed)] = np.arange(observed.size) % k
    return CvPlan(k=k, seed=seed, fold_of_entry=folds)


@dataclass
class FoldOutcome:
    rank: tuple[int, ...]
    fold: int
    n_heldout: int
    abs_error_sum: float = float("nan")
    status: str = "ok"
    fit_status: str = ""

    @property
    def failed(self) -> bool:
        return self.status != "ok"


@dataclass
class CvEntry:
    rank: tuple[int, ...]
    cv_error: float
    n_predicted: int
    failed_folds: list[int] = field(default_factory=list)


@dataclass
class CvResult:
    entries: list[CvEntry]
    folds: list[FoldOutcome]

    @property
    def argmin(self) -> tuple[int, ...] | None:
        finite = [e for e in self.entries if np.isfinite(e.cv_error)]
        if not finite:
            return None
        return min(finite, key=lambda e: e.cv_error).rank

    def error_of(self, rank: Sequence[int]) -> float:
        for entry in self.entries:
            if entry.rank == tuple(rank):
                return entry.cv_error
        raise KeyError(tuple(rank))

    def to_frame(self) -> pd.DataFrame:
        """Per-fold rows, one aggregate row per rank (fold 'all') and a final 'argmin' row."""
        rows: list[dict[str, Any]] = []
        for f in self.folds:
            rows.append(
                {
                    "rank": format_rank(f.rank),
                    "fold": str(f.fold + 1),
                    "n_heldout": f.n_heldout,
                    "abs_error_sum": f.abs_error_sum,
                    "cv_error": f.abs_error_sum / f.n_heldout if f.n_heldout else float("nan"),
                    "status": f.status,
                }
            )
        for e in self.entries:
            rows.append(
                {
                    "rank": format_rank(e.rank),
                    "fold": "all",
                    "n_heldout": e.n_predicted,
                    "abs_error_sum": e.cv_error * e.n_predicted,
                    "cv_error": e.cv_error,
                    "status": "ok" if not e.failed_folds else f"failed_folds={len(e.failed_folds)}",
                }
            )
        best = self.argmin
        if best is not None:
            rows.append(
                {
                    "rank": format_rank(best),
                    "fold": "argmin",
                    "n_heldout": self.entries[0].n_predicted if self.entries else 0,
                    "abs_error_sum": float("nan"),
                    "cv_error": self.error_of(best),
                    "status": "ok",
                }
            )
        return pd.DataFrame(rows, columns=CSV_COLUMNS)


def format_rank(rank: Sequence[int]) -> str:
    return ",".join(str(r) for r in rank)


def _run_fold(
    data: MaskedTensor, rank: tuple[int, ...], fold: int, plan: CvPlan, cfg: FitConfig
) -> FoldOutcome:
    held = plan.held_out(fold)
    outcome = FoldOutcome(rank=rank, fold=fold, n_heldout=int(np.count_nonzero(held)))
    try:
        # Held-out slots are blanked to NaN so the fit cannot read them.
        train = data.with_observed(~held)
        model = fit(train, cfg.model_copy(update={"rank": rank}))
    except (TuckerL2EError, np.linalg.LinAlgError) as exc:
        outcome.status = f"failed: {exc}"
        return outcome
    predicted = predict(model).data[held]
    outcome.abs_error_sum = float(np.sum(np.abs(predicted - data.values.data[held])))
    outcome.fit_status = str((model.solve or {}).get("status", ""))
    return outcome


def cross_validate(
    data: MaskedTensor,
    ranks: Sequence[Sequence[int]],
    plan: CvPlan,
    cfg: FitConfig,
    jobs: int = 1,
) -> CvResult:
    """
    Cross-validated error of each candidate rank.

    Every (rank, fold) fit is independent and runs through joblib with
    `jobs` workers. A fit that fails is logged and its fold excluded; the
    sweep carries on.

    Args:
        data: Observed tensor
        ranks: Candidate Tucker-ranks
        plan: Fold assignment from make_plan
        cfg: Fit settings; its rank is replaced per candidate
        jobs: joblib n_jobs

    Returns:
        CvResult with one entry per rank, in input order
    """
    candidates = [validate_rank(r, data.dims) for r in ranks]
    if not candidates:
        raise ValueError("no candidate ranks given")
    if plan.fold_of_entry.size != data.values.size:
        raise ShapeMismatchError(
            "plan does not match the tensor size", data.values.size, plan.fold_of_entry.size
        )
    if not np.array_equal(plan.fold_of_entry != UNOBSERVED, data.observed):
        raise ValueError("plan folds do not partition the observed entries")

    jobs_list = [(rank, fold) for rank in candidates for fold in range(plan.k)]
    logger.info("cross-validating %d ranks x %d folds", len(candidates), plan.k)
    results = Parallel(n_jobs=jobs)(
        delayed(_run_fold)(data, rank, fold, plan, cfg) for rank, fold in jobs_list
    )

    outcomes: list[FoldOutcome] = list(results)
    entries = []
    for rank in candidates:
        mine = [o for o in outcomes if o.rank == rank]
        ok = [o for o in mine if not o.failed]
        failed = [o.fold for o in mine if o.failed]
        for o in mine:
            if o.failed:
                logger.warning(
                    "rank %s fold %d excluded: %s", format_rank(rank), o.fold + 1, o.status
                )
        n_predicted = sum(o.n_heldout for o in ok)
        error = sum(o.abs_error_sum for o in ok) / n_predicted if n_predicted else float("inf")
        entries.append(
            CvEntry(rank=rank, cv_error=error, n_predicted=n_predicted, failed_folds=failed)
        )
    return CvResult(entries=entries, folds=outcomes)


def cubic_ranks(order: int, values: Sequence[int]) -> list[tuple[int, ...]]:
    """Candidate list (r, r, ..., r) for each r."""
    return [(int(r),) * order for r in values]
