"""
Tucker-L2E CLI - Robust Tucker decomposition from the command line.

Usage:
    tuckerl2e decompose data.tensor --rank 2,2,2 --out run1    Fit and write run1.Lhat/.model/.meta
    tuckerl2e simulate --dims 10,10,10 --rank 2 --out sim      Generate a corrupted synthetic tensor
    tuckerl2e sweep --preset rank-sweep --out sweep.csv        Replicated simulation study
    tuckerl2e cv data.tensor --ranks "1,1,1;2,2,2" --out cv.csv  Cross-validated rank choice

Exit codes: 0 success, 1 usage or input error, 2 output written but the
solver did not converge.
"""

import logging
import math
from enum import Enum
from pathlib import Path
from typing import TypeVar

import typer
from pydantic import ValidationError
from rich import print as rprint
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from . import __version__
from .errors import TuckerL2EError
from .l2e import (
    DEFAULT_LAMBDA,
    DEFAULT_TAU_MAX,
    FEATURE_EXTRACTION_TAU_MAX,
    FitConfig,
    FitSummary,
    InitMethod,
    fit,
    predict,
)
from .optim import SolverConfig, SolveStatus
from .rank_select import cross_validate, format_rank, make_plan
from .seeding import derive_seed, short_hash, tensor_fingerprint
from .simulation import (
    CorruptionSpec,
    ModelKind,
    Preset,
    Scale,
    SweepGrid,
    corrupt,
    generate_low_rank,
    preset_grid,
    run_sweep,
    summarize,
    write_table,
)
from .storage import FitArtifacts, read_tensor, write_ground_truth, write_tensor

app = typer.Typer(
    name="tuckerl2e",
    help="Robust low-rank Tucker decomposition with the L2 criterion.",
    no_args_is_help=True,
)
console = Console()

E = TypeVar("E", bound=Enum)

FIT_PRESETS = {"default": DEFAULT_TAU_MAX, "feature-extraction": FEATURE_EXTRACTION_TAU_MAX}
SUMMARY_COLUMNS = (
    "model",
    "dims",
    "true_rank",
    "fit_rank",
    "outlier_fraction",
    "method",
    "mean",
    "count",
)


# ===== HELPERS =====


def _fail(message: str) -> typer.Exit:
    rprint(f"[red]✗[/red] {message}")
    return typer.Exit(1)


def _parse_ints(text: str, what: str) -> tuple[int, ...]:
    try:
        values = tuple(int(tok) for tok in text.replace(" ", "").split(",") if tok)
    except ValueError:
        raise _fail(f"{what} must be comma-separated integers, got {text!r}") from None
    if not values:
        raise _fail(f"{what} is empty")
    return values


def _parse_rank_list(text: str) -> list[tuple[int, ...]]:
    return [_parse_ints(chunk, "rank") for chunk in text.split(";") if chunk.strip()]


def _choice(enum_cls: type[E], value: str, what: str) -> E:
    try:
        return enum_cls(value)
    except ValueError:
        allowed = "|".join(m.value for m in enum_cls)
        raise _fail(f"unknown {what} {value!r} (expected {allowed})") from None


def _fit_config(
    rank: tuple[int, ...], tau_max: float, lam: float, init: str, max_iter: int
) -> FitConfig:
    method = _choice(InitMethod, init, "init method")
    try:
        return FitConfig.from_tau_max(
            rank, tau_max, lam=lam, init_method=method, solver=SolverConfig(max_iters=max_iter)
        )
    except (ValidationError, ValueError) as exc:
        raise _fail(f"invalid fit settings: {exc}") from None


# ===== COMMANDS =====


@app.callback()
def main(
    verbose: int = typer.Option(0, "--verbose", "-v", count=True, help="-v info, -vv debug"),
):
    """Configure logging for every command."""
    level = logging.WARNING if verbose == 0 else logging.INFO if verbose == 1 else logging.DEBUG
    logging.basicConfig(
        level=level,
        format="%(message)s",
        handlers=[RichHandler(console=Console(stderr=True), show_path=False)],
        force=True,
    )


@app.command()
def version():
    """Show Tucker-L2E version."""
    rprint(f"[bold]Tucker-L2E[/bold] v{__version__}")


@app.command()
def decompose(
    input_file: Path = typer.Argument(..., help="TensorFile to decompose"),
    rank: str = typer.Option(..., "--rank", "-r", help="Tucker-rank, e.g. 2,2,2"),
    out: str = typer.Option(..., "--out", "-o", help="Output prefix"),
    eta_max: float = typer.Option(
        None, "--eta-max", help="Upper bound on the precision tau (eta_max = ln of this)"
    ),
    preset: str = typer.Option(
        "default", "--preset", help="default (tau_max 50) | feature-extraction (tau_max 20)"
    ),
    lam: float = typer.Option(DEFAULT_LAMBDA, "--lambda", help="Ridge weight on ||L||^2"),
    init: str = typer.Option("hosvd", "--init", help="hosvd | hooi"),
    max_iter: int = typer.Option(1000, "--max-iter", help="L-BFGS-B iteration cap"),
    seed: int = typer.Option(
        0, "--seed", help="Recorded in .meta; the fit itself is deterministic"
    ),
):
    """Fit a robust low-rank Tucker model and write <out>.Lhat, <out>.model and <out>.meta."""
    ranks = _parse_ints(rank, "rank")
    if preset not in FIT_PRESETS:
        raise _fail(f"unknown preset {preset!r} (expected {'|'.join(FIT_PRESETS)})")
    tau_max = FIT_PRESETS[preset] if eta_max is None else eta_max
    cfg = _fit_config(ranks, tau_max, lam, init, max_iter)

    try:
        data = read_tensor(input_file)
        model = fit(data, cfg)
    except TuckerL2EError as exc:
        raise _fail(str(exc)) from None

    summary = FitSummary.of(model)
    meta = {
        "summary": summary.to_dict(),
        "input": str(input_file),
        "input_hash": tensor_fingerprint(data.values, data.mask),
        "observed": data.observed_count,
        "seed": seed,
        "config": cfg.model_dump(mode="json"),
        "version": __version__,
    }
    artifacts = FitArtifacts(out)
    artifacts.save(model, predict(model), meta)

    table = Table(title=f"Tucker-L2E fit ({short_hash(meta['input_hash'])})")
    table.add_column("Field", style="cyan")
    table.add_column("Value", justify="right")
    table.add_row("rank", format_rank(model.ranks))
    table.add_row("status", summary.status)
    table.add_row("iterations", str(summary.iterations))
    table.add_row("objective", f"{summary.objective:.6g}")
    table.add_row("proj. gradient", f"{summary.projected_grad_norm:.3g}")
    table.add_row("tau*", f"{summary.tau_star:.4g}")
    table.add_row("scale s", f"{summary.scale_s:.4g}")
    console.print(table)

    if summary.status != SolveStatus.CONVERGED.value:
        rprint(f"[yellow]![/yellow] Solver stopped without converging ({summary.status})")
        rprint(f"  Output written to [bold]{artifacts.prefix}[/bold].*")
        raise typer.Exit(2)
    rprint(f"[green]✓[/green] Wrote {artifacts.lhat_file}, {artifacts.model_file},")
    rprint(f"  {artifacts.meta_file}")


@app.command()
def simulate(
    out: str = typer.Option(..., "--out", "-o", help="Output prefix"),
    model: str = typer.Option("tucker", "--model", help="cp | tucker"),
    dims: str = typer.Option("10,10,10", "--dims", help="Tensor dims, e.g. 30,30,30"),
    rank: str = typer.Option("2", "--rank", "-r", help="CP rank, or Tucker-rank r or r1,r2,r3"),
    delta: float = typer.Option(0.0, "--delta", help="Outlier fraction"),
    rho: float = typer.Option(0.0, "--rho", help="Missing fraction"),
    dense_noise: bool = typer.Option(
        False, "--dense-noise", help="Add noise with ||E||/||L|| = 0.1"
    ),
    mult: float = typer.Option(5.0, "--mult", help="Outlier magnitude M = mult * std(L)"),
    seed: int = typer.Option(0, "--seed", help="Random seed"),
):
    """Generate X = L + S (+ E) with missing entries.

    Writes <out>.tensor, plus <out>.L and <out>.truth.json as ground truth.
    """
    kind = _choice(ModelKind, model, "model")
    shape = _parse_ints(dims, "dims")
    ranks = _parse_ints(rank, "rank")
    if len(ranks) == 1:
        ranks = ranks * len(shape)

    try:
        spec = CorruptionSpec(
            outlier_fraction=delta,
            missing_fraction=rho,
            dense_noise=dense_noise,
            outlier_magnitude_mult=mult,
            seed=derive_seed(seed, "corrupt"),
        )
        L, truth = generate_low_rank(kind, shape, ranks, derive_seed(seed, "low_rank"))
        data, truth = corrupt(L, spec, truth)
    except ValidationError as exc:
        raise _fail(f"invalid corruption settings: {exc}") from None
    except TuckerL2EError as exc:
        raise _fail(str(exc)) from None

    prefix = Path(out)
    tensor_file = write_tensor(prefix.with_name(prefix.name + ".tensor"), data)
    clean_file, truth_file = write_ground_truth(prefix, truth)
    rprint(f"[green]✓[/green] Wrote {tensor_file}")
    rprint(
        f"  {truth.outlier_indices.size} outliers, {truth.missing_indices.size} missing "
        f"(ground truth: {clean_file}, {truth_file})"
    )


@app.command()
def sweep(
    out: str = typer.Option(..., "--out", "-o", help="CSV output path"),
    preset: str = typer.Option(
        "rank-sweep",
        "--preset",
        help=(
            "rank-sweep | phase-grid | misspec. desk scale: rank-sweep on 30^3 "
            "(Tucker ranks 3,6,9), "
            "phase-grid on 20^3 (ranks 10..18, delta 0..0.5 step 0.1), misspec on 20^3 "
            "(CP-rank 3, fit ranks 1..6); paper scale uses 50^3 and the complete grids"
        ),
    ),
    scale: str = typer.Option("desk", "--scale", help="desk | paper"),
    grid_file: Path = typer.Option(
        None, "--grid", help="Custom SweepGrid JSON (overrides --preset)"
    ),
    replicates: int = typer.Option(None, "--replicates", help="Override the replicate count"),
    seed: int = typer.Option(0, "--seed", help="Master seed"),
    baseline: bool = typer.Option(False, "--baseline", help="Also run least-squares HOOI"),
    jobs: int = typer.Option(1, "--jobs", "-j", help="Parallel workers"),
):
    """Run a replicated simulation study and write one CSV row per fit."""
    if grid_file is not None:
        try:
            grid = SweepGrid.model_validate_json(grid_file.read_text())
        except OSError as exc:
            raise _fail(f"cannot read grid file: {exc}") from None
        except ValidationError as exc:
            raise _fail(f"invalid grid file: {exc}") from None
        if replicates is not None:
            grid = grid.model_copy(update={"replicates": replicates})
    else:
        chosen = _choice(Preset, preset, "preset")
        chosen_scale = _choice(Scale, scale, "scale")
        if replicates is not None and replicates < 1:
            raise _fail("--replicates must be at least 1")
        grid = preset_grid(chosen, chosen_scale, seed, replicates, baseline)

    total = len(grid.conditions) * grid.replicates
    rprint(
        f"Running [bold]{grid.name}[/bold]: "
        f"{len(grid.conditions)} conditions x {grid.replicates} replicates"
    )
    table = run_sweep(grid, jobs)
    path = write_table(table, out)

    overview = summarize(table)
    view = Table(title=f"{grid.name} (mean relative error)")
    for column in SUMMARY_COLUMNS:
        view.add_column(column, justify="right" if column in ("mean", "count") else "left")
    for _, row in overview.head(30).iterrows():
        view.add_row(
            row["model"],
            row["dims"],
            row["true_rank"],
            row["fit_rank"],
            f"{row['outlier_fraction']:.2f}",
            row["method"],
            f"{row['mean']:.3g}",
            str(int(row["count"])),
        )
    console.print(view)

    failed = int(table["status"].str.startswith("failed").sum())
    if failed:
        rprint(f"[yellow]![/yellow] {failed} of {total} fits failed (see status column)")
    rprint(f"[green]✓[/green] Wrote {total} rows to {path}")


@app.command()
def cv(
    input_file: Path = typer.Argument(..., help="TensorFile to cross-validate"),
    ranks: str = typer.Option(..., "--ranks", help='Candidates, e.g. "2,2,2;3,3,3"'),
    out: str = typer.Option(..., "--out", "-o", help="CSV output path"),
    k: int = typer.Option(10, "--k", help="Number of folds"),
    seed: int = typer.Option(0, "--seed", help="Seed for the fold assignment"),
    eta_max: float = typer.Option(DEFAULT_TAU_MAX, "--eta-max", help="Upper bound on tau"),
    lam: float = typer.Option(DEFAULT_LAMBDA, "--lambda", help="Ridge weight on ||L||^2"),
    init: str = typer.Option("hosvd", "--init", help="hosvd | hooi"),
    max_iter: int = typer.Option(1000, "--max-iter", help="L-BFGS-B iteration cap"),
    jobs: int = typer.Option(1, "--jobs", "-j", help="Parallel workers"),
):
    """K-fold cross-validation error for each candidate rank."""
    candidates = _parse_rank_list(ranks)
    if not candidates:
        raise _fail("no candidate ranks given")
    cfg = _fit_config(candidates[0], eta_max, lam, init, max_iter)

    try:
        data = read_tensor(input_file)
        plan = make_plan(data, k=k, seed=seed)
        result = cross_validate(data, candidates, plan, cfg, jobs=jobs)
    except (TuckerL2EError, ValueError) as exc:
        raise _fail(str(exc)) from None

    frame = result.to_frame()
    path = Path(out)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)

    best = result.argmin
    table = Table(title=f"{k}-fold cross-validation")
    table.add_column("Rank", style="cyan")
    table.add_column("CV error", justify="right")
    table.add_column("Failed folds", justify="right")
    for entry in result.entries:
        marker = " [green]←[/green]" if entry.rank == best else ""
        error = f"{entry.cv_error:.6g}" if math.isfinite(entry.cv_error) else "inf"
        table.add_row(format_rank(entry.rank) + marker, error, str(len(entry.failed_folds)))
    console.print(table)

    if best is None:
        rprint("[red]✗[/red] Every fit failed; no rank selected")
        raise typer.Exit(1)
    rprint(f"[green]✓[/green] Selected rank [bold]{format_rank(best)}[/bold]; wrote {path}")


if __name__ == "__main__":
    app()
