"""
Tucker-L2E - Robust low-rank Tucker decomposition.

Fits X ~ [[G; A1, ..., AN]] to a partially observed tensor by minimizing
the L2 criterion with a jointly estimated precision, so gross outliers are
down-weighted instead of fitted.

Quick Start:
    >>> from tuckerl2e import FitConfig, MaskedTensor, fit, predict
    >>> data = MaskedTensor.from_array(x)          # NaN marks a missing entry
    >>> model = fit(data, FitConfig(rank=(3, 3, 3)))
    >>> L_hat = predict(model).array

Command line:
    $ tuckerl2e simulate --dims 20,20,20 --rank 3 --delta 0.2 --out sim
    $ tuckerl2e decompose sim.tensor --rank 3,3,3 --out fit
"""

from .baseline import HooiConfig, HooiResult, hooi, hosvd, run_hooi, truncated_svd
from .errors import (
    DegenerateDataError,
    FitError,
    LowerBoundViolation,
    ModeError,
    NonFiniteError,
    OracleError,
    RankError,
    ShapeMismatchError,
    TensorFileError,
    TuckerL2EError,
)
from .l2e import (
    FitConfig,
    FitSummary,
    InitMethod,
    L2EGradient,
    L2EModel,
    L2EOracle,
    MaskedTensor,
    UnivariateFit,
    fit,
    fit_univariate,
    l2e_gradient,
    l2e_objective,
    pack,
    predict,
    univariate_l2e,
    univariate_l2e_gradient,
    univariate_profile,
    unpack,
)
from .optim import BoxBounds, SolveResult, SolverConfig, SolveStatus, minimize
from .rank_select import CvPlan, CvResult, cross_validate, cubic_ranks, make_plan
from .simulation import (
    CorruptionSpec,
    GroundTruth,
    ModelKind,
    Scale,
    SweepCondition,
    SweepGrid,
    SweepMethod,
    corrupt,
    generate_low_rank,
    misspec_grid,
    phase_grid,
    rank_sweep_grid,
    relative_error,
    run_misspec_sweep,
    run_phase_grid,
    run_rank_sweep,
    run_sweep,
)
from .storage import FitArtifacts, read_tensor, write_ground_truth, write_tensor
from .tensors import (
    DenseMatrix,
    DenseTensor,
    KruskalFactors,
    TuckerFactors,
    kruskal_to_full,
    matricize,
    n_mode_product,
    tensorize,
    tucker_to_full,
)

__version__ = "0.1.0"
__license__ = "MIT"

__all__ = [
    # Tensors
    "DenseTensor",
    "DenseMatrix",
    "TuckerFactors",
    "KruskalFactors",
    "matricize",
    "tensorize",
    "n_mode_product",
    "tucker_to_full",
    "kruskal_to_full",
    # Baselines
    "HooiConfig",
    "HooiResult",
    "hosvd",
    "hooi",
    "run_hooi",
    "truncated_svd",
    # Optimizer
    "BoxBounds",
    "SolverConfig",
    "SolveResult",
    "SolveStatus",
    "minimize",
    # L2E
    "FitConfig",
    "FitSummary",
    "InitMethod",
    "MaskedTensor",
    "L2EModel",
    "L2EGradient",
    "L2EOracle",
    "UnivariateFit",
    "fit",
    "fit_univariate",
    "predict",
    "l2e_objective",
    "l2e_gradient",
    "pack",
    "unpack",
    "univariate_l2e",
    "univariate_l2e_gradient",
    "univariate_profile",
    # Rank selection
    "CvPlan",
    "CvResult",
    "make_plan",
    "cross_validate",
    "cubic_ranks",
    # Simulation
    "CorruptionSpec",
    "GroundTruth",
    "ModelKind",
    "Scale",
    "SweepCondition",
    "SweepGrid",
    "SweepMethod",
    "generate_low_rank",
    "corrupt",
    "relative_error",
    "run_sweep",
    "rank_sweep_grid",
    "phase_grid",
    "misspec_grid",
    "run_rank_sweep",
    "run_phase_grid",
    "run_misspec_sweep",
    # Storage
    "FitArtifacts",
    "read_tensor",
    "write_tensor",
    "write_ground_truth",
    # Errors
    "TuckerL2EError",
    "ShapeMismatchError",
    "ModeError",
    "RankError",
    "NonFiniteError",
    "DegenerateDataError",
    "OracleError",
    "LowerBoundViolation",
    "FitError",
    "TensorFileError",
]
