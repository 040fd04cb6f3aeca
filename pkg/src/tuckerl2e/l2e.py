"""
Tucker-L2E - Robust Tucker decomposition by minimizing the L2 criterion.

For observed entries Omega (mask W), residual R = X - L and precision
tau = exp(eta):

    f = sum(W) tau / (2 sqrt(pi))
        - sqrt(2/pi) tau sum(W * exp(-tau^2 R^2 / 2))
        + (lam / 2) ||L||_F^2,        L = [[G; A1, ..., AN]],  eta <= eta_max

Large residuals barely move f, so outliers are down-weighted instead of
fitted. `fit` runs the whole pipeline: MAD rescaling, mean imputation for the
initializer, HOSVD/HOOI start, then bound-constrained L-BFGS on (G, A, eta).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np
from pydantic import BaseModel, Field

from .baseline import HooiConfig, hooi, hosvd
from .errors import (
    DegenerateDataError,
    FitError,
    LowerBoundViolation,
    OracleError,
    ShapeMismatchError,
)
from .optim import BoxBounds, SolveResult, SolverConfig, minimize
from .tensors import (
    DenseMatrix,
    DenseTensor,
    TuckerFactors,
    check_finite,
    multi_mode_dot,
    tucker_to_full,
    unfold,
    validate_rank,
)

logger = logging.getLogger(__name__)

SQRT_PI_TERM = 1.0 / (2.0 * math.sqrt(math.pi))
GAUSS_TERM = math.sqrt(2.0 / math.pi)
# Per-entry infimum of the criterion divided by tau (every exp term equals 1).
ZERO_RESIDUAL_TERM = SQRT_PI_TERM - GAUSS_TERM

DEFAULT_TAU_MAX = 50.0
FEATURE_EXTRACTION_TAU_MAX = 20.0
DEFAULT_ETA0 = math.log(0.01)
DEFAULT_LAMBDA = 1e-8
# Observed entries are rescaled to this mean absolute deviation before fitting.
TARGET_MAD = 0.1

SOLVE_EXTRAS = ("evaluations", "skipped_updates", "message")


# === Configuration ===


class InitMethod(str, Enum):
    HOSVD = "hosvd"
    HOOI = "hooi"


class FitConfig(BaseModel):
    """Settings for one robust Tucker fit."""

    rank: tuple[int, ...] = Field(..., min_length=1)
    eta_max: float = Field(default=math.log(DEFAULT_TAU_MAX))
    lam: float = Field(DEFAULT_LAMBDA, ge=0.0, description="Ridge weight on ||L||^2")
    eta0: float = DEFAULT_ETA0
    init_method: InitMethod = InitMethod.HOSVD
    solver: SolverConfig = Field(default_factory=SolverConfig)
    check_lower_bound: bool = True

    @classmethod
    def from_tau_max(cls, rank: tuple[int, ...], tau_max: float, **kwargs: Any) -> FitConfig:
        if not tau_max > 0:
            raise ValueError(f"tau_max must be positive, got {tau_max}")
        return cls(rank=rank, eta_max=math.log(tau_max), **kwargs)

    @classmethod
    def feature_extraction(cls, rank: tuple[int, ...], **kwargs: Any) -> FitConfig:
        return cls.from_tau_max(rank, FEATURE_EXTRACTION_TAU_MAX, **kwargs)

    @property
    def tau_max(self) -> float:
        return math.exp(self.eta_max)


# === Data and model types ===


@dataclass(frozen=True, eq=False)
class MaskedTensor:
    """
    Partially observed tensor: values X plus binary mask W of the same dims.

    Value slots where W is 0 are never read by any objective; they may hold
    NaN.
    """

    values: DenseTensor
    mask: DenseTensor

    def __post_init__(self) -> None:
        if self.values.dims != self.mask.dims:
            raise ShapeMismatchError(
                f"values dims {self.values.dims} differ from mask dims {self.mask.dims}",
                self.values.dims,
                self.mask.dims,
            )
        m = self.mask.data
        if not np.all((m == 0.0) | (m == 1.0)):
            raise ValueError("mask entries must be 0 or 1")
        if not np.any(m == 1.0):
            raise DegenerateDataError("mask has no observed entries")
        check_finite(self.values.data[m == 1.0], "observed values")

    @classmethod
    def full(cls, values: DenseTensor) -> MaskedTensor:
        return cls(values=values, mask=DenseTensor.ones(values.dims))

    @classmethod
    def from_array(cls, values: np.ndarray, mask: np.ndarray | None = None) -> MaskedTensor:
        """Build from N-d arrays; without a mask, NaN entries are treated as missing."""
        arr = np.asarray(values, dtype=np.float64)
        if mask is None:
            mask = ~np.isnan(arr)
        return cls(
            values=DenseTensor.from_array(arr),
            mask=DenseTensor.from_array(np.asarray(mask, dtype=np.float64)),
        )

    @property
    def dims(self) -> tuple[int, ...]:
        return self.values.dims

    @property
    def observed(self) -> np.ndarray:
        """Flat boolean mask in storage order."""
        return self.mask.data == 1.0

    @property
    def observed_count(self) -> int:
        return int(np.count_nonzero(self.observed))

    def observed_indices(self) -> np.ndarray:
        return np.flatnonzero(self.observed)

    def observed_values(self) -> np.ndarray:
        return self.values.data[self.observed]

    def filled(self, value: float) -> np.ndarray:
        """Flat values with every unobserved slot replaced by `value`."""
        return np.where(self.observed, self.values.data, value)

    def with_observed(self, observed: np.ndarray, blank: float = np.nan) -> MaskedTensor:
        """Restrict to `observed` (flat bool); dropped slots are overwritten with `blank`."""
        keep = self.observed & np.asarray(observed, dtype=bool)
        return MaskedTensor(
            values=DenseTensor(self.dims, np.where(keep, self.values.data, blank)),
            mask=DenseTensor(self.dims, keep.astype(np.float64)),
        )


@dataclass(frozen=True, eq=False)
class L2EModel:
    """
    Fitted Tucker-L2E parameters.

    `factors` reconstruct L on the original data scale. `eta` is the
    log-precision on the rescaled data (observed MAD 0.1); `scale_s` is the
    MAD of the observed entries at fit time.
    """

    factors: TuckerFactors
    eta: float
    scale_s: float = 1.0
    solve: dict[str, Any] | None = None

    def __post_init__(self) -> None:
        if not self.scale_s > 0:
            raise ValueError(f"scale_s must be positive, got {self.scale_s}")

    @property
    def tau(self) -> float:
        return math.exp(self.eta)

    @property
    def ranks(self) -> tuple[int, ...]:
        return self.factors.ranks

    @property
    def dims(self) -> tuple[int, ...]:
        return self.factors.dims

    def to_dict(self) -> dict[str, Any]:
        return {
            "dims": list(self.dims),
            "ranks": list(self.ranks),
            "core": self.factors.core.data.tolist(),
            "factors": [f.data.tolist() for f in self.factors.factors],
            "eta": self.eta,
            "tau": self.tau,
            "scale_s": self.scale_s,
            "solve": self.solve,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> L2EModel:
        dims = tuple(data["dims"])
        ranks = tuple(data["ranks"])
        core = DenseTensor(ranks, np.asarray(data["core"], dtype=np.float64))
        factors = tuple(
            DenseMatrix(rows=i, cols=r, data=np.asarray(vec, dtype=np.float64))
            for i, r, vec in zip(dims, ranks, data["factors"])
        )
        return cls(
            factors=TuckerFactors(core=core, factors=factors),
            eta=float(data["eta"]),
            scale_s=float(data["scale_s"]),
            solve=data.get("solve"),
        )


@dataclass(frozen=True, eq=False)
class L2EGradient:
    core: DenseTensor
    factors: tuple[DenseMatrix, ...]
    eta: float


@dataclass(frozen=True)
class ParameterShapes:
    """Layout of the packed vector: vec(G), vec(A1), ..., vec(AN), eta."""

    dims: tuple[int, ...]
    ranks: tuple[int, ...]

    @property
    def size(self) -> int:
        return math.prod(self.ranks) + sum(i * r for i, r in zip(self.dims, self.ranks)) + 1

    @classmethod
    def of(cls, model: L2EModel) -> ParameterShapes:
        return cls(dims=model.dims, ranks=model.ranks)


# === Univariate criterion ===


def _sample(xs: np.ndarray | list[float]) -> np.ndarray:
    arr = np.asarray(xs, dtype=np.float64).ravel()
    if arr.size == 0:
        raise DegenerateDataError("empty sample")
    check_finite(arr, "sample")
    return arr


def univariate_l2e(xs: np.ndarray | list[float], mu: float, tau: float) -> float:
    """h(mu, tau) = tau/(2 sqrt(pi)) - (tau/n) sqrt(2/pi) sum exp(-tau^2 (x_i - mu)^2 / 2)."""
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    arr = _sample(xs)
    kernel = np.exp(-0.5 * tau**2 * (arr - mu) ** 2)
    return float(tau * SQRT_PI_TERM - tau * GAUSS_TERM * np.mean(kernel))


def univariate_profile(
    xs: np.ndarray | list[float], mus: np.ndarray | list[float], tau: float
) -> np.ndarray:
    """h(mu, tau) evaluated at every mu of a grid."""
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    arr = _sample(xs)
    grid = np.asarray(mus, dtype=np.float64).ravel()
    kernel = np.exp(-0.5 * tau**2 * (arr[None, :] - grid[:, None]) ** 2)
    return tau * SQRT_PI_TERM - tau * GAUSS_TERM * kernel.mean(axis=1)


def univariate_l2e_gradient(
    xs: np.ndarray | list[float], mu: float, eta: float
) -> tuple[float, float, float]:
    """Returns (h, dh/dmu, dh/deta) at tau = exp(eta)."""
    arr = _sample(xs)
    tau = math.exp(eta)
    r = arr - mu
    kernel = np.exp(-0.5 * tau**2 * r**2)
    value = tau * SQRT_PI_TERM - tau * GAUSS_TERM * float(np.mean(kernel))
    d_mu = -GAUSS_TERM * tau**3 * float(np.mean(kernel * r))
    d_eta = tau * (SQRT_PI_TERM + GAUSS_TERM * float(np.mean(kernel * (tau**2 * r**2 - 1.0))))
    return value, d_mu, d_eta


@dataclass
class UnivariateFit:
    mu: float
    eta: float
    result: SolveResult

    @property
    def tau(self) -> float:
        return math.exp(self.eta)


def fit_univariate(
    xs: np.ndarray | list[float],
    eta_max: float | None = None,
    mu0: float | None = None,
    eta0: float | None = None,
    cfg: SolverConfig | None = None,
) -> UnivariateFit:
    """
    Joint L2E estimate of a location mu and precision tau.

    Starts from the sample median and the reciprocal sample standard
    deviation unless told otherwise.
    """
    arr = _sample(xs)
    if mu0 is None:
        mu0 = float(np.median(arr))
    if eta0 is None:
        spread = float(np.std(arr))
        eta0 = -math.log(spread) if spread > 0 else 0.0
    upper = np.inf if eta_max is None else eta_max
    eta0 = min(eta0, upper)

    def oracle(x: np.ndarray) -> tuple[float, np.ndarray]:
        value, d_mu, d_eta = univariate_l2e_gradient(arr, float(x[0]), float(x[1]))
        return value, np.array([d_mu, d_eta])

    result = minimize(oracle, np.array([mu0, eta0]), BoxBounds.only_last(2, upper), cfg)
    return UnivariateFit(mu=float(result.x_star[0]), eta=float(result.x_star[1]), result=result)


# === Tucker criterion ===


def _evaluate(
    X: np.ndarray,
    W: np.ndarray,
    core: np.ndarray,
    factors: list[np.ndarray],
    eta: float,
    lam: float,
    gradient: bool = True,
) -> tuple[float, tuple[np.ndarray, list[np.ndarray], float] | None]:
    """Criterion value and, optionally, (dG, [dA_n], d_eta). X holds 0 where W is False."""
    tau = math.exp(eta)
    L = multi_mode_dot(core, factors)
    R = np.where(W, X - L, 0.0)
    kernel = np.where(W, np.exp(-0.5 * tau**2 * R * R), 0.0)
    n_obs = float(np.count_nonzero(W))
    value = n_obs * tau * SQRT_PI_TERM - GAUSS_TERM * tau * float(np.sum(kernel))
    if lam:
        value += 0.5 * lam * float(np.sum(L * L))
    if not gradient:
        return value, None

    B = -GAUSS_TERM * tau**3 * kernel * R
    if lam:
        B = B + lam * L
    d_core = multi_mode_dot(B, factors, transpose=True)
    d_factors = [
        unfold(multi_mode_dot(B, factors, skip=n, transpose=True), n) @ unfold(core, n).T
        for n in range(len(factors))
    ]
    spread = float(np.sum(kernel * (tau**2 * R * R - 1.0)))
    d_eta = tau * (n_obs * SQRT_PI_TERM + GAUSS_TERM * spread)
    return value, (d_core, d_factors, d_eta)


def _arrays(data: MaskedTensor) -> tuple[np.ndarray, np.ndarray]:
    W = data.observed.reshape(data.dims, order="F")
    X = data.filled(0.0).reshape(data.dims, order="F")
    return X, W


def l2e_objective(data: MaskedTensor, L: DenseTensor, eta: float, lam: float = 0.0) -> float:
    """Masked L2 criterion at a given low-rank tensor L (ridge included when lam > 0)."""
    if L.dims != data.dims:
        raise ShapeMismatchError(
            f"L dims {L.dims} differ from data dims {data.dims}", data.dims, L.dims
        )
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    X, W = _arrays(data)
    tau = math.exp(eta)
    R = np.where(W, X - L.array, 0.0)
    kernel = np.where(W, np.exp(-0.5 * tau**2 * R * R), 0.0)
    value = data.observed_count * tau * SQRT_PI_TERM - GAUSS_TERM * tau * float(np.sum(kernel))
    return value + 0.5 * lam * float(np.sum(L.data * L.data))


def l2e_gradient(data: MaskedTensor, model: L2EModel, lam: float = 0.0) -> L2EGradient:
    """Gradient of the criterion at L = [[G; A1..AN]] w.r.t. G, each A_n and eta."""
    if model.dims != data.dims:
        raise ShapeMismatchError(
            f"model dims {model.dims} differ from data dims {data.dims}", data.dims, model.dims
        )
    X, W = _arrays(data)
    factors = [A.array for A in model.factors.factors]
    _, grads = _evaluate(X, W, model.factors.core.array, factors, model.eta, lam)
    assert grads is not None
    d_core, d_factors, d_eta = grads
    return L2EGradient(
        core=DenseTensor.from_array(d_core),
        factors=tuple(DenseMatrix.from_array(d) for d in d_factors),
        eta=d_eta,
    )


# === Packing ===


def _split(
    vector: np.ndarray, shapes: ParameterShapes
) -> tuple[np.ndarray, list[np.ndarray], float]:
    if vector.size != shapes.size:
        raise ShapeMismatchError(
            f"packed vector has length {vector.size}, expected {shapes.size}",
            shapes.size,
            vector.size,
        )
    offset = math.prod(shapes.ranks)
    core = vector[:offset].reshape(shapes.ranks, order="F")
    factors = []
    for i, r in zip(shapes.dims, shapes.ranks):
        factors.append(vector[offset : offset + i * r].reshape((i, r), order="F"))
        offset += i * r
    return core, factors, float(vector[-1])


def _join(core: np.ndarray, factors: list[np.ndarray], eta: float) -> np.ndarray:
    parts = [core.ravel(order="F")] + [A.ravel(order="F") for A in factors] + [np.array([eta])]
    return np.concatenate(parts)


def pack(model: L2EModel) -> np.ndarray:
    return _join(model.factors.core.array, [A.array for A in model.factors.factors], model.eta)


def unpack(vector: np.ndarray, shapes: ParameterShapes, scale_s: float = 1.0) -> L2EModel:
    core, factors, eta = _split(np.asarray(vector, dtype=np.float64).ravel(), shapes)
    return L2EModel(factors=TuckerFactors.from_arrays(core, factors), eta=eta, scale_s=scale_s)


class L2EOracle:
    """
    Value and gradient of the criterion at a packed parameter vector.

    With `eta_max` set, every value is checked against the analytic lower
    bound sum(W) * exp(eta_max) * (1/(2 sqrt(pi)) - sqrt(2/pi)).
    """

    def __init__(
        self,
        data: MaskedTensor,
        ranks: tuple[int, ...],
        lam: float = DEFAULT_LAMBDA,
        eta_max: float | None = None,
    ):
        self.X, self.W = _arrays(data)
        self.shapes = ParameterShapes(dims=data.dims, ranks=validate_rank(ranks, data.dims))
        self.lam = lam
        self.lower_bound: float | None = None
        if eta_max is not None:
            self.lower_bound = data.observed_count * math.exp(eta_max) * ZERO_RESIDUAL_TERM
        self.evaluations = 0

    def value(self, x: np.ndarray) -> float:
        core, factors, eta = _split(x, self.shapes)
        return _evaluate(self.X, self.W, core, factors, eta, self.lam, gradient=False)[0]

    def __call__(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        self.evaluations += 1
        core, factors, eta = _split(x, self.shapes)
        value, grads = _evaluate(self.X, self.W, core, factors, eta, self.lam)
        assert grads is not None
        if self.lower_bound is not None:
            slack = 1e-12 * max(1.0, abs(self.lower_bound))
            if value < self.lower_bound - slack:
                raise LowerBoundViolation(value, self.lower_bound)
        return value, _join(*grads)


# === Fitting ===


def mean_absolute_deviation(values: np.ndarray) -> float:
    """Mean of |x - mean(x)|."""
    arr = np.asarray(values, dtype=np.float64)
    return float(np.mean(np.abs(arr - arr.mean())))


def _initialize(imputed: DenseTensor, rank: tuple[int, ...], method: InitMethod) -> TuckerFactors:
    if method == InitMethod.HOOI:
        return hooi(imputed, HooiConfig(rank=rank))
    return hosvd(imputed, rank)


def _to_model(
    x: np.ndarray, shapes: ParameterShapes, s: float, solve: dict[str, Any] | None
) -> L2EModel:
    core, factors, eta = _split(x, shapes)
    return L2EModel(
        factors=TuckerFactors.from_arrays(core * (10.0 * s), factors),
        eta=eta,
        scale_s=s,
        solve=solve,
    )


def fit(data: MaskedTensor, cfg: FitConfig) -> L2EModel:
    """
    Robust Tucker fit.

    1. s = MAD of the observed entries; the data are divided by 10s.
    2. Unobserved entries get the observed mean, for the initializer only.
    3. HOSVD or HOOI of the imputed tensor gives (G0, A0); eta starts at eta0.
    4. L-BFGS-B minimizes the masked criterion subject to eta <= eta_max.
    5. The core is multiplied back by 10s, so predict() is on the input scale.

    Raises:
        RankError: rank incompatible with the data dims
        DegenerateDataError: every observed entry has the same value
        FitError: the solver hit a non-finite evaluation; carries the partial model
    """
    rank = validate_rank(cfg.rank, data.dims)
    observed = data.observed_values()
    s = mean_absolute_deviation(observed)
    if not s > 0:
        raise DegenerateDataError("all observed entries are identical (MAD is zero)")

    scale = 10.0 * s
    scaled = MaskedTensor(
        values=DenseTensor(data.dims, data.filled(0.0) / scale),
        mask=data.mask,
    )
    fill = float(np.mean(observed / scale))
    init = _initialize(DenseTensor(data.dims, scaled.filled(fill)), rank, cfg.init_method)

    oracle = L2EOracle(
        scaled, rank, cfg.lam, cfg.eta_max if cfg.check_lower_bound else None
    )
    eta0 = min(cfg.eta0, cfg.eta_max)
    x0 = _join(init.core.array, [A.array for A in init.factors], eta0)
    bounds = BoxBounds.only_last(x0.size, cfg.eta_max)
    try:
        result = minimize(oracle, x0, bounds, cfg.solver)
    except OracleError as exc:
        last = x0 if exc.x is None else bounds.clamp(exc.x)
        partial = _to_model(last, oracle.shapes, s, {"status": "oracle_error", "message": str(exc)})
        raise FitError(f"robust fit aborted: {exc}", partial) from exc

    model = _to_model(result.x_star, oracle.shapes, s, result.to_dict())
    logger.info(
        "fit rank=%s status=%s iterations=%d tau=%.4g",
        rank,
        result.status.value,
        result.iterations,
        model.tau,
    )
    return model


def predict(model: L2EModel) -> DenseTensor:
    """Low-rank estimate on the original data scale."""
    return tucker_to_full(model.factors)


@dataclass
class FitSummary:
    """Flat view of a fit for tables and metadata files."""

    status: str
    iterations: int
    objective: float
    projected_grad_norm: float
    eta_star: float
    tau_star: float
    scale_s: float
    extra: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def of(cls, model: L2EModel) -> FitSummary:
        solve = model.solve or {}
        return cls(
            status=str(solve.get("status", "unknown")),
            iterations=int(solve.get("iterations", 0)),
            objective=float(solve.get("f_star", float("nan"))),
            projected_grad_norm=float(solve.get("projected_grad_norm", float("nan"))),
            eta_star=model.eta,
            tau_star=model.tau,
            scale_s=model.scale_s,
            extra={k: v for k, v in solve.items() if k in SOLVE_EXTRAS},
        )

    def to_dict(self) -> dict[str, Any]:
        out = {
            "status": self.status,
            "iterations": self.iterations,
            "objective": self.objective,
            "projected_grad_norm": self.projected_grad_norm,
            "eta_star": self.eta_star,
            "tau_star": self.tau_star,
            "scale_s": self.scale_s,
        }
        out.update(self.extra)
        return out
