"""
Tucker-L2E Optimizer - Limited-memory BFGS with simple bounds.

Each iteration:

1. Generalized Cauchy point: piecewise search along the projected steepest
   descent path, using the compact representation B = theta*I - W M W^T.
2. Subspace minimization of the quadratic model over the variables left free
   by the Cauchy point (two-loop recursion when every variable is free).
3. Strong-Wolfe line search along x_bar - x, capped at the largest feasible
   step, with cubic/quadratic interpolation.
4. Curvature pair (s, y) stored unless s^T y <= eps * ||s|| * ||y||.

The oracle is only ever evaluated at points inside the box.
"""

from __future__ import annotations

import logging
from collections import deque
from collections.abc import Callable
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Protocol

import numpy as np
from pydantic import BaseModel, Field, model_validator

from .errors import OracleError, ShapeMismatchError

logger = logging.getLogger(__name__)


# === Types ===


class SolveStatus(str, Enum):
    CONVERGED = "converged"
    MAX_ITERS = "max_iters"
    LINE_SEARCH_FAILURE = "line_search_failure"


class ObjectiveOracle(Protocol):
    """Returns (value, gradient) at x; deterministic for a fixed x."""

    def __call__(self, x: np.ndarray) -> tuple[float, np.ndarray]: ...


class SolverConfig(BaseModel):
    memory: int = Field(10, ge=1, description="Stored curvature pairs m")
    max_iters: int = Field(1000, ge=1)
    grad_tolerance: float = Field(1e-8, ge=0.0, description="Stop when ||proj grad||_inf <= this")
    f_tolerance: float = Field(1e-12, ge=0.0, description="Relative objective change stop")
    stall_iters: int = Field(
        5, ge=1, description="Consecutive below-f_tolerance reductions before stopping"
    )
    max_line_search_steps: int = Field(20, ge=1)
    sufficient_decrease: float = Field(1e-4, gt=0.0, lt=1.0)
    curvature: float = Field(0.9, gt=0.0, lt=1.0)
    curvature_skip: float = Field(1e-10, ge=0.0)

    @model_validator(mode="after")
    def _wolfe_order(self) -> SolverConfig:
        if self.sufficient_decrease >= self.curvature:
            raise ValueError("sufficient_decrease must be smaller than curvature")
        return self


@dataclass(frozen=True, eq=False)
class BoxBounds:
    """Per-coordinate bounds; -inf/+inf mean unbounded."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        lower = np.array(self.lower, dtype=np.float64).ravel()
        upper = np.array(self.upper, dtype=np.float64).ravel()
        if lower.shape != upper.shape:
            raise ShapeMismatchError(
                "lower and upper bounds differ in length", lower.size, upper.size
            )
        if np.isnan(lower).any() or np.isnan(upper).any():
            raise ValueError("bounds must not contain NaN")
        if np.any(lower > upper):
            raise ValueError("lower bound exceeds upper bound")
        lower.setflags(write=False)
        upper.setflags(write=False)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def unbounded(cls, n: int) -> BoxBounds:
        return cls(np.full(n, -np.inf), np.full(n, np.inf))

    @classmethod
    def only_last(cls, n: int, upper: float) -> BoxBounds:
        """All coordinates free except the last, bounded above by `upper`."""
        hi = np.full(n, np.inf)
        hi[-1] = upper
        return cls(np.full(n, -np.inf), hi)

    @property
    def size(self) -> int:
        return int(self.lower.size)

    @property
    def is_unbounded(self) -> bool:
        return bool(np.all(np.isneginf(self.lower)) and np.all(np.isposinf(self.upper)))

    def clamp(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)

    def contains(self, x: np.ndarray) -> bool:
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def max_step(self, x: np.ndarray, d: np.ndarray) -> float:
        """Largest t >= 0 with x + t*d inside the box."""
        with np.errstate(divide="ignore", invalid="ignore"):
            up = np.where(d > 0, (self.upper - x) / d, np.inf)
            down = np.where(d < 0, (self.lower - x) / d, np.inf)
        return float(max(0.0, min(up.min(initial=np.inf), down.min(initial=np.inf))))


@dataclass
class SolveResult:
    x_star: np.ndarray
    f_star: float
    projected_grad_norm: float
    iterations: int
    status: SolveStatus
    evaluations: int = 0
    skipped_updates: int = 0
    f_history: list[float] = field(default_factory=list)
    message: str = ""

    @property
    def converged(self) -> bool:
        return self.status == SolveStatus.CONVERGED

    def to_dict(self) -> dict[str, Any]:
        return {
            "status": self.status.value,
            "iterations": self.iterations,
            "evaluations": self.evaluations,
            "f_star": self.f_star,
            "projected_grad_norm": self.projected_grad_norm,
            "skipped_updates": self.skipped_updates,
            "message": self.message,
        }


# === Internals ===


class _Evaluator:
    """Counts oracle calls and rejects non-finite output."""

    def __init__(self, oracle: ObjectiveOracle, n: int):
        self.oracle = oracle
        self.n = n
        self.calls = 0

    def __call__(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        self.calls += 1
        value, grad = self.oracle(x)
        value = float(value)
        grad = np.asarray(grad, dtype=np.float64).ravel()
        if grad.size != self.n:
            raise ShapeMismatchError(
                f"oracle gradient has length {grad.size}, expected {self.n}", self.n, grad.size
            )
        if not np.isfinite(value) or not np.all(np.isfinite(grad)):
            raise OracleError(
                f"oracle returned a non-finite value or gradient (f={value})", x.copy()
            )
        return value, grad


class _Memory:
    """Curvature pairs and the compact representation built from them."""

    def __init__(self, size: int):
        self.pairs: deque[tuple[np.ndarray, np.ndarray]] = deque(maxlen=size)
        self.theta = 1.0

    def __len__(self) -> int:
        return len(self.pairs)

    def clear(self) -> None:
        self.pairs.clear()
        self.theta = 1.0

    def push(self, s: np.ndarray, y: np.ndarray, eps: float) -> bool:
        sy = float(s @ y)
        if sy <= eps * np.linalg.norm(s) * np.linalg.norm(y):
            return False
        self.pairs.append((s, y))
        self.theta = float(y @ y) / sy
        return True

    def two_loop(self, v: np.ndarray) -> np.ndarray:
        """H v for the inverse-Hessian approximation with H0 = I/theta."""
        q = v.copy()
        alphas = []
        for s, y in reversed(self.pairs):
            rho = 1.0 / float(y @ s)
            a = rho * float(s @ q)
            q -= a * y
            alphas.append((rho, a))
        r = q / self.theta
        for (s, y), (rho, a) in zip(self.pairs, reversed(alphas)):
            b = rho * float(y @ r)
            r += s * (a - b)
        return r

    def compact(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """W = [Y, theta*S] and the middle matrix M."""
        if not self.pairs:
            return np.zeros((n, 0)), np.zeros((0, 0))
        S = np.column_stack([s for s, _ in self.pairs])
        Y = np.column_stack([y for _, y in self.pairs])
        SY = S.T @ Y
        D = np.diag(np.diag(SY))
        L = np.tril(SY, k=-1)
        middle = np.block([[-D, L.T], [L, self.theta * (S.T @ S)]])
        return np.hstack([Y, self.theta * S]), np.linalg.inv(middle)


def _projected_gradient_norm(x: np.ndarray, g: np.ndarray, bounds: BoxBounds) -> float:
    if x.size == 0:
        return 0.0
    return float(np.max(np.abs(bounds.clamp(x - g) - x)))


def _cauchy_point(
    x: np.ndarray, g: np.ndarray, bounds: BoxBounds, memory: _Memory
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Generalized Cauchy point; also returns W, M and c = W^T (xcp - x)."""
    n = x.size
    theta = memory.theta
    W, M = memory.compact(n)
    lo, hi = bounds.lower, bounds.upper

    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(g < 0, (x - hi) / g, np.where(g > 0, (x - lo) / g, np.inf))
    d = np.where(t > 0, -g, 0.0)
    xcp = x.copy()

    p = W.T @ d
    c = np.zeros(W.shape[1])
    fp = -float(d @ d)
    fpp = -theta * fp - float(p @ M @ p)
    dt_min = -fp / fpp if fpp > 0 else 0.0
    t_old = 0.0

    candidates = np.flatnonzero((t > 0) & np.isfinite(t))
    order = candidates[np.argsort(t[candidates], kind="stable")]
    for b in order:
        dt = t[b] - t_old
        if dt_min < dt:
            break
        xcp[b] = hi[b] if d[b] > 0 else lo[b]
        zb = xcp[b] - x[b]
        c = c + dt * p
        wb = W[b]
        gb = g[b]
        fp = fp + dt * fpp + gb * gb + theta * gb * zb - gb * float(wb @ M @ c)
        fpp = fpp - theta * gb * gb - 2.0 * gb * float(wb @ M @ p) - gb * gb * float(wb @ M @ wb)
        p = p + gb * wb
        d[b] = 0.0
        t_old = t[b]
        if not np.any(d):
            dt_min = 0.0
            break
        dt_min = -fp / fpp if fpp > 0 else 0.0

    dt_min = max(dt_min, 0.0)
    t_old += dt_min
    xcp += t_old * d
    xcp = bounds.clamp(xcp)
    c = c + dt_min * p
    return xcp, W, M, c


def _search_direction(
    x: np.ndarray, g: np.ndarray, bounds: BoxBounds, memory: _Memory
) -> np.ndarray:
    if bounds.is_unbounded:
        return -memory.two_loop(g) if len(memory) else -g

    xcp, W, M, c = _cauchy_point(x, g, bounds, memory)
    free = (xcp > bounds.lower) & (xcp < bounds.upper)
    if not np.any(free):
        return xcp - x

    theta = memory.theta
    reduced = (g + theta * (xcp - x) - W @ (M @ c))[free]
    if not len(memory):
        step = -reduced / theta
    elif np.all(free):
        step = -memory.two_loop(reduced)
    else:
        WZ = W[free]
        v = M @ (WZ.T @ reduced)
        N = np.eye(M.shape[0]) - (M @ (WZ.T @ WZ)) / theta
        v = np.linalg.solve(N, v)
        step = -reduced / theta - (WZ @ v) / theta**2

    sub = BoxBounds(bounds.lower[free], bounds.upper[free])
    alpha = min(1.0, sub.max_step(xcp[free], step))
    x_bar = xcp.copy()
    x_bar[free] += alpha * step
    return bounds.clamp(x_bar) - x


def _cubicmin(
    a: float, fa: float, fpa: float, b: float, fb: float, c: float, fc: float
) -> float | None:
    """Minimizer of the cubic through (a, fa, fpa), (b, fb), (c, fc)."""
    with np.errstate(divide="raise", over="raise", invalid="raise"):
        try:
            C = fpa
            db = b - a
            dc = c - a
            denom = (db * dc) ** 2 * (db - dc)
            d1 = np.array([[dc**2, -(db**2)], [-(dc**3), db**3]])
            A, B = d1 @ np.array([fb - fa - C * db, fc - fa - C * dc])
            A /= denom
            B /= denom
            radical = B * B - 3 * A * C
            xmin = a + (-B + np.sqrt(radical)) / (3 * A)
        except ArithmeticError:
            return None
    return float(xmin) if np.isfinite(xmin) else None


def _quadmin(a: float, fa: float, fpa: float, b: float, fb: float) -> float | None:
    """Minimizer of the quadratic through (a, fa, fpa), (b, fb)."""
    with np.errstate(divide="raise", over="raise", invalid="raise"):
        try:
            db = b - a
            B = (fb - fa - fpa * db) / (db * db)
            xmin = a - fpa / (2.0 * B)
        except ArithmeticError:
            return None
    return float(xmin) if np.isfinite(xmin) else None


@dataclass
class _LineSearch:
    """Strong-Wolfe search on phi(alpha) = f(x + alpha*d)."""

    evaluate: Callable[[np.ndarray], tuple[float, np.ndarray]]
    bounds: BoxBounds
    x: np.ndarray
    d: np.ndarray
    f0: float
    dphi0: float
    cfg: SolverConfig
    budget: int = 0
    _last: tuple[float, float, np.ndarray, np.ndarray] = field(init=False, repr=False)

    def phi(self, alpha: float) -> tuple[float, float]:
        self.budget -= 1
        x_a = self.bounds.clamp(self.x + alpha * self.d)
        f_a, g_a = self.evaluate(x_a)
        self._last = (alpha, f_a, x_a, g_a)
        return f_a, float(g_a @ self.d)

    def _armijo(self, alpha: float, f_a: float) -> bool:
        return f_a <= self.f0 + self.cfg.sufficient_decrease * alpha * self.dphi0

    def _curvature(self, dphi_a: float) -> bool:
        return abs(dphi_a) <= -self.cfg.curvature * self.dphi0

    def _accept(self) -> tuple[float, float, np.ndarray, np.ndarray]:
        return self._last

    def run(
        self, alpha1: float, alpha_max: float
    ) -> tuple[float, float, np.ndarray, np.ndarray] | None:
        self.budget = self.cfg.max_line_search_steps
        alpha0, phi_a0, dphi_a0 = 0.0, self.f0, self.dphi0
        alpha1 = min(alpha1, alpha_max)
        first = True
        while self.budget > 0 and alpha1 > 0:
            phi_a1, dphi_a1 = self.phi(alpha1)
            if not self._armijo(alpha1, phi_a1) or (not first and phi_a1 >= phi_a0):
                return self._zoom(alpha0, alpha1, phi_a0, phi_a1, dphi_a0)
            if self._curvature(dphi_a1):
                return self._accept()
            if dphi_a1 >= 0:
                return self._zoom(alpha1, alpha0, phi_a1, phi_a0, dphi_a1)
            if alpha1 >= alpha_max:
                # Box edge reached while still descending: take the sufficient-decrease step.
                return self._accept()
            alpha0, phi_a0, dphi_a0 = alpha1, phi_a1, dphi_a1
            alpha1 = min(2.0 * alpha1, alpha_max)
            first = False
        return None

    def _zoom(
        self, a_lo: float, a_hi: float, phi_lo: float, phi_hi: float, dphi_lo: float
    ) -> tuple[float, float, np.ndarray, np.ndarray] | None:
        a_rec, phi_rec = 0.0, self.f0
        i = 0
        while self.budget > 0:
            dalpha = a_hi - a_lo
            lo, hi = min(a_lo, a_hi), max(a_lo, a_hi)
            a_j = None
            if i > 0:
                cchk = 0.2 * abs(dalpha)
                a_j = _cubicmin(a_lo, phi_lo, dphi_lo, a_hi, phi_hi, a_rec, phi_rec)
                if a_j is not None and (a_j > hi - cchk or a_j < lo + cchk):
                    a_j = None
            if a_j is None:
                qchk = 0.1 * abs(dalpha)
                a_j = _quadmin(a_lo, phi_lo, dphi_lo, a_hi, phi_hi)
                if a_j is None or a_j > hi - qchk or a_j < lo + qchk:
                    a_j = a_lo + 0.5 * dalpha
            if a_j <= 0 or a_j == a_lo or a_j == a_hi:
                return None
            phi_j, dphi_j = self.phi(a_j)
            if not self._armijo(a_j, phi_j) or phi_j >= phi_lo:
                a_rec, phi_rec = a_hi, phi_hi
                a_hi, phi_hi = a_j, phi_j
            else:
                if self._curvature(dphi_j):
                    return self._accept()
                if dphi_j * (a_hi - a_lo) >= 0:
                    a_rec, phi_rec = a_hi, phi_hi
                    a_hi, phi_hi = a_lo, phi_lo
                else:
                    a_rec, phi_rec = a_lo, phi_lo
                a_lo, phi_lo, dphi_lo = a_j, phi_j, dphi_j
            i += 1
        return None


# === Public API ===


def minimize(
    oracle: ObjectiveOracle,
    x0: np.ndarray,
    bounds: BoxBounds | None = None,
    cfg: SolverConfig | None = None,
) -> SolveResult:
    """
    Minimize a smooth function subject to box constraints.

    Args:
        oracle: Callable returning (value, gradient)
        x0: Starting point, clamped into the box
        bounds: Box constraints (unbounded if omitted)
        cfg: Solver settings

    Returns:
        SolveResult; status is max_iters or line_search_failure when the
        run stopped early, with the best accepted iterate.

    Raises:
        OracleError: non-finite value or gradient at a feasible point
    """
    cfg = cfg or SolverConfig()
    x = np.array(x0, dtype=np.float64).ravel()
    bounds = bounds or BoxBounds.unbounded(x.size)
    if bounds.size != x.size:
        raise ShapeMismatchError(
            f"bounds have length {bounds.size}, x0 has length {x.size}", x.size, bounds.size
        )
    x = bounds.clamp(x)
    evaluate = _Evaluator(oracle, x.size)
    f, g = evaluate(x)

    memory = _Memory(cfg.memory)
    history = [f]
    skipped = 0
    iterations = 0
    stalled = 0
    status = SolveStatus.MAX_ITERS
    message = "iteration limit reached"
    pg = _projected_gradient_norm(x, g, bounds)
    if pg <= cfg.grad_tolerance:
        status, message = SolveStatus.CONVERGED, "projected gradient below tolerance"

    while status != SolveStatus.CONVERGED and iterations < cfg.max_iters:
        iterations += 1
        d = _search_direction(x, g, bounds, memory)
        slope = float(g @ d)
        if not slope < 0:
            if len(memory):
                logger.debug("iteration %d: not a descent direction, resetting memory", iterations)
                memory.clear()
                continue
            status, message = SolveStatus.LINE_SEARCH_FAILURE, "no descent direction"
            break

        alpha_max = bounds.max_step(x, d)
        alpha1 = 1.0 if len(memory) else min(1.0 / float(np.linalg.norm(d)), alpha_max)
        search = _LineSearch(evaluate, bounds, x, d, f, slope, cfg)
        accepted = search.run(alpha1, alpha_max)
        if accepted is None:
            if stalled:
                # Objective already flat to f_tolerance; no step resolves further decrease.
                status, message = SolveStatus.CONVERGED, "relative reduction below tolerance"
                break
            if len(memory):
                logger.debug("iteration %d: line search failed, resetting memory", iterations)
                memory.clear()
                continue
            status, message = SolveStatus.LINE_SEARCH_FAILURE, "no acceptable step length"
            break

        _, f_new, x_new, g_new = accepted
        if not memory.push(x_new - x, g_new - g, cfg.curvature_skip):
            skipped += 1
        f_prev = f
        x, f, g = x_new, f_new, g_new
        history.append(f)
        pg = _projected_gradient_norm(x, g, bounds)
        logger.debug("iteration %d: f=%.12e |pg|=%.3e", iterations, f, pg)

        if pg <= cfg.grad_tolerance:
            status, message = SolveStatus.CONVERGED, "projected gradient below tolerance"
        else:
            small = f_prev - f <= cfg.f_tolerance * max(abs(f_prev), abs(f))
            stalled = stalled + 1 if small else 0
            if stalled >= cfg.stall_iters:
                status, message = SolveStatus.CONVERGED, "relative reduction below tolerance"

    if skipped:
        logger.info("skipped %d curvature updates", skipped)
    return SolveResult(
        x_star=bounds.clamp(x),
        f_star=f,
        projected_grad_norm=pg,
        iterations=iterations,
        status=status,
        evaluations=evaluate.calls,
        skipped_updates=skipped,
        f_history=history,
        message=message,
    )


def finite_difference_gradient(
    oracle: ObjectiveOracle | Callable[[np.ndarray], Any],
    x: np.ndarray,
    h: float | np.ndarray = 1e-6,
) -> np.ndarray:
    """
    Central-difference gradient (f(x + h e_i) - f(x - h e_i)) / 2h.

    The oracle may return a bare value or a (value, gradient) pair; only the
    value is used. `h` may be a scalar or one step per coordinate.
    """
    x = np.array(x, dtype=np.float64).ravel()
    steps = np.broadcast_to(np.asarray(h, dtype=np.float64), x.shape)
    if np.any(steps <= 0):
        raise ValueError("finite-difference steps must be positive")

    def value(point: np.ndarray) -> float:
        out = oracle(point)
        v = float(out[0] if isinstance(out, tuple) else out)
        if not np.isfinite(v):
            raise OracleError(f"non-finite value {v} during finite differencing", point.copy())
        return v

    grad = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = steps[i]
        grad[i] = (value(x + e) - value(x - e)) / (2.0 * steps[i])
    return grad
