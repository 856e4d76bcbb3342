from __future__ import annotations

import math
from dataclasses import dataclass, field
from logging import getLogger
from typing import Any, Callable

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, Field
from scipy.integrate import solve_bvp
from scipy.interpolate import CubicHermiteSpline

from volfeedback.exceptions import (
    InvalidConfiguration,
    MeshRefinementExhausted,
    NoSolution,
    NonPositiveVolOfVol,
    SqrtDomainViolation,
    UndefinedAtZero,
)
from volfeedback.models import ModelParams, validate

logger = getLogger(__name__)

# Any iterate below this is treated as an inadmissible (non-positive) ratio
F_FLOOR = 1e-10

Floats = NDArray[np.float64]


class PDGridConfig(BaseModel, frozen=True):
    b: float = Field(default=5.0, gt=0)
    initial_mesh_size: int = Field(default=201, ge=11)
    tol: float = Field(default=1e-6, gt=0)
    continuation_step: float = Field(default=0.1, gt=0, le=0.25)
    max_continuation_steps: int = Field(default=20, ge=1)
    max_nodes: int = Field(default=100_000, ge=11)


def _output(result: Floats, x: ArrayLike) -> Any:
    if np.ndim(x) == 0:
        return float(result)

    return result


@dataclass(frozen=True, eq=False)
class PDSolution:
    """
    The price-dividend ratio f tabulated on `mesh` over [0, b].

    Queries are answered for any real x: f is even and f_x odd, and beyond b
    the tail f(x) = 1/(d + gamma x^2) is used, d being the ground-state
    discount rate. f is interpolated with
    cubic Hermite polynomials using the solver's own f_x as slopes, and f_x
    likewise with f_xx taken from the differential equation.
    """

    mesh: Floats
    f_vals: Floats
    fx_vals: Floats
    fxx_vals: Floats
    params: ModelParams
    residual_norm: float
    tol: float = 1e-6

    _f_spline: CubicHermiteSpline = field(init=False, repr=False, compare=False)
    _fx_spline: CubicHermiteSpline = field(
        init=False, repr=False, compare=False
    )

    def __post_init__(self) -> None:
        for array in (self.mesh, self.f_vals, self.fx_vals, self.fxx_vals):
            array.setflags(write=False)

        object.__setattr__(
            self,
            "_f_spline",
            CubicHermiteSpline(self.mesh, self.f_vals, self.fx_vals),
        )
        object.__setattr__(
            self,
            "_fx_spline",
            CubicHermiteSpline(self.mesh, self.fx_vals, self.fxx_vals),
        )

    @property
    def b(self) -> float:
        return float(self.mesh[-1])

    def f(self, x: ArrayLike) -> Any:
        ax = np.abs(np.asarray(x, dtype=float))
        inner = self._f_spline(np.minimum(ax, self.b))

        if not self.params.has_feedback:
            return _output(inner, x)

        outer, _ = asymptotic_ratio(self.params, np.maximum(ax, self.b))

        return _output(np.where(ax > self.b, outer, inner), x)

    def f_x(self, x: ArrayLike) -> Any:
        x_ = np.asarray(x, dtype=float)
        ax = np.abs(x_)
        inner = self._fx_spline(np.minimum(ax, self.b))

        if self.params.has_feedback:
            _, outer = asymptotic_ratio(self.params, np.maximum(ax, self.b))
            inner = np.where(ax > self.b, outer, inner)

        return _output(np.sign(x_) * inner, x)

    def log_slope(self, x: ArrayLike) -> Any:
        """sigma_x f_x(x) / f(x), the volatility loading of returns."""
        return self.params.sigma_x * np.asarray(self.f_x(x)) / np.asarray(
            self.f(x)
        )

    def loadings(self, x: ArrayLike) -> tuple[Floats, Floats, Floats]:
        """f, the log slope and the dividend volatility y, in one pass."""
        x_ = np.asarray(x, dtype=float)
        f = np.asarray(self.f(x_), dtype=float)
        log_slope = self.params.sigma_x * np.asarray(self.f_x(x_)) / f
        y = _dividend_vol_values(
            x_.ravel(), log_slope.ravel(), self.params.rho_dx, self.tol
        )

        return f, log_slope, y.reshape(x_.shape)


def _dividend_vol_values(
    x: Floats,
    log_slope: Floats,
    rho: float,
    tol: float | None,
) -> Floats:
    argument = x**2 - (1 - rho**2) * log_slope**2

    if tol is not None and np.any(argument < -tol):
        worst = float(x[np.argmin(argument)])
        raise SqrtDomainViolation(
            f"Dividend volatility is not real at x={worst:.6g} "
            f"(argument {float(argument.min()):.3g})"
        )

    return -rho * log_slope + np.sign(x) * np.sqrt(np.maximum(argument, 0.0))


def _ode(params: ModelParams, rho: float) -> Callable[[Floats, Floats], Floats]:
    sigma2 = params.sigma_x**2

    def fun(x: Floats, u: Floats) -> Floats:
        f, fx = u
        log_slope = params.sigma_x * fx / np.maximum(f, F_FLOOR)
        y = _dividend_vol_values(x, log_slope, rho, tol=None)
        discount = params.r + params.gamma * x**2 - params.alpha
        drift = params.sigma_x * rho * y - params.beta * x
        fxx = 2.0 / sigma2 * (discount * f - 1.0 - drift * fx)

        return np.vstack((fx, fxx))

    return fun


def _boundary(params: ModelParams, b: float) -> Callable[..., Floats]:
    f_b = float(asymptotic_ratio(params, b)[0])

    def bc(ua: Floats, ub: Floats) -> Floats:
        return np.array([ua[1], ub[0] - f_b])

    return bc


def ground_state_discount(params: ModelParams) -> float:
    """
    Exponential decay rate of E[exp(-int (r - alpha + gamma x_s^2) ds)] under
    the physical volatility process. The linear (rho_dx = 0) problem has a
    positive solution on [0, inf) exactly when this is positive.
    """
    root = math.sqrt(params.beta**2 + 2 * params.gamma * params.sigma_x**2)

    return params.r - params.alpha + (root - params.beta) / 2


def asymptotic_ratio(params: ModelParams, x: ArrayLike) -> tuple[Any, Any]:
    """
    f and f_x of 1/(d + gamma x^2), d = `ground_state_discount`. It behaves
    like 1/(gamma x^2) for large x and stays bounded as gamma vanishes.
    """
    x_ = np.asarray(x, dtype=float)
    f = 1.0 / (ground_state_discount(params) + params.gamma * x_**2)

    return f, -2.0 * params.gamma * x_ * f**2


def _initial_guess(params: ModelParams, mesh: Floats) -> Floats:
    return np.vstack(asymptotic_ratio(params, mesh))


@dataclass(frozen=True)
class _Stage:
    rho: float
    mesh: Floats
    u: Floats
    residual_norm: float


def _solve_stage(
    params: ModelParams,
    rho: float,
    mesh: Floats,
    guess: Floats,
    cfg: PDGridConfig,
) -> _Stage:
    result = solve_bvp(
        _ode(params, rho),
        _boundary(params, cfg.b),
        mesh,
        guess,
        tol=cfg.tol,
        max_nodes=cfg.max_nodes,
    )

    f_min = float(np.min(result.y[0])) if result.y.size else -math.inf
    residual_norm = (
        float(np.max(result.rms_residuals))
        if result.rms_residuals is not None
        else math.inf
    )

    logger.debug(
        f"rho_dx={rho:+.4f}: status={result.status} nodes={result.x.size} "
        f"residual={residual_norm:.3g} min f={f_min:.6g}",
        extra={"rho_dx": rho, "status": result.status},
    )

    if f_min <= F_FLOOR:
        raise NoSolution(
            f"Price-dividend ratio became non-positive at rho_dx={rho:+.4f}"
        )

    if result.status == 1:
        raise MeshRefinementExhausted(
            f"Mesh refinement exceeded {cfg.max_nodes} nodes at "
            f"rho_dx={rho:+.4f}"
        )

    if result.status != 0:
        raise NoSolution(f"{result.message} (rho_dx={rho:+.4f})")

    return _Stage(rho, result.x, result.y, residual_norm)


def _next_rho(rho: float, target: float, step: float) -> float:
    remaining = target - rho

    if abs(remaining) <= step:
        return target

    return rho + math.copysign(step, remaining)


def solve_pd_ratio(
    params: ModelParams, cfg: PDGridConfig = PDGridConfig()
) -> PDSolution:
    """
    Solve for the price-dividend ratio f on [0, b].

    The problem is solved first with rho_dx = 0, where it is linear, and then
    continued towards the target rho_dx, warm-starting each collocation solve
    from the previous stage. A stage that fails is retried with half the step.
    """
    validate(params)

    if not params.has_feedback:
        return pd_ratio_constant(
            params, b=cfg.b, mesh_size=cfg.initial_mesh_size
        )

    if params.sigma_x == 0:
        raise NonPositiveVolOfVol(
            "A positive sigma_x is required to solve the boundary value problem"
        )

    discount = ground_state_discount(params)

    if discount <= 0:
        raise NoSolution(
            f"Expected dividend growth alpha={params.alpha} is too high for "
            f"gamma={params.gamma}: long-run discount rate {discount:.4g} <= 0"
        )

    mesh = np.linspace(0.0, cfg.b, cfg.initial_mesh_size)
    stage = _solve_stage(
        params, 0.0, mesh, _initial_guess(params, mesh), cfg
    )

    step = cfg.continuation_step
    attempts = 0

    while stage.rho != params.rho_dx:
        if attempts >= cfg.max_continuation_steps:
            raise NoSolution(
                f"Continuation stalled at rho_dx={stage.rho:+.4f} after "
                f"{attempts} steps"
            )

        attempts += 1
        next_rho = _next_rho(stage.rho, params.rho_dx, step)

        try:
            stage = _solve_stage(params, next_rho, stage.mesh, stage.u, cfg)
        except (NoSolution, MeshRefinementExhausted) as exc:
            step /= 2

            if step < cfg.continuation_step / 16:
                raise NoSolution(
                    f"Continuation failed towards rho_dx={next_rho:+.4f}"
                ) from exc

    solution = _build_solution(params, stage, cfg)

    logger.info(
        f"Solved price-dividend ratio: f(0)={solution.f_vals[0]:.6g} on "
        f"{solution.mesh.size} nodes",
        extra={"params": params.as_dict()},
    )

    return solution


def _build_solution(
    params: ModelParams, stage: _Stage, cfg: PDGridConfig
) -> PDSolution:
    mesh = np.array(stage.mesh, dtype=float)
    f_vals = np.array(stage.u[0], dtype=float)
    fx_vals = np.array(stage.u[1], dtype=float)

    fx_vals[0] = 0.0
    f_vals[-1] = float(asymptotic_ratio(params, cfg.b)[0])

    log_slope = params.sigma_x * fx_vals / f_vals
    y = _dividend_vol_values(
        mesh,
        log_slope,
        params.rho_dx,
        tol=cfg.tol if params.rho_dx != 0 else None,
    )
    fxx_vals = np.asarray(_ode(params, params.rho_dx)(mesh, stage.u)[1])

    if np.any(y[1:] <= 0):
        logger.warning(
            "Dividend volatility is not positive everywhere on (0, b]",
            extra={"params": params.as_dict()},
        )

    if np.any(np.diff(f_vals) > cfg.tol * f_vals[0]):
        logger.warning(
            "Price-dividend ratio is not monotone on [0, b]",
            extra={"params": params.as_dict()},
        )

    return PDSolution(
        mesh=mesh,
        f_vals=f_vals,
        fx_vals=fx_vals,
        fxx_vals=fxx_vals,
        params=params,
        residual_norm=stage.residual_norm,
        tol=cfg.tol,
    )


def pd_ratio_constant(
    params: ModelParams, b: float = 5.0, mesh_size: int = 201
) -> PDSolution:
    validate(params)

    if params.has_feedback:
        raise InvalidConfiguration(
            f"The constant price-dividend ratio requires gamma = 0, "
            f"got {params.gamma}"
        )

    mesh = np.linspace(0.0, b, mesh_size)
    zeros = np.zeros_like(mesh)

    return PDSolution(
        mesh=mesh,
        f_vals=np.full_like(mesh, 1.0 / (params.r - params.alpha)),
        fx_vals=zeros,
        fxx_vals=zeros.copy(),
        params=params,
        residual_norm=0.0,
    )


def dividend_vol(sol: PDSolution, x: ArrayLike) -> Any:
    _, _, y = sol.loadings(x)

    return _output(y, x)


def return_vol_correlation(sol: PDSolution, x: ArrayLike) -> Any:
    x_ = np.asarray(x, dtype=float)

    if np.any(x_ == 0):
        raise UndefinedAtZero(
            "The return/volatility correlation is undefined at x = 0"
        )

    rho = sol.params.rho_dx
    log_slope = np.asarray(sol.log_slope(x_))
    y = np.asarray(dividend_vol(sol, x_))

    numerator = log_slope + y * rho
    variance = log_slope**2 + y**2 + 2 * rho * log_slope * y
    correlation = np.sign(x_) * numerator / np.sqrt(variance)

    return _output(np.clip(correlation, -1.0, 1.0), x)


def dividend_yield(sol: PDSolution, x: ArrayLike) -> Any:
    return _output(1.0 / np.asarray(sol.f(x)), x)


def excess_volatility_holds(sol: PDSolution, x: float) -> bool:
    """
    Whether return volatility exceeds dividend volatility at x, read off
    x^2 - y^2 = l (l + 2 rho_dx y) with l the volatility loading of returns.
    """
    if x <= 0:
        raise InvalidConfiguration("The excess volatility test needs x > 0")

    _, log_slope, y = sol.loadings(x)
    loading = float(log_slope)

    # with no feedback x^2 == y^2 and the inequality is never strict
    if loading == 0:
        return False

    return loading * (loading + 2 * sol.params.rho_dx * float(y)) > 0


def risk_neutral_dividend_drift(sol: PDSolution, x: ArrayLike) -> Any:
    """Expected dividend growth rate under the risk-neutral measure."""
    x_ = np.asarray(x, dtype=float)
    params = sol.params
    slope = np.asarray(sol.f_x(x_)) / np.asarray(sol.f(x_))

    drift = params.alpha - params.gamma * x_**2 + slope * params.lambda_x * x_

    return _output(drift, x)


def solution_table(
    sol: PDSolution, xs: ArrayLike | None = None
) -> pd.DataFrame:
    xs_ = sol.mesh if xs is None else np.asarray(xs, dtype=float)

    rho_rx = np.full_like(xs_, np.nan)
    nonzero = xs_ != 0
    rho_rx[nonzero] = return_vol_correlation(sol, xs_[nonzero])

    return pd.DataFrame(
        {
            "x": xs_,
            "f": sol.f(xs_),
            "f_x": sol.f_x(xs_),
            "y": dividend_vol(sol, xs_),
            "rho_rx": rho_rx,
            "div_yield": dividend_yield(sol, xs_),
        }
    )
