from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from datetime import date, time
from logging import getLogger
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, Field
from scipy.optimize import minimize

from volfeedback.exceptions import (
    AllPointsInfeasible,
    InfeasiblePoint,
    InsufficientData,
    MaxIterations,
    SolverError,
    UndefinedAtZero,
    ValidationError,
)
from volfeedback.models import (
    MarketState,
    ModelParams,
    OptionQuote,
    Specification,
    validate,
)
from volfeedback.pd_solver import (
    PDGridConfig,
    PDSolution,
    return_vol_correlation,
    solve_pd_ratio,
)
from volfeedback.pricer import MCConfig, OptionSpec, price_calls
from volfeedback.repositories import QuoteRepository
from volfeedback.streams import ordered_map

logger = getLogger(__name__)

Floats = NDArray[np.float64]


class CalibrationSettings(BaseModel, frozen=True):
    specification: Specification = Specification.FULL
    alpha_bar: float = 0.0613
    max_iterations: int = Field(default=500, ge=1)
    xatol: float = Field(default=1e-4, gt=0)
    fatol: float = Field(default=1e-5, gt=0)
    initial_step: float = Field(default=0.1, gt=0)
    restart: bool = True
    restart_scale: float = Field(default=0.25, gt=0, le=1)
    standard_errors: bool = True
    require_convergence: bool = False
    rate_multiplier: float = Field(default=2.0, gt=0)
    alpha_multiplier: float = Field(default=0.5, gt=0)
    average_yield: float = Field(default=0.0, ge=0)

    @property
    def effective_alpha(self) -> float:
        if self.specification is Specification.GAMMA_ZERO_ADJUSTED:
            return self.alpha_bar * self.alpha_multiplier

        return self.alpha_bar

    @property
    def effective_rate_multiplier(self) -> float:
        if self.specification is Specification.GAMMA_ZERO_ADJUSTED:
            return self.rate_multiplier

        return 1.0


def point_from_params(
    params: ModelParams, specification: Specification
) -> Floats:
    values = {**params.as_dict(), "lambda_x": params.lambda_x}

    return np.array([values[name] for name in specification.free_parameters])


def params_from_point(
    point: ArrayLike,
    specification: Specification,
    *,
    r: float,
    alpha: float,
) -> ModelParams:
    values = dict(zip(specification.free_parameters, np.asarray(point)))

    if specification is Specification.FULL:
        lambda_x = float(values["lambda_x"])
        gamma = float(values["gamma"])
    else:
        lambda_x = 0.0
        gamma = 0.0

    beta_q = float(values["beta_q"])

    return ModelParams(
        r=r,
        alpha=alpha,
        gamma=gamma,
        beta=beta_q - lambda_x,
        beta_q=beta_q,
        sigma_x=float(values["sigma_x"]),
        rho_dx=float(values["rho_dx"]),
    )


@dataclass(frozen=True)
class _QuoteGroup:
    """Quotes sharing a date, rate and volatility proxy: one path set."""

    key: tuple[int, int]
    rate: float
    vol_proxy: float
    indices: list[int]


def _group_quotes(quotes: Sequence[OptionQuote]) -> list[_QuoteGroup]:
    date_index = {
        day: i for i, day in enumerate(QuoteRepository(quotes).dates())
    }

    members: dict[tuple[date, float, float], list[int]] = {}

    for i, quote in enumerate(quotes):
        members.setdefault(
            (quote.quote_date, quote.tbill_rate, quote.vol_proxy), []
        ).append(i)

    groups = []
    per_date: dict[date, int] = {}

    for day, rate, vol_proxy in sorted(members):
        sub_index = per_date.get(day, 0)
        per_date[day] = sub_index + 1
        groups.append(
            _QuoteGroup(
                key=(date_index[day], sub_index),
                rate=rate,
                vol_proxy=vol_proxy,
                indices=members[(day, rate, vol_proxy)],
            )
        )

    return groups


def _solve(params: ModelParams, grid: PDGridConfig) -> PDSolution:
    try:
        return solve_pd_ratio(params, grid)
    except (SolverError, ValidationError) as exc:
        raise InfeasiblePoint(f"{type(exc).__name__}: {exc}") from exc


def model_prices(
    quotes: Sequence[OptionQuote],
    params: ModelParams,
    mc: MCConfig,
    grid: PDGridConfig = PDGridConfig(),
    threads: int = 1,
    rate_multiplier: float = 1.0,
) -> Floats:
    """
    Model prices for `quotes`, using `params` with r replaced by each
    quote's own rate. Quotes of one group are priced on one shared set of
    paths started from unit spot; prices scale linearly with the spot.
    """
    groups = _group_quotes(quotes)
    solutions: dict[float, PDSolution] = {}

    for rate in sorted({group.rate for group in groups}):
        solutions[rate] = _solve(
            params.replace(r=rate * rate_multiplier), grid
        )

    def price_group(group: _QuoteGroup) -> Floats:
        sol = solutions[group.rate]
        specs = [
            OptionSpec(
                strike=quotes[i].strike / quotes[i].spot,
                maturity=quotes[i].maturity,
            )
            for i in group.indices
        ]
        state = MarketState.from_price(1.0, group.vol_proxy, sol)
        estimates = price_calls(
            specs, state, sol, sol.params, mc, key=group.key
        )
        spots = np.array([quotes[i].spot for i in group.indices])

        return spots * np.array([estimate.price for estimate in estimates])

    prices = np.empty(len(quotes))

    for group, group_prices in zip(
        groups, ordered_map(price_group, groups, threads)
    ):
        prices[group.indices] = group_prices

    return prices


def rmse(residuals: ArrayLike) -> float:
    residuals_ = np.asarray(residuals, dtype=float)

    return float(np.sqrt(np.mean(residuals_**2)))


def rmse_loss(
    quotes: Sequence[OptionQuote],
    params: ModelParams,
    mc: MCConfig,
    grid: PDGridConfig = PDGridConfig(),
    threads: int = 1,
    rate_multiplier: float = 1.0,
) -> float:
    """Root mean squared difference between mid quotes and model prices."""
    if not quotes:
        raise InsufficientData("No quotes to evaluate the loss on")

    mids = np.array([quote.mid for quote in quotes])

    return rmse(
        mids
        - model_prices(quotes, params, mc, grid, threads, rate_multiplier)
    )


def volatility_risk_premium(
    gamma: float, sigma_x: float, rho_rx: float
) -> float:
    return gamma * sigma_x * rho_rx


def implied_vol_risk_premium(
    params: ModelParams, sol: PDSolution, x: float
) -> float:
    """The volatility risk premium implied by gamma and rho_rx(x)."""
    if x == 0:
        raise UndefinedAtZero("The implied premium is undefined at x = 0")

    if not params.has_feedback:
        return 0.0

    return volatility_risk_premium(
        params.gamma, params.sigma_x, float(return_vol_correlation(sol, x))
    )


@dataclass(frozen=True)
class CalibrationResult:
    specification: Specification
    params: ModelParams
    estimates: dict[str, float]
    in_sample_rmse: float
    iterations: int
    evaluations: int
    converged: bool
    n_in_sample: int
    standard_errors: dict[str, float] | None = None
    out_sample_rmse: float | None = None
    n_out_sample: int = 0
    implied_lambda_x: float | None = None
    lambda_gap: float | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def lambda_x(self) -> float | None:
        return self.estimates.get("lambda_x")


class _Objective:
    """Loss as a function of the free parameters, +inf where infeasible."""

    def __init__(
        self,
        quotes: Sequence[OptionQuote],
        settings: CalibrationSettings,
        mc: MCConfig,
        grid: PDGridConfig,
        threads: int,
    ) -> None:
        self.quotes = quotes
        self.settings = settings
        self.mc = mc
        self.grid = grid
        self.threads = threads
        self.evaluations = 0
        self.best_loss = math.inf
        self.best_point: Floats | None = None

    def params(self, point: ArrayLike) -> ModelParams:
        return params_from_point(
            point,
            self.settings.specification,
            r=self.quotes[0].tbill_rate,
            alpha=self.settings.effective_alpha,
        )

    def residuals(self, point: ArrayLike) -> Floats:
        try:
            params = validate(self.params(point))
        except ValidationError as exc:
            raise InfeasiblePoint(str(exc)) from exc

        mids = np.array([quote.mid for quote in self.quotes])

        return mids - model_prices(
            self.quotes,
            params,
            self.mc,
            self.grid,
            self.threads,
            self.settings.effective_rate_multiplier,
        )

    def __call__(self, point: Floats) -> float:
        self.evaluations += 1

        try:
            loss = rmse(self.residuals(point))
        except InfeasiblePoint as exc:
            logger.debug(f"Infeasible point {point}: {exc}")

            return math.inf

        logger.debug(
            f"Loss {loss:.6f} at {point}",
            extra={"evaluation": self.evaluations},
        )

        if loss < self.best_loss:
            self.best_loss = loss
            self.best_point = np.array(point, dtype=float)

        return loss


def _initial_simplex(point: Floats, step: float) -> Floats:
    simplex = np.tile(point, (point.size + 1, 1))

    for i in range(point.size):
        simplex[i + 1, i] += step * max(abs(point[i]), 0.05)

    return simplex


def gauss_newton_standard_errors(
    objective: _Objective, point: Floats, step: float = 1e-4
) -> dict[str, float] | None:
    """
    Standard errors from s^2 (J'J)^-1, with the residual Jacobian J taken
    by forward differences at `point`.
    """
    names = objective.settings.specification.free_parameters

    try:
        base = objective.residuals(point)
        columns = []

        for i in range(point.size):
            h = step * max(1.0, abs(point[i]))
            shifted = point.copy()
            shifted[i] += h
            columns.append((objective.residuals(shifted) - base) / h)
    except InfeasiblePoint:
        return None

    jacobian = np.column_stack(columns)
    dof = max(base.size - point.size, 1)
    sigma2 = float(base @ base) / dof

    try:
        covariance = sigma2 * np.linalg.inv(jacobian.T @ jacobian)
    except np.linalg.LinAlgError:
        return None

    variances = np.diag(covariance)

    if np.any(variances < 0) or not np.all(np.isfinite(variances)):
        return None

    return dict(zip(names, np.sqrt(variances).tolist()))


def calibrate(
    quotes: Sequence[OptionQuote],
    initial: ModelParams,
    settings: CalibrationSettings = CalibrationSettings(),
    mc: MCConfig = MCConfig(),
    grid: PDGridConfig = PDGridConfig(),
    out_of_sample: Sequence[OptionQuote] = (),
    threads: int = 1,
) -> CalibrationResult:
    """
    Fit the free parameters of `settings.specification` to the mid quotes
    with the Nelder-Mead simplex. Every loss evaluation uses the same random
    numbers, so the surface is deterministic. One restart is made from the
    incumbent with a smaller simplex, and the result is never worse than
    the starting point.
    """
    if not quotes:
        raise AllPointsInfeasible("There are no quotes to calibrate to")

    specification = settings.specification
    objective = _Objective(quotes, settings, mc, grid, threads)
    start = point_from_params(initial, specification)

    objective(start)

    options = {
        "maxiter": settings.max_iterations,
        "xatol": settings.xatol,
        "fatol": settings.fatol,
    }

    result = minimize(
        objective,
        start,
        method="Nelder-Mead",
        options={
            **options,
            "initial_simplex": _initial_simplex(start, settings.initial_step),
        },
    )
    iterations = int(result.nit)
    converged = bool(result.success)

    if settings.restart and objective.best_point is not None:
        logger.info(
            f"Restarting simplex from loss {objective.best_loss:.6f}",
            extra={"evaluations": objective.evaluations},
        )

        restart = minimize(
            objective,
            objective.best_point,
            method="Nelder-Mead",
            options={
                **options,
                "initial_simplex": _initial_simplex(
                    objective.best_point,
                    settings.initial_step * settings.restart_scale,
                ),
            },
        )
        iterations += int(restart.nit)
        converged = bool(restart.success)

    if objective.best_point is None:
        raise AllPointsInfeasible(
            f"All {objective.evaluations} evaluated points were infeasible"
        )

    if settings.require_convergence and not converged:
        raise MaxIterations(
            f"Simplex did not converge in {settings.max_iterations} iterations"
        )

    best = objective.best_point
    params = validate(objective.params(best))

    standard_errors = (
        gauss_newton_standard_errors(objective, best)
        if settings.standard_errors
        else None
    )

    estimates = dict(
        zip(specification.free_parameters, best.tolist(), strict=True)
    )

    out_sample_rmse = None

    if out_of_sample:
        try:
            out_sample_rmse = rmse_loss(
                out_of_sample,
                params,
                mc,
                grid,
                threads,
                settings.effective_rate_multiplier,
            )
        except InfeasiblePoint as exc:
            logger.warning(f"Out-of-sample loss is undefined: {exc}")

    implied_lambda_x, lambda_gap = _premium_diagnostic(
        quotes, params, grid, settings
    )

    calibration = CalibrationResult(
        specification=specification,
        params=params,
        estimates=estimates,
        in_sample_rmse=objective.best_loss,
        iterations=iterations,
        evaluations=objective.evaluations,
        converged=converged,
        n_in_sample=len(quotes),
        standard_errors=standard_errors,
        out_sample_rmse=out_sample_rmse,
        n_out_sample=len(out_of_sample),
        implied_lambda_x=implied_lambda_x,
        lambda_gap=lambda_gap,
        notes=(
            ["standard errors are Gauss-Newton approximations"]
            if standard_errors is not None
            else []
        ),
    )

    logger.info(
        f"Calibrated {specification} specification: "
        f"in-sample RMSE {calibration.in_sample_rmse:.4f}",
        extra={"estimates": estimates, "evaluations": objective.evaluations},
    )

    return calibration


def _premium_diagnostic(
    quotes: Sequence[OptionQuote],
    params: ModelParams,
    grid: PDGridConfig,
    settings: CalibrationSettings,
) -> tuple[float | None, float | None]:
    if settings.specification is not Specification.FULL:
        return None, None

    rate = float(np.mean([quote.tbill_rate for quote in quotes]))
    x = float(np.mean([quote.vol_proxy for quote in quotes]))
    sol = _solve(params.replace(r=rate), grid)
    implied = implied_vol_risk_premium(sol.params, sol, x)

    return implied, params.lambda_x - implied


SYNTHETIC_MONEYNESS = (0.94, 0.97, 1.0, 1.03, 1.06)
SYNTHETIC_MATURITIES = (10, 20, 40, 60)


def synthetic_panel(
    truth: ModelParams,
    mc: MCConfig,
    grid: PDGridConfig = PDGridConfig(),
    *,
    start: date = date(1995, 1, 3),
    n_days: int = 30,
    moneyness: Sequence[float] = SYNTHETIC_MONEYNESS,
    maturities: Sequence[int] = SYNTHETIC_MATURITIES,
    spot: float = 460.0,
    vol_proxy: float = 0.13,
    vol_dispersion: float = 0.4,
    half_spread: float = 0.05,
    seed: int = 0,
    threads: int = 1,
) -> list[OptionQuote]:
    """
    A quote panel whose mids are the model prices under `truth`, computed
    with the same random numbers a calibration with `mc` uses. Spot wanders
    from day to day and each day's volatility proxy is drawn lognormally
    around `vol_proxy`, so the panel sees the ratio f over a range of x
    rather than at one level. `truth.r` is the rate of every quote.
    """
    rng = np.random.default_rng(seed)
    days = np.busday_offset(np.datetime64(start, "D"), np.arange(n_days))

    skeleton = []
    level = spot

    for day in days:
        quote_date = day.astype(date)
        x = float(
            np.clip(
                vol_proxy * math.exp(vol_dispersion * rng.standard_normal()),
                0.05,
                0.5,
            )
        )

        for ratio in moneyness:
            for n in maturities:
                skeleton.append(
                    OptionQuote(
                        quote_date=quote_date,
                        timestamp=time(14, 0),
                        spot=level,
                        strike=round(level / ratio),
                        expiry_date=np.busday_offset(day, n).astype(date),
                        bid=0.0,
                        ask=0.0,
                        tbill_rate=truth.r,
                        vol_proxy=x,
                    )
                )

        level *= math.exp(0.01 * rng.standard_normal())

    prices = model_prices(skeleton, truth, mc, grid, threads)
    panel = []

    for quote, price in zip(skeleton, prices):
        spread = min(half_spread, price)
        panel.append(replace(quote, bid=price - spread, ask=price + spread))

    return panel
