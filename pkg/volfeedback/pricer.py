from __future__ import annotations

import math
from dataclasses import dataclass
from logging import getLogger
from typing import Callable, Self, Sequence

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, Field, model_validator
from scipy.stats import norm

from volfeedback.exceptions import (
    GammaZeroRequiresRGreaterAlpha,
    InvalidConfiguration,
    ValidationError,
)
from volfeedback.models import MarketState, ModelParams
from volfeedback.pd_solver import PDSolution, pd_ratio_constant
from volfeedback.simulator import (
    CorrelatedShocks,
    Measure,
    log_price_increment,
    ou_step_exact,
    simulate_block,
)
from volfeedback.streams import (
    DEFAULT_BLOCK_SIZE,
    block_generators,
    block_sizes,
    ordered_map,
)

logger = getLogger(__name__)

Floats = NDArray[np.float64]

PRICING_DT = 1 / 252


@dataclass(frozen=True)
class OptionSpec:
    strike: float
    maturity: float

    def __post_init__(self) -> None:
        if self.strike < 0:
            raise InvalidConfiguration(
                f"Strike must not be negative, got {self.strike}"
            )

        if not self.maturity > 0:
            raise InvalidConfiguration(
                f"Maturity must be positive, got {self.maturity}"
            )


class MCConfig(BaseModel, frozen=True):
    n_paths: int = Field(default=20_000, ge=2)
    dt: float = Field(default=PRICING_DT, gt=0)
    seed: int = Field(default=0, ge=0)
    antithetic: bool = True
    block_size: int = Field(default=DEFAULT_BLOCK_SIZE, ge=2)

    @model_validator(mode="after")
    def check_pairs(self) -> Self:
        if self.antithetic and (self.n_paths % 2 or self.block_size % 2):
            raise ValueError(
                "n_paths and block_size must be even with antithetic variates"
            )

        return self

    def n_steps(self, maturity: float) -> int:
        return max(1, round(maturity / self.dt))


@dataclass(frozen=True)
class PriceEstimate:
    price: float
    std_error: float
    n_effective: int

    def __post_init__(self) -> None:
        if self.std_error < 0:
            raise ValidationError("std_error must not be negative")


def _estimate(samples: Floats) -> PriceEstimate:
    n = samples.size
    std_error = float(np.std(samples, ddof=1) / math.sqrt(n)) if n > 1 else 0.0

    return PriceEstimate(
        price=float(np.mean(samples)), std_error=std_error, n_effective=n
    )


def _pair_averages(values: Floats, antithetic: bool) -> Floats:
    """Antithetic pairs are the independent sampling units."""
    if not antithetic:
        return values

    half = values.shape[-1] // 2

    return 0.5 * (values[..., :half] + values[..., half:])


def rn_step(
    state: MarketState,
    sol: PDSolution,
    shocks: CorrelatedShocks,
    dt: float,
    params: ModelParams,
) -> MarketState:
    """
    One risk-neutral step. The price-dividend ratio is the physical one;
    only the drift of P and the speed of x change.
    """
    increment = float(
        log_price_increment(
            params,
            sol,
            state.x,
            shocks.eps_d,
            shocks.eps_x,
            dt,
            Measure.RISK_NEUTRAL,
        )
    )
    x = float(
        ou_step_exact(state.x, dt, shocks.eps_x, params, speed=params.beta_q)
    )
    P = state.P * math.exp(increment)

    return MarketState(t=state.t + dt, P=P, D=P / float(sol.f(x)), x=x)


BlockPayoffs = Callable[[np.random.Generator, int], Floats]


def _run_blocks(
    payoffs: BlockPayoffs,
    mc: MCConfig,
    key: Sequence[int],
    threads: int,
) -> Floats:
    """
    Evaluate `payoffs` block by block on the block substreams and stack the
    per-unit results of every block along the last axis.
    """
    sizes = block_sizes(mc.n_paths, mc.block_size)
    generators = block_generators(mc.seed, len(sizes), *key)

    blocks = ordered_map(
        lambda index: payoffs(generators[index], sizes[index]),
        range(len(sizes)),
        threads,
    )

    return np.concatenate(blocks, axis=-1)


def price_calls(
    specs: Sequence[OptionSpec],
    state: MarketState,
    sol: PDSolution,
    params: ModelParams,
    mc: MCConfig,
    threads: int = 1,
    key: Sequence[int] = (),
) -> list[PriceEstimate]:
    """
    Price several calls on one set of risk-neutral paths simulated to the
    longest maturity, each contract read off at its own step.
    """
    if not specs:
        return []

    steps = np.array([mc.n_steps(spec.maturity) for spec in specs])
    strikes = np.array([spec.strike for spec in specs])[:, None]
    discounts = np.exp(
        -params.r * np.array([spec.maturity for spec in specs])
    )[:, None]

    def payoffs(rng: np.random.Generator, n_paths: int) -> Floats:
        shocks = CorrelatedShocks.draw(
            rng, params.rho_dx, n_paths, int(steps.max()), mc.antithetic
        )
        block = simulate_block(
            params,
            sol,
            shocks,
            x0=state.x,
            P0=state.P,
            dt=mc.dt,
            measure=Measure.RISK_NEUTRAL,
        )
        terminal = np.exp(block.log_P[:, steps].T)
        values = discounts * np.maximum(terminal - strikes, 0.0)

        return _pair_averages(values, mc.antithetic)

    samples = _run_blocks(payoffs, mc, key, threads)

    return [_estimate(row) for row in samples]


def price_call(
    spec: OptionSpec,
    state: MarketState,
    sol: PDSolution,
    params: ModelParams,
    mc: MCConfig,
    threads: int = 1,
) -> PriceEstimate:
    return price_calls([spec], state, sol, params, mc, threads)[0]


def price_zero_strike(
    state: MarketState,
    sol: PDSolution,
    params: ModelParams,
    mc: MCConfig,
    maturity: float,
    threads: int = 1,
) -> PriceEstimate:
    return price_call(
        OptionSpec(strike=0.0, maturity=maturity),
        state,
        sol,
        params,
        mc,
        threads,
    )


def pricing_identity(
    state: MarketState,
    sol: PDSolution,
    params: ModelParams,
    mc: MCConfig,
    maturity: float,
    threads: int = 1,
) -> PriceEstimate:
    """
    Risk-neutral estimate of the discounted terminal price plus the
    discounted dividends paid up to maturity, which should equal P_0.
    """
    n_steps = mc.n_steps(maturity)
    dt = maturity / n_steps
    discounts = np.exp(-params.r * np.arange(n_steps + 1) * dt)

    def payoffs(rng: np.random.Generator, n_paths: int) -> Floats:
        shocks = CorrelatedShocks.draw(
            rng, params.rho_dx, n_paths, n_steps, mc.antithetic
        )
        block = simulate_block(
            params,
            sol,
            shocks,
            x0=state.x,
            P0=state.P,
            dt=dt,
            measure=Measure.RISK_NEUTRAL,
        )
        P = np.exp(block.log_P)
        D = P / np.asarray(sol.f(block.x))
        dividends = (D[:, :-1] * discounts[:-1]).sum(axis=1) * dt
        values = discounts[-1] * P[:, -1] + dividends

        return _pair_averages(values, mc.antithetic)

    return _estimate(_run_blocks(payoffs, mc, (), threads))


def lognormal_call(
    P0: float,
    K: float,
    T: float,
    r: float,
    delta: float,
    total_variance: float,
) -> float:
    """Call on a stock with continuous yield `delta` and lognormal P_T."""
    forward = P0 * math.exp((r - delta) * T)
    discount = math.exp(-r * T)

    if K == 0:
        return discount * forward

    if total_variance <= 0:
        return discount * max(forward - K, 0.0)

    sd = math.sqrt(total_variance)
    d1 = (math.log(forward / K) + 0.5 * total_variance) / sd
    d2 = d1 - sd

    return discount * (forward * norm.cdf(d1) - K * norm.cdf(d2))


def deterministic_vol_variance(x0: float, beta_q: float, T: float) -> float:
    """Integrated variance of x_s = x0 exp(-beta_q s) over [0, T]."""
    return x0**2 * (1 - math.exp(-2 * beta_q * T)) / (2 * beta_q)


def heston_twin_price(
    spec: OptionSpec,
    state: MarketState,
    params: ModelParams,
    mc: MCConfig,
    threads: int = 1,
) -> PriceEstimate:
    """
    Price from a step-by-step simulation of the reduced pair
    dP = alpha P dt + x P dB and dx = -beta_q x dt + sigma_x dB^x, drawing the
    same shocks as `price_call` for a given seed.
    """
    n_steps = mc.n_steps(spec.maturity)
    discount = math.exp(-params.r * spec.maturity)

    def payoffs(rng: np.random.Generator, n_paths: int) -> Floats:
        shocks = CorrelatedShocks.draw(
            rng, params.rho_dx, n_paths, n_steps, mc.antithetic
        )
        x = np.full(n_paths, state.x)
        log_P = np.full(n_paths, math.log(state.P))

        for k in range(n_steps):
            log_P += (params.alpha - 0.5 * x**2) * mc.dt + x * math.sqrt(
                mc.dt
            ) * shocks.eps_d[:, k]
            x = ou_step_exact(
                x, mc.dt, shocks.eps_x[:, k], params, speed=params.beta_q
            )

        values = discount * np.maximum(np.exp(log_P) - spec.strike, 0.0)

        return _pair_averages(values, mc.antithetic)

    return _estimate(_run_blocks(payoffs, mc, (), threads))


@dataclass(frozen=True)
class HestonReductionReport:
    full: PriceEstimate
    twin: PriceEstimate

    @property
    def difference(self) -> float:
        return self.full.price - self.twin.price

    @property
    def combined_std_error(self) -> float:
        return math.hypot(self.full.std_error, self.twin.std_error)

    @property
    def agrees(self) -> bool:
        return abs(self.difference) <= 3 * self.combined_std_error + 1e-12


def heston_reduction_check(
    params: ModelParams,
    spec: OptionSpec,
    mc: MCConfig,
    P0: float = 100.0,
    x0: float = 0.2,
    threads: int = 1,
) -> HestonReductionReport:
    if params.has_feedback:
        raise InvalidConfiguration(
            "The Heston reduction only holds without volatility feedback"
        )

    if params.r <= params.alpha:
        raise GammaZeroRequiresRGreaterAlpha(
            f"r={params.r} must exceed alpha={params.alpha}"
        )

    sol = pd_ratio_constant(params)
    state = MarketState.from_price(P0, x0, sol)

    report = HestonReductionReport(
        full=price_call(spec, state, sol, params, mc, threads),
        twin=heston_twin_price(spec, state, params, mc, threads),
    )

    logger.info(
        f"Heston reduction: full={report.full.price:.6f} "
        f"twin={report.twin.price:.6f} diff={report.difference:.3g}",
        extra={"agrees": report.agrees},
    )

    return report


@dataclass(frozen=True)
class BoundsCheck:
    lower: float
    upper: float
    price: float

    @property
    def holds(self) -> bool:
        return self.lower <= self.price <= self.upper

    def __bool__(self) -> bool:
        return self.holds


def check_bounds(
    price: float,
    P0: float,
    pv_div: float,
    K: float,
    T: float,
    r: float,
    tol: float = 0.0,
) -> BoundsCheck:
    """(P_0 - PVDIV - K e^{-rT})^+ <= price <= P_0, with slack `tol`."""
    lower = max(P0 - pv_div - K * math.exp(-r * T), 0.0)

    return BoundsCheck(lower=lower - tol, upper=P0 + tol, price=price)
