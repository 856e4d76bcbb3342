from __future__ import annotations

import math
from dataclasses import dataclass
from enum import StrEnum
from logging import getLogger
from typing import Any, Self

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, Field, model_validator
from scipy.signal import lfilter

from volfeedback.exceptions import InsufficientData, InvalidConfiguration
from volfeedback.models import MarketState, ModelParams
from volfeedback.pd_solver import (
    PDSolution,
    dividend_vol,
    return_vol_correlation,
    risk_neutral_dividend_drift,
)
from volfeedback.streams import (
    DEFAULT_BLOCK_SIZE,
    block_generators,
    block_sizes,
    ordered_map,
)

logger = getLogger(__name__)

Floats = NDArray[np.float64]

DIAGNOSTIC_DT = 1 / (24 * 252)


class Measure(StrEnum):
    PHYSICAL = "physical"
    RISK_NEUTRAL = "risk_neutral"


class SimConfig(BaseModel, frozen=True):
    dt: float = Field(default=DIAGNOSTIC_DT, gt=0)
    horizon: float = Field(default=1.0, gt=0)
    n_paths: int = Field(default=1, ge=1)
    seed: int = Field(default=0, ge=0)
    x0: float = 0.2
    P0: float = Field(default=100.0, gt=0)
    block_size: int = Field(default=DEFAULT_BLOCK_SIZE, ge=1)

    @model_validator(mode="after")
    def check_horizon(self) -> Self:
        if self.horizon < self.dt:
            raise ValueError("horizon must be at least one time step")

        return self

    @property
    def n_steps(self) -> int:
        return max(1, round(self.horizon / self.dt))


@dataclass(frozen=True, eq=False)
class CorrelatedShocks:
    """
    Standard normal dividend and volatility shocks with correlation rho_dx,
    one row per path and one column per time step.
    """

    eps_d: Floats
    eps_x: Floats

    @classmethod
    def from_independent(
        cls, z_d: ArrayLike, z_x: ArrayLike, rho: float
    ) -> CorrelatedShocks:
        z_d_ = np.asarray(z_d, dtype=float)
        z_x_ = np.asarray(z_x, dtype=float)

        return cls(
            eps_d=rho * z_x_ + math.sqrt(1 - rho**2) * z_d_,
            eps_x=z_x_,
        )

    @classmethod
    def draw(
        cls,
        rng: np.random.Generator,
        rho: float,
        n_paths: int,
        n_steps: int,
        antithetic: bool = False,
    ) -> CorrelatedShocks:
        """
        With `antithetic` the second half of the paths reuses the first
        half's draws with both shocks negated, path i pairing with path
        i + n_paths/2.
        """
        if not antithetic:
            z = rng.standard_normal((2, n_paths, n_steps))

            return cls.from_independent(z[0], z[1], rho)

        if n_paths % 2:
            raise InvalidConfiguration(
                f"Antithetic sampling needs an even number of paths, "
                f"got {n_paths}"
            )

        z = rng.standard_normal((2, n_paths // 2, n_steps))
        z = np.concatenate((z, -z), axis=1)

        return cls.from_independent(z[0], z[1], rho)

    def negated(self) -> CorrelatedShocks:
        return CorrelatedShocks(eps_d=-self.eps_d, eps_x=-self.eps_x)


def ou_coefficients(
    speed: float, sigma: float, dt: float
) -> tuple[float, float]:
    decay = math.exp(-speed * dt)
    scale = sigma * math.sqrt((1 - math.exp(-2 * speed * dt)) / (2 * speed))

    return decay, scale


def ou_step_exact(
    x: ArrayLike,
    dt: float,
    eps_x: ArrayLike,
    params: ModelParams,
    speed: float | None = None,
) -> Any:
    """
    Exact transition of dx = -speed x dt + sigma_x dB. `speed` defaults to
    the physical beta; risk-neutral steps pass beta_q.
    """
    decay, scale = ou_coefficients(
        params.beta if speed is None else speed, params.sigma_x, dt
    )

    return np.asarray(x) * decay + scale * np.asarray(eps_x)


def log_price_increment(
    params: ModelParams,
    sol: PDSolution,
    x: ArrayLike,
    eps_d: ArrayLike,
    eps_x: ArrayLike,
    dt: float,
    measure: Measure = Measure.PHYSICAL,
) -> Any:
    x_ = np.asarray(x, dtype=float)
    f, log_slope, y = sol.loadings(x_)

    rate = params.r

    if measure is Measure.PHYSICAL:
        rate = rate + params.gamma * x_**2

    drift = rate - 1.0 / f - 0.5 * x_**2
    shock = y * np.asarray(eps_d) + log_slope * np.asarray(eps_x)

    return drift * dt + math.sqrt(dt) * shock


def price_step(
    state: MarketState,
    sol: PDSolution,
    shocks: CorrelatedShocks,
    dt: float,
    params: ModelParams,
) -> MarketState:
    increment = float(
        log_price_increment(
            params, sol, state.x, shocks.eps_d, shocks.eps_x, dt
        )
    )
    x = float(ou_step_exact(state.x, dt, shocks.eps_x, params))
    P = state.P * math.exp(increment)

    return MarketState(t=state.t + dt, P=P, D=P / float(sol.f(x)), x=x)


def dividend_step(
    D: float,
    x: float,
    sol: PDSolution,
    eps_d: float,
    dt: float,
    params: ModelParams,
) -> float:
    y = float(dividend_vol(sol, x))

    return D * math.exp(
        (params.alpha - 0.5 * y**2) * dt + y * math.sqrt(dt) * eps_d
    )


@dataclass(frozen=True, eq=False)
class PathBlock:
    x: Floats
    log_P: Floats
    log_D: Floats | None = None


def simulate_block(
    params: ModelParams,
    sol: PDSolution,
    shocks: CorrelatedShocks,
    *,
    x0: float,
    P0: float,
    dt: float,
    measure: Measure = Measure.PHYSICAL,
    direct_dividends: bool = False,
) -> PathBlock:
    """
    Simulate every path of a block at once: x from the exact AR(1)
    recursion, then log P by cumulating the log-Euler increments. With
    `direct_dividends` log D is accumulated from its own dynamics with the
    same dividend shocks, growing at the risk-neutral rate under that
    measure.
    """
    n_paths, n_steps = shocks.eps_x.shape
    speed = params.beta if measure is Measure.PHYSICAL else params.beta_q
    decay, scale = ou_coefficients(speed, params.sigma_x, dt)

    x_tail, _ = lfilter(
        [1.0],
        [1.0, -decay],
        scale * shocks.eps_x,
        axis=1,
        zi=np.full((n_paths, 1), decay * x0),
    )
    x = np.hstack((np.full((n_paths, 1), x0), x_tail))

    increments = log_price_increment(
        params, sol, x[:, :-1], shocks.eps_d, shocks.eps_x, dt, measure
    )
    start = np.zeros((n_paths, 1))
    log_P = math.log(P0) + np.hstack((start, np.cumsum(increments, axis=1)))

    if not direct_dividends:
        return PathBlock(x=x, log_P=log_P)

    y = sol.loadings(x[:, :-1])[2]
    growth = (
        params.alpha
        if measure is Measure.PHYSICAL
        else risk_neutral_dividend_drift(sol, x[:, :-1])
    )
    dividend_increments = (growth - 0.5 * y**2) * dt + y * math.sqrt(
        dt
    ) * shocks.eps_d
    log_D0 = math.log(P0 / float(sol.f(x0)))
    log_D = log_D0 + np.hstack(
        (start, np.cumsum(dividend_increments, axis=1))
    )

    return PathBlock(x=x, log_P=log_P, log_D=log_D)


@dataclass(frozen=True, eq=False)
class PathSet:
    times: Floats
    x: Floats
    P: Floats
    D: Floats
    solution: PDSolution
    implied_dividends: Floats | None = None

    @property
    def n_paths(self) -> int:
        return int(self.x.shape[0])

    @property
    def n_steps(self) -> int:
        return int(self.x.shape[1]) - 1

    def to_frame(self) -> pd.DataFrame:
        x = self.x.ravel()
        f, _, y = self.solution.loadings(x)

        rho_rx = np.full_like(x, np.nan)
        nonzero = x != 0
        rho_rx[nonzero] = return_vol_correlation(self.solution, x[nonzero])

        return pd.DataFrame(
            {
                "path": np.repeat(np.arange(self.n_paths), self.n_steps + 1),
                "t": np.tile(self.times, self.n_paths),
                "x": x,
                "x2": x**2,
                "P": self.P.ravel(),
                "D": self.D.ravel(),
                "f": f,
                "y": y,
                "rho_rx": rho_rx,
            }
        )


def simulate_paths(
    params: ModelParams,
    sol: PDSolution,
    cfg: SimConfig,
    direct_dividends: bool = False,
    threads: int = 1,
) -> PathSet:
    sizes = block_sizes(cfg.n_paths, cfg.block_size)
    generators = block_generators(cfg.seed, len(sizes))
    n_steps = cfg.n_steps

    def run(index: int) -> PathBlock:
        shocks = CorrelatedShocks.draw(
            generators[index], params.rho_dx, sizes[index], n_steps
        )

        return simulate_block(
            params,
            sol,
            shocks,
            x0=cfg.x0,
            P0=cfg.P0,
            dt=cfg.dt,
            direct_dividends=direct_dividends,
        )

    blocks = ordered_map(run, range(len(sizes)), threads)

    x = np.concatenate([block.x for block in blocks])
    P = np.exp(np.concatenate([block.log_P for block in blocks]))
    implied = P / np.asarray(sol.f(x))

    logger.info(
        f"Simulated {cfg.n_paths} paths of {n_steps} steps",
        extra={"seed": cfg.seed, "blocks": len(sizes), "threads": threads},
    )

    if direct_dividends:
        D = np.exp(
            np.concatenate(
                [block.log_D for block in blocks]  # type: ignore[misc]
            )
        )

        return PathSet(
            times=np.arange(n_steps + 1) * cfg.dt,
            x=x,
            P=P,
            D=D,
            solution=sol,
            implied_dividends=implied,
        )

    return PathSet(
        times=np.arange(n_steps + 1) * cfg.dt,
        x=x,
        P=P,
        D=implied,
        solution=sol,
    )


@dataclass(frozen=True)
class PathStatistics:
    n_paths: int
    n_steps: int
    corr_dx2_dlnp: float
    corr_dx2_dlnd: float
    feedback_gap: float
    realized_vol_ratio: float
    mean_vol_ratio: float
    mean_rho_rx: float
    squared_return_autocorr: float
    vol_ratio: Floats

    def as_dict(self) -> dict[str, float | int]:
        return {
            key: value
            for key, value in self.__dict__.items()
            if key != "vol_ratio"
        }


def _correlation(a: Floats, b: Floats) -> float:
    return float(np.corrcoef(a, b)[0, 1])


def path_statistics(paths: PathSet) -> PathStatistics:
    """
    Pooled sample statistics of the increments of x^2, ln P and ln D over
    all paths, next to the theoretical volatility ratio x/y(x) and
    return/volatility correlation along the simulated x.
    """
    if paths.n_steps < 2:
        raise InsufficientData(
            f"At least two steps are needed, got {paths.n_steps}"
        )

    d_x2 = np.diff(paths.x**2, axis=1)
    d_log_p = np.diff(np.log(paths.P), axis=1)
    d_log_d = np.diff(np.log(paths.D), axis=1)

    for name, series in (("x^2", d_x2), ("ln P", d_log_p), ("ln D", d_log_d)):
        if np.std(series) == 0:
            raise InsufficientData(f"Increments of {name} are constant")

    corr_p = _correlation(d_x2.ravel(), d_log_p.ravel())
    corr_d = _correlation(d_x2.ravel(), d_log_d.ravel())

    squared = d_log_p**2
    autocorr = (
        _correlation(squared[:, :-1].ravel(), squared[:, 1:].ravel())
        if paths.n_steps > 2
        else math.nan
    )

    x = paths.x[:, :-1]
    y = paths.solution.loadings(x)[2]
    nonzero = y != 0

    vol_ratio = np.full_like(x, np.nan)
    vol_ratio[nonzero] = x[nonzero] / y[nonzero]

    if not np.any(nonzero):
        raise InsufficientData("Volatility is zero along every path")

    rho_rx = return_vol_correlation(paths.solution, x[x != 0])

    return PathStatistics(
        n_paths=paths.n_paths,
        n_steps=paths.n_steps,
        corr_dx2_dlnp=corr_p,
        corr_dx2_dlnd=corr_d,
        feedback_gap=corr_p - corr_d,
        realized_vol_ratio=float(np.std(d_log_p) / np.std(d_log_d)),
        mean_vol_ratio=float(np.nanmean(vol_ratio)),
        mean_rho_rx=float(np.mean(rho_rx)),
        squared_return_autocorr=autocorr,
        vol_ratio=vol_ratio[0],
    )
