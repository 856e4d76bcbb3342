from __future__ import annotations

import math
from dataclasses import dataclass, replace
from datetime import date, time
from enum import StrEnum
from typing import Any, Protocol, Self

import numpy as np

from volfeedback.exceptions import (
    CorrelationOutOfRange,
    GammaZeroRequiresRGreaterAlpha,
    NonPositiveSpeed,
    NonPositiveVolOfVol,
    ValidationError,
)

MODEL_PARAM_KEYS = (
    "r",
    "alpha",
    "gamma",
    "beta",
    "beta_q",
    "sigma_x",
    "rho_dx",
)


@dataclass(frozen=True)
class ModelParams:
    """
    Structural parameters of the volatility feedback model. All rates are per
    annum and continuously compounded.

    `beta` is the physical mean-reversion speed of return volatility and
    `beta_q` its risk-neutral counterpart; the volatility risk premium is
    always derived from the two and never stored.
    """

    r: float
    alpha: float
    gamma: float
    beta: float
    beta_q: float
    sigma_x: float
    rho_dx: float

    @property
    def lambda_x(self) -> float:
        return self.beta_q - self.beta

    @property
    def has_feedback(self) -> bool:
        return self.gamma > 0

    def replace(self, **changes: Any) -> Self:
        return replace(self, **changes)

    def as_dict(self) -> dict[str, float]:
        return {key: getattr(self, key) for key in MODEL_PARAM_KEYS}


@dataclass(frozen=True)
class SquaredVolParams:
    kappa: float
    theta: float
    sigma_h: float
    lambda_h: float


def _is_finite(*values: float) -> bool:
    return all(math.isfinite(value) for value in values)


def validate(params: ModelParams) -> ModelParams:
    if not _is_finite(*params.as_dict().values()):
        raise ValidationError(f"All parameters must be finite: {params}")

    if params.beta <= 0:
        raise NonPositiveSpeed(f"beta must be positive, got {params.beta}")

    if params.beta_q <= 0:
        raise NonPositiveSpeed(
            f"beta_q must be positive, got {params.beta_q}"
        )

    # sigma_x = 0 is the deterministic-volatility limit used by the oracles;
    # solve_pd_ratio still rejects it when gamma > 0
    if params.sigma_x < 0:
        raise NonPositiveVolOfVol(
            f"sigma_x must not be negative, got {params.sigma_x}"
        )

    if abs(params.rho_dx) > 1:
        raise CorrelationOutOfRange(
            f"rho_dx must lie in [-1, 1], got {params.rho_dx}"
        )

    if params.gamma < 0:
        raise ValidationError(f"gamma must be non-negative, got {params.gamma}")

    if params.gamma == 0 and params.r <= params.alpha:
        raise GammaZeroRequiresRGreaterAlpha(
            f"With gamma = 0 the price is only defined for r > alpha "
            f"(r={params.r}, alpha={params.alpha})"
        )

    return params


def to_squared_form(params: ModelParams) -> SquaredVolParams:
    return SquaredVolParams(
        kappa=2 * params.beta,
        theta=params.sigma_x**2 / (2 * params.beta),
        sigma_h=2 * params.sigma_x,
        lambda_h=2 * params.lambda_x,
    )


def from_squared_form(
    squared: SquaredVolParams,
    *,
    r: float,
    alpha: float,
    gamma: float,
    rho_dx: float,
) -> ModelParams:
    beta = squared.kappa / 2

    return ModelParams(
        r=r,
        alpha=alpha,
        gamma=gamma,
        beta=beta,
        beta_q=beta + squared.lambda_h / 2,
        sigma_x=squared.sigma_h / 2,
        rho_dx=rho_dx,
    )


class PriceDividendRatio(Protocol):
    def f(self, x: Any) -> Any: ...


@dataclass(frozen=True)
class MarketState:
    t: float
    P: float
    D: float
    x: float

    def __post_init__(self) -> None:
        if not (self.P > 0 and self.D > 0):
            raise ValidationError(
                f"Price and dividend must be positive (P={self.P}, D={self.D})"
            )

    @classmethod
    def from_price(
        cls, P: float, x: float, sol: PriceDividendRatio, t: float = 0.0
    ) -> MarketState:
        return cls(t=t, P=P, D=P / float(sol.f(x)), x=x)

    @classmethod
    def from_dividend(
        cls, D: float, x: float, sol: PriceDividendRatio, t: float = 0.0
    ) -> MarketState:
        return cls(t=t, P=D * float(sol.f(x)), D=D, x=x)


TRADING_DAYS_PER_YEAR = 252


@dataclass(frozen=True)
class OptionQuote:
    """
    One call quote. `vol_proxy` is the prior trading day's closing level of
    the volatility index, as a decimal.
    """

    quote_date: date
    timestamp: time
    spot: float
    strike: float
    expiry_date: date
    bid: float
    ask: float
    tbill_rate: float
    vol_proxy: float

    def __post_init__(self) -> None:
        if self.bid > self.ask:
            raise ValidationError(f"bid {self.bid} exceeds ask {self.ask}")

        if not self.vol_proxy > 0:
            raise ValidationError(
                f"vol_proxy must be positive, got {self.vol_proxy}"
            )

    @property
    def mid(self) -> float:
        return (self.bid + self.ask) / 2

    @property
    def trading_days(self) -> int:
        return int(np.busday_count(self.quote_date, self.expiry_date))

    @property
    def maturity(self) -> float:
        return self.trading_days / TRADING_DAYS_PER_YEAR

    @property
    def moneyness(self) -> float:
        return self.spot / self.strike


class Specification(StrEnum):
    """Which structural parameters a calibration leaves free."""

    FULL = "full"
    GAMMA_ZERO = "gamma_zero"
    GAMMA_ZERO_ADJUSTED = "gamma_zero_adjusted"

    @property
    def free_parameters(self) -> tuple[str, ...]:
        if self is Specification.FULL:
            return ("beta_q", "sigma_x", "rho_dx", "lambda_x", "gamma")

        return ("beta_q", "sigma_x", "rho_dx")
