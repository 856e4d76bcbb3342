from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import time
from enum import StrEnum
from logging import getLogger
from os import PathLike
from typing import Iterable, Protocol

import numpy as np
import pandas as pd
from marshmallow import ValidationError as SchemaValidationError

from volfeedback.exceptions import MissingColumn, ParseError
from volfeedback.models import TRADING_DAYS_PER_YEAR, OptionQuote
from volfeedback.pricer import check_bounds
from volfeedback.schemas import DividendSchema, OptionQuoteSchema

logger = getLogger(__name__)

QUOTE_COLUMNS = (
    "quote_date",
    "timestamp",
    "spot",
    "strike",
    "expiry_date",
    "bid",
    "ask",
    "tbill_rate",
    "vol_proxy",
)

CUTOFF_TIME = time(15, 0)
MIN_MATURITY_DAYS = 6
MIN_PRICE = 0.375


def _read_csv(path: str | PathLike[str]) -> pd.DataFrame:
    try:
        return pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError as exc:
        raise ParseError("File is empty", line=1) from exc
    except pd.errors.ParserError as exc:
        raise ParseError(str(exc)) from exc


def _load_rows(
    frame: pd.DataFrame,
    columns: Iterable[str],
    schema: OptionQuoteSchema | DividendSchema,
) -> list:  # type: ignore[type-arg]
    for column in columns:
        if column not in frame.columns:
            raise MissingColumn(column)

    rows = []

    # line 1 is the header
    for line, record in enumerate(frame.to_dict(orient="records"), start=2):
        try:
            rows.append(schema.load(record))
        except SchemaValidationError as exc:
            raise ParseError(str(exc.messages), line=line) from exc

    return rows


def load_quotes(path: str | PathLike[str]) -> list[OptionQuote]:
    quotes: list[OptionQuote] = _load_rows(
        _read_csv(path), QUOTE_COLUMNS, OptionQuoteSchema()
    )

    logger.info(f"Loaded {len(quotes)} quotes", extra={"path": str(path)})

    return quotes


def load_dividends(path: str | PathLike[str]) -> pd.Series:
    """Realized dividend payments indexed by payment date."""
    rows = _load_rows(_read_csv(path), ("date", "amount"), DividendSchema())

    return pd.Series(
        [row["amount"] for row in rows],
        index=pd.DatetimeIndex([row["date"] for row in rows]),
        dtype=float,
    ).sort_index()


class DividendSource(StrEnum):
    REALIZED = "realized"
    AVERAGE_YIELD = "average_yield"


class PresentValueOfDividends(Protocol):
    source: DividendSource

    def __call__(self, quote: OptionQuote) -> float: ...


@dataclass(frozen=True)
class AverageYield:
    """PVDIV = spot (1 - exp(-delta tau)) for an average dividend yield."""

    delta: float
    source: DividendSource = DividendSource.AVERAGE_YIELD

    def __call__(self, quote: OptionQuote) -> float:
        return quote.spot * (1 - math.exp(-self.delta * quote.maturity))


@dataclass(frozen=True)
class RealizedDividends:
    """Discounted dividends actually paid after the quote date up to expiry."""

    payments: pd.Series
    source: DividendSource = DividendSource.REALIZED

    def __call__(self, quote: OptionQuote) -> float:
        dates = self.payments.index
        paid = self.payments[
            (dates > pd.Timestamp(quote.quote_date))
            & (dates <= pd.Timestamp(quote.expiry_date))
        ]

        if paid.empty:
            return 0.0

        days = np.busday_count(
            quote.quote_date,
            paid.index.values.astype("datetime64[D]"),
        )
        discounts = np.exp(-quote.tbill_rate * days / TRADING_DAYS_PER_YEAR)

        return float(np.sum(paid.to_numpy() * discounts))


class FilterRule(StrEnum):
    LATE_TIMESTAMP = "late_timestamp"
    SHORT_MATURITY = "short_maturity"
    LOW_PRICE = "low_price"
    LOWER_BOUND_VIOLATION = "lower_bound_violation"
    UPPER_BOUND_VIOLATION = "upper_bound_violation"


@dataclass(frozen=True)
class FilterReport:
    input_count: int
    retained: int
    excluded: dict[FilterRule, int] = field(default_factory=dict)
    dividend_source: DividendSource = DividendSource.AVERAGE_YIELD

    @property
    def excluded_total(self) -> int:
        return sum(self.excluded.values())


def failed_rules(
    quote: OptionQuote,
    pv_dividends: PresentValueOfDividends,
    cutoff_time: time = CUTOFF_TIME,
    min_maturity_days: int = MIN_MATURITY_DAYS,
    min_price: float = MIN_PRICE,
) -> list[FilterRule]:
    """Every exclusion rule `quote` fails, in `FilterRule` order."""
    bounds = check_bounds(
        quote.mid,
        quote.spot,
        pv_dividends(quote),
        quote.strike,
        quote.maturity,
        quote.tbill_rate,
    )

    checks = {
        FilterRule.LATE_TIMESTAMP: quote.timestamp > cutoff_time,
        FilterRule.SHORT_MATURITY: quote.trading_days < min_maturity_days,
        FilterRule.LOW_PRICE: quote.mid < min_price,
        FilterRule.LOWER_BOUND_VIOLATION: quote.bid < bounds.lower,
        FilterRule.UPPER_BOUND_VIOLATION: quote.ask > bounds.upper,
    }

    return [rule for rule, failed in checks.items() if failed]


def apply_filters(
    quotes: Iterable[OptionQuote],
    pv_dividends: PresentValueOfDividends = AverageYield(0.0),
    cutoff_time: time = CUTOFF_TIME,
    min_maturity_days: int = MIN_MATURITY_DAYS,
    min_price: float = MIN_PRICE,
) -> tuple[list[OptionQuote], FilterReport]:
    """
    Keep the quotes that pass every exclusion rule. An excluded quote is
    counted once, under the first rule it fails.
    """
    retained = []
    excluded = {rule: 0 for rule in FilterRule}
    input_count = 0

    for quote in quotes:
        input_count += 1
        failures = failed_rules(
            quote, pv_dividends, cutoff_time, min_maturity_days, min_price
        )

        if failures:
            excluded[failures[0]] += 1
        else:
            retained.append(quote)

    report = FilterReport(
        input_count=input_count,
        retained=len(retained),
        excluded=excluded,
        dividend_source=pv_dividends.source,
    )

    logger.info(
        f"Retained {report.retained} of {input_count} quotes",
        extra={"excluded": {str(k): v for k, v in excluded.items()}},
    )

    return retained, report
