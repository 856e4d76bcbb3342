from __future__ import annotations

from dataclasses import dataclass
from datetime import date
from typing import Self

from repository import Repository
from volfeedback.exceptions import InvalidConfiguration
from volfeedback.models import OptionQuote


@dataclass(frozen=True)
class DateRange:
    """Inclusive range of quote dates, written `START:END` in ISO format."""

    start: date
    end: date

    def __post_init__(self) -> None:
        if self.end < self.start:
            raise InvalidConfiguration(
                f"Date range ends before it starts: {self}"
            )

    @classmethod
    def parse(cls, value: str) -> Self:
        start, sep, end = value.partition(":")

        if not sep:
            raise InvalidConfiguration(
                f"Expected a date range START:END, got {value!r}"
            )

        try:
            return cls(date.fromisoformat(start), date.fromisoformat(end))
        except ValueError as exc:
            raise InvalidConfiguration(
                f"Invalid date range {value!r}: {exc}"
            ) from exc

    def __contains__(self, day: date) -> bool:
        return self.start <= day <= self.end

    def __str__(self) -> str:
        return f"{self.start.isoformat()}:{self.end.isoformat()}"


class QuoteRepository(Repository[OptionQuote]):
    def between(self, date_range: DateRange) -> list[OptionQuote]:
        return self.where(lambda quote: quote.quote_date in date_range)

    def dates(self) -> list[date]:
        return sorted({quote.quote_date for quote in self.select()})
