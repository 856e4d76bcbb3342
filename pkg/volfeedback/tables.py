from __future__ import annotations

import math
from typing import Sequence

import numpy as np
import pandas as pd

from volfeedback.calibrator import CalibrationResult
from volfeedback.exceptions import InsufficientData
from volfeedback.models import OptionQuote

MONEYNESS_EDGES = (0.94, 0.97, 1.00, 1.03, 1.06)
MONEYNESS_LABELS = (
    "<0.94",
    "0.94-0.97",
    "0.97-1.00",
    "1.00-1.03",
    "1.03-1.06",
    ">=1.06",
)
MATURITY_EDGES = (60, 180)
MATURITY_LABELS = ("<60", "60-180", ">=180")

PARAMETER_LABELS = {
    "beta_q": "beta~",
    "sigma_x": "sigma_x",
    "rho_dx": "rho_dx",
    "lambda_x": "lambda_x",
    "gamma": "gamma",
}


def _bucket(
    values: Sequence[float], edges: Sequence[float], labels: Sequence[str]
) -> list[str]:
    indices = np.digitize(np.asarray(values, dtype=float), edges)

    return [labels[i] for i in indices]


def moneyness_maturity_summary(quotes: Sequence[OptionQuote]) -> pd.DataFrame:
    """
    Quote counts and average mid prices by moneyness (spot over strike) and
    maturity in trading days, with totals.
    """
    frame = pd.DataFrame(
        {
            "moneyness": _bucket(
                [quote.moneyness for quote in quotes],
                MONEYNESS_EDGES,
                MONEYNESS_LABELS,
            ),
            "maturity": _bucket(
                [quote.trading_days for quote in quotes],
                MATURITY_EDGES,
                MATURITY_LABELS,
            ),
            "mid": [quote.mid for quote in quotes],
        }
    )

    if frame.empty:
        raise InsufficientData("There are no quotes to summarise")

    def pivot(aggfunc: str) -> pd.DataFrame:
        return frame.pivot_table(
            index="moneyness", columns="maturity", values="mid", aggfunc=aggfunc
        ).reindex(index=list(MONEYNESS_LABELS), columns=list(MATURITY_LABELS))

    counts = pivot("count").fillna(0).astype(int)
    counts["all"] = counts.sum(axis=1)

    averages = pivot("mean")
    averages["all"] = (
        frame.groupby("moneyness")["mid"].mean().reindex(list(MONEYNESS_LABELS))
    )

    return pd.concat({"count": counts, "average_mid": averages}, axis=1)


def format_summary(summary: pd.DataFrame) -> str:
    return summary.to_string(float_format=lambda value: f"{value:.2f}")


def _cell(value: float | None, digits: int = 4) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "-"

    return f"{value:.{digits}f}"


def parameter_table(results: Sequence[CalibrationResult]) -> str:
    """
    Estimates per specification, one column each, with standard errors in
    parentheses below each estimate and the dollar RMSEs at the bottom.
    """
    header = ["", *(str(result.specification) for result in results)]
    rows: list[list[str]] = [header]

    for name, label in PARAMETER_LABELS.items():
        rows.append(
            [label, *(_cell(result.estimates.get(name)) for result in results)]
        )

        errors = [
            (
                f"({_cell(result.standard_errors.get(name))})"
                if result.standard_errors and name in result.standard_errors
                else ""
            )
            for result in results
        ]

        if any(errors):
            rows.append(["", *errors])

    rows.append(
        ["$RMSE in", *(_cell(result.in_sample_rmse) for result in results)]
    )
    rows.append(
        ["$RMSE out", *(_cell(result.out_sample_rmse) for result in results)]
    )
    rows.append(
        [
            "implied lambda_x",
            *(_cell(result.implied_lambda_x) for result in results),
        ]
    )

    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]

    return "\n".join(
        "  ".join(cell.rjust(width) for cell, width in zip(row, widths))
        for row in rows
    )
