from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import pandas as pd
from marshmallow import ValidationError as SchemaValidationError

from use_case import UseCase
from volfeedback.calibrator import (
    CalibrationResult,
    CalibrationSettings,
    calibrate,
)
from volfeedback.exceptions import ParseError
from volfeedback.models import MarketState, ModelParams
from volfeedback.pd_solver import (
    PDGridConfig,
    PDSolution,
    solution_table,
    solve_pd_ratio,
)
from volfeedback.pricer import MCConfig, OptionSpec, price_calls
from volfeedback.quotes import (
    AverageYield,
    RealizedDividends,
    apply_filters,
    load_dividends,
    load_quotes,
)
from volfeedback.repositories import DateRange, QuoteRepository
from volfeedback.schemas import (
    CalibrationResultSchema,
    ContractSchema,
    FilterReportSchema,
    PathStatisticsSchema,
)
from volfeedback.simulator import (
    PathStatistics,
    SimConfig,
    path_statistics,
    simulate_paths,
)
from volfeedback.tables import (
    format_summary,
    moneyness_maturity_summary,
    parameter_table,
)


def write_atomically(path: Path, content: str) -> Path:
    """Write `content` next to `path` and rename it into place."""
    path.parent.mkdir(parents=True, exist_ok=True)

    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")

    try:
        with os.fdopen(fd, "w", newline="") as handle:
            handle.write(content)

        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)

        raise

    return path


def _to_json(data: Any) -> str:
    return json.dumps(data, indent=2) + "\n"


def format_csv(frame: pd.DataFrame) -> str:
    return frame.to_csv(index=False, float_format="%.10g")


@dataclass(frozen=True)
class SolvePdCommand:
    params: ModelParams
    grid: PDGridConfig
    output: Path | None = None


class SolvePd(UseCase[SolvePdCommand, pd.DataFrame]):
    def _execute(self, command: SolvePdCommand) -> pd.DataFrame:
        solution = solve_pd_ratio(command.params, command.grid)
        table = solution_table(solution)

        if command.output is not None:
            write_atomically(command.output, format_csv(table))

        return table


@dataclass(frozen=True)
class SimulateCommand:
    params: ModelParams
    grid: PDGridConfig
    sim: SimConfig
    output_dir: Path
    threads: int = 1
    direct_dividends: bool = False


class Simulate(UseCase[SimulateCommand, PathStatistics]):
    def _execute(self, command: SimulateCommand) -> PathStatistics:
        solution = solve_pd_ratio(command.params, command.grid)
        paths = simulate_paths(
            command.params,
            solution,
            command.sim,
            direct_dividends=command.direct_dividends,
            threads=command.threads,
        )
        statistics = path_statistics(paths)

        write_atomically(
            command.output_dir / "paths.csv", format_csv(paths.to_frame())
        )
        write_atomically(
            command.output_dir / "stats.json",
            _to_json(PathStatisticsSchema().dump(statistics)),
        )

        return statistics


@dataclass(frozen=True)
class Contract:
    spot: float
    strike: float
    maturity_years: float
    rate: float
    x0: float

    @property
    def spec(self) -> OptionSpec:
        return OptionSpec(strike=self.strike, maturity=self.maturity_years)


def load_contracts(path: Path) -> list[Contract]:
    schema = ContractSchema()
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    contracts = []

    for line, record in enumerate(frame.to_dict(orient="records"), start=2):
        try:
            contracts.append(Contract(**schema.load(record)))
        except SchemaValidationError as exc:
            raise ParseError(str(exc.messages), line=line) from exc

    return contracts


@dataclass(frozen=True)
class PriceCommand:
    params: ModelParams
    grid: PDGridConfig
    mc: MCConfig
    contracts: Sequence[Contract]
    output: Path | None = None
    threads: int = 1


class Price(UseCase[PriceCommand, pd.DataFrame]):
    """
    Price each contract with the model solved at the contract's own rate.
    Contract i draws from its own substream, so prices do not depend on the
    other rows of the file.
    """

    def _execute(self, command: PriceCommand) -> pd.DataFrame:
        solutions: dict[float, PDSolution] = {}
        rows = []

        for i, contract in enumerate(command.contracts):
            if contract.rate not in solutions:
                solutions[contract.rate] = solve_pd_ratio(
                    command.params.replace(r=contract.rate), command.grid
                )

            solution = solutions[contract.rate]
            state = MarketState.from_price(contract.spot, contract.x0, solution)
            (estimate,) = price_calls(
                [contract.spec],
                state,
                solution,
                solution.params,
                command.mc,
                threads=command.threads,
                key=(i,),
            )

            rows.append(
                {
                    **contract.__dict__,
                    "price": estimate.price,
                    "std_error": estimate.std_error,
                }
            )

            self.logger.debug(
                f"Contract {i}: price {estimate.price:.6f}",
                extra={"std_error": estimate.std_error},
            )

        prices = pd.DataFrame(
            rows,
            columns=[
                "spot",
                "strike",
                "maturity_years",
                "rate",
                "x0",
                "price",
                "std_error",
            ],
        )

        if command.output is not None:
            write_atomically(command.output, format_csv(prices))

        return prices


@dataclass(frozen=True)
class CalibrateCommand:
    quotes_path: Path
    in_sample: DateRange
    out_sample: DateRange
    initial: ModelParams
    settings: CalibrationSettings
    mc: MCConfig
    grid: PDGridConfig
    output_dir: Path
    dividends_path: Path | None = None
    threads: int = 1


class Calibrate(UseCase[CalibrateCommand, CalibrationResult]):
    def _execute(self, command: CalibrateCommand) -> CalibrationResult:
        quotes = load_quotes(command.quotes_path)

        pv_dividends = (
            RealizedDividends(load_dividends(command.dividends_path))
            if command.dividends_path is not None
            else AverageYield(command.settings.average_yield)
        )

        retained, report = apply_filters(quotes, pv_dividends)
        repository = QuoteRepository(retained)

        result = calibrate(
            repository.between(command.in_sample),
            command.initial,
            command.settings,
            command.mc,
            command.grid,
            out_of_sample=repository.between(command.out_sample),
            threads=command.threads,
        )

        dumped = {
            **CalibrationResultSchema().dump(result),
            "filter_report": FilterReportSchema().dump(report),
        }

        write_atomically(command.output_dir / "result.json", _to_json(dumped))
        write_atomically(
            command.output_dir / "table.txt", parameter_table([result]) + "\n"
        )

        return result


@dataclass(frozen=True)
class TableCommand:
    result_paths: Sequence[Path]
    quotes_path: Path | None = None


class Table(UseCase[TableCommand, str]):
    def _execute(self, command: TableCommand) -> str:
        schema = CalibrationResultSchema()
        results = [
            schema.load(json.loads(path.read_text()))
            for path in command.result_paths
        ]

        sections = [parameter_table(results)]

        if command.quotes_path is not None:
            summary = moneyness_maturity_summary(
                load_quotes(command.quotes_path)
            )
            sections.append(format_summary(summary))

        return "\n\n".join(sections) + "\n"
