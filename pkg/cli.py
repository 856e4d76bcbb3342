from __future__ import annotations

import logging
import sys
from functools import wraps
from pathlib import Path
from typing import Any, Callable, Sequence, TypeVar

import click
from pydantic import ValidationError as ConfigValidationError

from settings import RunConfig, load_run_config
from volfeedback.exceptions import InvalidConfiguration, ModelError
from volfeedback.models import MODEL_PARAM_KEYS
from volfeedback.repositories import DateRange
from volfeedback.use_cases import (
    Calibrate,
    CalibrateCommand,
    Price,
    PriceCommand,
    Simulate,
    SimulateCommand,
    SolvePd,
    SolvePdCommand,
    Table,
    TableCommand,
    format_csv,
    load_contracts,
)

F = TypeVar("F", bound=Callable[..., Any])

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")

config_argument = click.argument(
    "config", type=click.Path(exists=True, dir_okay=False, path_type=Path)
)


def run_options(func: F) -> F:
    """
    `--set`, one flag per model parameter and `--threads`. The decorated
    command receives the loaded `RunConfig` as `config` instead.
    """

    @wraps(func)
    def wrapper(
        config: Path,
        overrides: tuple[str, ...],
        threads: int | None,
        **kwargs: Any,
    ) -> Any:
        flags = {key: kwargs.pop(key) for key in MODEL_PARAM_KEYS}
        flag_overrides = [
            f"{key}={value}"
            for key, value in flags.items()
            if value is not None
        ]

        if threads is not None:
            flag_overrides.append(f"threads={threads}")

        return func(
            config=_load_config(config, [*flag_overrides, *overrides]),
            **kwargs,
        )

    decorated: Callable[..., Any] = wrapper

    for key in reversed(MODEL_PARAM_KEYS):
        decorated = click.option(
            f"--{key.replace('_', '-')}",
            key,
            type=float,
            default=None,
            help=f"Override the model parameter {key}.",
        )(decorated)

    decorated = click.option(
        "--threads",
        type=click.IntRange(min=1),
        default=None,
        help="Worker threads for path blocks.",
    )(decorated)
    decorated = click.option(
        "--set",
        "overrides",
        multiple=True,
        metavar="KEY=VALUE",
        help="Override a configuration value, e.g. mc.n_paths=2000.",
    )(decorated)

    return decorated  # type: ignore[return-value]


def _load_config(path: Path, overrides: Sequence[str]) -> RunConfig:
    try:
        return load_run_config(path, overrides)
    except (ConfigValidationError, ValueError) as exc:
        raise click.UsageError(f"Invalid configuration: {exc}") from exc


def _require_seed(config: RunConfig) -> None:
    if config.seed is None:
        raise click.UsageError(
            "A seed is required, set it in the config file or with --set seed=N"
        )


def _date_range(
    ctx: click.Context, param: click.Parameter, value: str
) -> DateRange:
    try:
        return DateRange.parse(value)
    except InvalidConfiguration as exc:
        raise click.BadParameter(str(exc), ctx=ctx, param=param) from exc


@click.group(
    "volfeedback",
    invoke_without_command=True,
    context_settings={"help_option_names": ["-h", "--help"]},
)
@click.option(
    "--log-level",
    type=click.Choice(LOG_LEVELS, case_sensitive=False),
    default="WARNING",
    show_default=True,
)
@click.pass_context
def cli(ctx: click.Context, log_level: str) -> None:
    """Volatility-feedback price-dividend ratio toolkit."""
    logging.basicConfig(
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    logging.getLogger().setLevel(log_level.upper())

    if ctx.invoked_subcommand is None:
        click.echo(ctx.get_help(), err=True)
        ctx.exit(2)


@cli.command("solve-pd")
@config_argument
@click.option(
    "-o",
    "--output",
    type=click.Path(dir_okay=False, path_type=Path),
    default=None,
    help="Write the table here instead of standard output.",
)
@run_options
def solve_pd(config: RunConfig, output: Path | None) -> None:
    """Solve for the price-dividend ratio and emit its table as CSV."""
    table = SolvePd()(
        SolvePdCommand(
            params=config.model.to_params(), grid=config.grid, output=output
        )
    )

    if output is None:
        click.echo(format_csv(table), nl=False)


@cli.command("simulate")
@config_argument
@click.option(
    "-o",
    "--output-dir",
    type=click.Path(file_okay=False, path_type=Path),
    default=None,
)
@click.option(
    "--direct-dividends",
    is_flag=True,
    help="Also step the dividend directly and compare with P/f.",
)
@run_options
def simulate(
    config: RunConfig, output_dir: Path | None, direct_dividends: bool
) -> None:
    """Simulate physical-measure paths and write paths.csv and stats.json."""
    _require_seed(config)

    Simulate()(
        SimulateCommand(
            params=config.model.to_params(),
            grid=config.grid,
            sim=config.sim_config(),
            output_dir=output_dir or config.output_dir,
            threads=config.threads,
            direct_dividends=direct_dividends,
        )
    )


@cli.command("price")
@config_argument
@click.argument(
    "contracts", type=click.Path(exists=True, dir_okay=False, path_type=Path)
)
@click.option(
    "-o",
    "--output",
    type=click.Path(dir_okay=False, path_type=Path),
    default=None,
)
@run_options
def price(config: RunConfig, contracts: Path, output: Path | None) -> None:
    """Price European calls by Monte Carlo, one row per contract."""
    _require_seed(config)

    prices = Price()(
        PriceCommand(
            params=config.model.to_params(),
            grid=config.grid,
            mc=config.mc_config(),
            contracts=load_contracts(contracts),
            output=output,
            threads=config.threads,
        )
    )

    if output is None:
        click.echo(format_csv(prices), nl=False)


@cli.command("calibrate")
@config_argument
@click.argument(
    "quotes", type=click.Path(exists=True, dir_okay=False, path_type=Path)
)
@click.option(
    "--in-sample",
    required=True,
    callback=_date_range,
    metavar="START:END",
)
@click.option(
    "--out-sample",
    required=True,
    callback=_date_range,
    metavar="START:END",
)
@click.option(
    "--dividends",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None,
    help="Realized dividend payments (date,amount).",
)
@click.option(
    "-o",
    "--output-dir",
    type=click.Path(file_okay=False, path_type=Path),
    default=None,
)
@run_options
def calibrate(
    config: RunConfig,
    quotes: Path,
    in_sample: DateRange,
    out_sample: DateRange,
    dividends: Path | None,
    output_dir: Path | None,
) -> None:
    """Fit the structural parameters to option quotes."""
    _require_seed(config)

    result = Calibrate()(
        CalibrateCommand(
            quotes_path=quotes,
            in_sample=in_sample,
            out_sample=out_sample,
            initial=config.model.to_params(),
            settings=config.calibration,
            mc=config.mc_config(),
            grid=config.grid,
            output_dir=output_dir or config.output_dir,
            dividends_path=dividends,
            threads=config.threads,
        )
    )

    click.echo(
        f"{result.specification}: in-sample RMSE {result.in_sample_rmse:.4f}"
    )


@cli.command("table")
@click.argument(
    "results",
    nargs=-1,
    required=True,
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
)
@click.option(
    "--quotes",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None,
    help="Also summarise these quotes by moneyness and maturity.",
)
def table(results: tuple[Path, ...], quotes: Path | None) -> None:
    """Render calibration results side by side."""
    click.echo(
        Table()(TableCommand(result_paths=results, quotes_path=quotes)),
        nl=False,
    )


def run(argv: Sequence[str] | None = None) -> int:
    """
    Exit codes: 0 on success, 1 for model errors (the error's class name is
    written to standard error) and 2 for usage errors.
    """
    try:
        rv = cli.main(
            args=list(argv) if argv is not None else None,
            prog_name="volfeedback",
            standalone_mode=False,
        )
    except click.ClickException as exc:
        exc.show()

        return exc.exit_code
    except click.exceptions.Abort:
        click.echo("Aborted!", err=True)

        return 1
    except ModelError as exc:
        click.echo(f"{type(exc).__name__}: {exc}", err=True)

        return 1

    return rv if isinstance(rv, int) else 0


if __name__ == "__main__":
    sys.exit(run())
