from pathlib import Path

import pytest
from click.testing import CliRunner

from volfeedback.models import ModelParams
from volfeedback.pd_solver import PDSolution, solve_pd_ratio


@pytest.fixture(scope="session")
def base_params() -> ModelParams:
    """gamma = 2 with the volatility dynamics of the figures."""
    return ModelParams(
        r=0.02,
        alpha=0.05,
        gamma=2.0,
        beta=0.5,
        beta_q=0.5,
        sigma_x=0.2,
        rho_dx=-0.5,
    )


@pytest.fixture(scope="session")
def base_solution(base_params: ModelParams) -> PDSolution:
    return solve_pd_ratio(base_params)


@pytest.fixture(scope="session")
def no_feedback_params() -> ModelParams:
    return ModelParams(
        r=0.02,
        alpha=0.015,
        gamma=0.0,
        beta=0.5,
        beta_q=0.5,
        sigma_x=0.2,
        rho_dx=-0.5,
    )


@pytest.fixture(scope="session")
def no_feedback_solution(no_feedback_params: ModelParams) -> PDSolution:
    return solve_pd_ratio(no_feedback_params)


@pytest.fixture
def cli_runner() -> CliRunner:
    return CliRunner()


@pytest.fixture
def write_config(tmp_path: Path):
    def write(body: str, name: str = "config.toml") -> Path:
        path = tmp_path / name
        path.write_text(body)

        return path

    return write
