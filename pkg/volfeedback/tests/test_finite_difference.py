import math

import numpy as np
import pytest

from volfeedback.exceptions import InvalidConfiguration, NoSolution
from volfeedback.finite_difference import (
    finite_difference_pd_ratio,
    richardson_pd_ratio,
)
from volfeedback.models import ModelParams
from volfeedback.pd_solver import (
    PDGridConfig,
    ground_state_discount,
    solve_pd_ratio,
)
from volfeedback.tests.factories import ModelParamsFactory

XS = np.linspace(0.0, 1.0, 21)


class TestRichardsonPdRatio:
    @pytest.fixture(scope="class")
    def params(self) -> ModelParams:
        return ModelParamsFactory.build(rho_dx=0.0)

    @pytest.mark.parametrize(
        "changes",
        (
            {},
            {"rho_dx": 0.5},
            {"gamma": 3.0, "alpha": 0.08},
            {"gamma": 1.0, "alpha": 0.03},
            {"beta": 0.25, "beta_q": 0.25, "sigma_x": math.sqrt(0.02)},
            {"beta": 1.0, "beta_q": 1.0, "sigma_x": math.sqrt(0.08)},
        ),
    )
    def test_it_agrees_with_the_collocation_solver_to_four_decimals(
        self, changes: dict[str, float]
    ) -> None:
        params = ModelParamsFactory.build(**changes)

        collocation = solve_pd_ratio(params, PDGridConfig(tol=1e-8))
        oracle = richardson_pd_ratio(params)

        np.testing.assert_allclose(collocation.f(XS), oracle.f(XS), atol=5e-5)

    def test_it_agrees_with_the_collocation_solver_without_correlation(
        self, params: ModelParams
    ) -> None:
        collocation = solve_pd_ratio(params, PDGridConfig(tol=1e-8))
        oracle = richardson_pd_ratio(params)

        np.testing.assert_allclose(collocation.f(XS), oracle.f(XS), atol=5e-5)

    def test_it_agrees_with_the_dividend_yield_at_moderate_volatility(
        self, params: ModelParams
    ) -> None:
        collocation = solve_pd_ratio(params, PDGridConfig(tol=1e-8))
        oracle = richardson_pd_ratio(params)

        assert 1 / collocation.f(0.3) == pytest.approx(
            1 / float(oracle.f(0.3)), rel=1e-4
        )

    def test_it_needs_an_odd_node_count(self, params: ModelParams) -> None:
        with pytest.raises(InvalidConfiguration):
            richardson_pd_ratio(params, n_nodes=10_000)


class TestFiniteDifferencePdRatio:
    def test_it_satisfies_the_dirichlet_condition(self) -> None:
        solution = finite_difference_pd_ratio(
            ModelParamsFactory.build(), n_nodes=2_001
        )

        discount = ground_state_discount(ModelParamsFactory.build())

        assert solution.f_vals[-1] == pytest.approx(1 / (discount + 2.0 * 25.0))
        assert np.all(np.diff(solution.f_vals) <= 1e-8)

    def test_it_needs_feedback(self) -> None:
        with pytest.raises(InvalidConfiguration):
            finite_difference_pd_ratio(
                ModelParamsFactory.build(gamma=0.0, alpha=0.015)
            )

    def test_it_fails_without_an_admissible_solution(self) -> None:
        with pytest.raises(NoSolution):
            finite_difference_pd_ratio(
                ModelParamsFactory.build(gamma=1.0, alpha=0.08)
            )
