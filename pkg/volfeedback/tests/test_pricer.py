import math

import numpy as np
import pytest
from pydantic import ValidationError as ConfigValidationError

from volfeedback.exceptions import (
    GammaZeroRequiresRGreaterAlpha,
    InvalidConfiguration,
)
from volfeedback.models import MarketState, ModelParams
from volfeedback.pd_solver import PDSolution, pd_ratio_constant, solve_pd_ratio
from volfeedback.pricer import (
    MCConfig,
    OptionSpec,
    PriceEstimate,
    check_bounds,
    deterministic_vol_variance,
    heston_reduction_check,
    lognormal_call,
    price_call,
    price_calls,
    price_zero_strike,
    pricing_identity,
)
from volfeedback.tests.factories import MCConfigFactory, ModelParamsFactory


def drop(first: PriceEstimate, second: PriceEstimate) -> float:
    """How far `second` lies below `first`, net of three standard errors."""
    noise = 3 * max(first.std_error, second.std_error)

    return first.price - second.price - noise


@pytest.fixture(scope="module")
def growth_params() -> ModelParams:
    """Low dividend growth, as in the gamma sensitivity study."""
    return ModelParamsFactory.build(alpha=0.015)


@pytest.fixture(scope="module")
def growth_solution(growth_params: ModelParams) -> PDSolution:
    return solve_pd_ratio(growth_params)


class TestMCConfig:
    def test_antithetic_sampling_needs_even_counts(self) -> None:
        with pytest.raises(ConfigValidationError):
            MCConfig(n_paths=1_001)

    def test_odd_counts_are_fine_without_antithetic_sampling(self) -> None:
        assert MCConfig(n_paths=1_001, antithetic=False).n_paths == 1_001

    def test_it_steps_at_the_daily_frequency(self) -> None:
        assert MCConfig().n_steps(0.5) == 126


class TestOptionSpec:
    @pytest.mark.parametrize(
        ("strike", "maturity"), ((-1.0, 0.5), (100.0, 0.0))
    )
    def test_it_rejects_invalid_contracts(
        self, strike: float, maturity: float
    ) -> None:
        with pytest.raises(InvalidConfiguration):
            OptionSpec(strike=strike, maturity=maturity)


class TestPriceCall:
    def test_a_fully_deterministic_model_prices_the_forward_payoff(
        self,
    ) -> None:
        params = ModelParamsFactory.build(
            gamma=0.0, alpha=0.015, sigma_x=0.0
        )
        solution = pd_ratio_constant(params)
        state = MarketState.from_price(100.0, 0.0, solution)

        estimate = price_call(
            OptionSpec(strike=100.0, maturity=1.0),
            state,
            solution,
            params,
            MCConfigFactory.build(n_paths=100, block_size=100),
        )

        # 1.4814
        assert estimate.price == pytest.approx(
            math.exp(-0.02) * (100.0 * math.exp(0.015) - 100.0), rel=1e-9
        )
        assert estimate.std_error == pytest.approx(0.0, abs=1e-12)

    def test_deterministic_volatility_gives_the_lognormal_price(
        self,
    ) -> None:
        params = ModelParamsFactory.build(
            gamma=0.0, alpha=0.015, sigma_x=0.0
        )
        solution = pd_ratio_constant(params)
        state = MarketState.from_price(100.0, 0.2, solution)

        estimate = price_call(
            OptionSpec(strike=100.0, maturity=0.5),
            state,
            solution,
            params,
            MCConfigFactory.build(n_paths=20_000, block_size=2_000),
        )

        expected = lognormal_call(
            100.0,
            100.0,
            0.5,
            0.02,
            0.005,
            deterministic_vol_variance(0.2, 0.5, 0.5),
        )

        assert abs(estimate.price - expected) < 3 * estimate.std_error

    def test_prices_fall_with_the_price_of_volatility_risk(self) -> None:
        maturities = (0.25, 1.0)
        estimates = []

        for gamma in (0.0, 1.5, 3.0):
            params = ModelParamsFactory.build(gamma=gamma, alpha=0.015)
            solution = solve_pd_ratio(params)
            state = MarketState.from_price(100.0, 0.2, solution)
            estimates.append(
                price_calls(
                    [OptionSpec(strike=100.0, maturity=T) for T in maturities],
                    state,
                    solution,
                    params,
                    MCConfigFactory.build(n_paths=20_000, block_size=2_000),
                )
            )

        for column in range(len(maturities)):
            by_gamma = [row[column] for row in estimates]

            for higher, lower in zip(by_gamma, by_gamma[1:]):
                assert drop(higher, lower) > 0

        short, long = (
            [row[column].price for row in estimates] for column in (0, 1)
        )

        assert long[0] - long[-1] > short[0] - short[-1]

    def test_the_physical_speed_matters_beyond_the_risk_neutral_one(
        self,
    ) -> None:
        mc = MCConfigFactory.build(n_paths=10_000, block_size=1_000)
        spec = OptionSpec(strike=100.0, maturity=1.0)
        estimates = []

        for beta in (0.5, 0.4):
            params = ModelParamsFactory.build(beta=beta, beta_q=0.5)
            solution = solve_pd_ratio(params)
            state = MarketState.from_price(100.0, 0.2, solution)
            estimates.append(price_call(spec, state, solution, params, mc))

        first, second = estimates
        combined = math.hypot(first.std_error, second.std_error)

        assert abs(first.price - second.price) > 3 * combined

    def test_it_is_reproducible_across_thread_counts(
        self, growth_params: ModelParams, growth_solution: PDSolution
    ) -> None:
        state = MarketState.from_price(100.0, 0.2, growth_solution)
        spec = OptionSpec(strike=95.0, maturity=0.25)
        mc = MCConfigFactory.build(n_paths=2_000, block_size=200)

        serial, *threaded = (
            price_call(
                spec, state, growth_solution, growth_params, mc, threads=n
            )
            for n in (1, 4, 8)
        )

        assert all(estimate == serial for estimate in threaded)


class TestPriceCalls:
    @pytest.fixture
    def estimates(
        self, growth_params: ModelParams, growth_solution: PDSolution
    ) -> list[float]:
        state = MarketState.from_price(100.0, 0.2, growth_solution)
        strikes = (0.0, 90.0, 95.0, 100.0, 105.0, 110.0)

        return [
            estimate.price
            for estimate in price_calls(
                [OptionSpec(strike=K, maturity=0.5) for K in strikes],
                state,
                growth_solution,
                growth_params,
                MCConfigFactory.build(),
            )
        ]

    def test_prices_are_non_increasing_in_the_strike(
        self, estimates: list[float]
    ) -> None:
        assert np.all(np.diff(estimates) <= 0)

    def test_prices_are_convex_in_the_strike(
        self, estimates: list[float]
    ) -> None:
        # equally spaced strikes from 90
        assert np.all(np.diff(estimates[1:], 2) >= -1e-12)

    def test_prices_respect_the_model_free_bounds(
        self, estimates: list[float]
    ) -> None:
        zero_strike, *priced = estimates
        pv_dividends = 100.0 - zero_strike

        for K, price in zip((90.0, 95.0, 100.0, 105.0, 110.0), priced):
            assert check_bounds(
                price, 100.0, pv_dividends, K, 0.5, 0.02, tol=1e-9
            )

    def test_no_contracts_means_no_prices(
        self, growth_params: ModelParams, growth_solution: PDSolution
    ) -> None:
        state = MarketState.from_price(100.0, 0.2, growth_solution)

        assert (
            price_calls(
                [],
                state,
                growth_solution,
                growth_params,
                MCConfigFactory.build(),
            )
            == []
        )


class TestAntitheticSampling:
    def test_it_keeps_the_mean_and_reduces_the_error(
        self, growth_params: ModelParams, growth_solution: PDSolution
    ) -> None:
        state = MarketState.from_price(100.0, 0.2, growth_solution)
        spec = OptionSpec(strike=100.0, maturity=1.0)

        paired = price_call(
            spec,
            state,
            growth_solution,
            growth_params,
            MCConfigFactory.build(n_paths=8_000, antithetic=True),
        )
        plain = price_call(
            spec,
            state,
            growth_solution,
            growth_params,
            MCConfigFactory.build(n_paths=8_000, antithetic=False),
        )

        combined = math.hypot(paired.std_error, plain.std_error)

        assert abs(paired.price - plain.price) < 3 * combined
        assert paired.std_error < plain.std_error
        assert paired.n_effective == 4_000

    def test_it_reduces_the_error_for_every_seed(
        self, growth_params: ModelParams, growth_solution: PDSolution
    ) -> None:
        state = MarketState.from_price(100.0, 0.2, growth_solution)
        spec = OptionSpec(strike=100.0, maturity=1.0)

        for seed in range(10):
            paired, plain = (
                price_call(
                    spec,
                    state,
                    growth_solution,
                    growth_params,
                    MCConfigFactory.build(
                        n_paths=4_000, seed=seed, antithetic=antithetic
                    ),
                )
                for antithetic in (True, False)
            )

            assert paired.std_error <= plain.std_error


class TestPriceZeroStrike:
    def test_without_dividends_it_approaches_the_spot(self) -> None:
        params = ModelParamsFactory.build(gamma=0.0, alpha=0.0199)
        solution = pd_ratio_constant(params)
        state = MarketState.from_price(100.0, 0.2, solution)

        estimate = price_zero_strike(
            state, solution, params, MCConfigFactory.build(), 1.0
        )

        expected = 100.0 * math.exp(-0.0001)

        assert abs(estimate.price - expected) <= 3 * estimate.std_error + 1e-9

    def test_with_a_fixed_spot_it_falls_with_volatility(
        self, base_params: ModelParams, base_solution: PDSolution
    ) -> None:
        calm, volatile = (
            price_zero_strike(
                MarketState.from_price(100.0, x0, base_solution),
                base_solution,
                base_params,
                MCConfigFactory.build(n_paths=8_000),
                1.0,
            ).price
            for x0 in (0.0, 0.5)
        )

        assert volatile < calm

    def test_with_fixed_dividends_it_falls_more_steeply(
        self, base_params: ModelParams, base_solution: PDSolution
    ) -> None:
        D0 = 100.0 / base_solution.f(0.0)
        mc = MCConfigFactory.build()

        def price(state: MarketState) -> float:
            return price_zero_strike(
                state, base_solution, base_params, mc, 1.0
            ).price

        fixed_spot = [
            price(MarketState.from_price(100.0, x0, base_solution))
            for x0 in (0.0, 0.3)
        ]
        fixed_dividend = [
            price(MarketState.from_dividend(D0, x0, base_solution))
            for x0 in (0.0, 0.3)
        ]

        assert fixed_dividend[0] == pytest.approx(fixed_spot[0])
        assert fixed_dividend[1] < fixed_spot[1]


class TestVolatilityRiskPremium:
    def test_with_a_fixed_physical_speed_prices_fall_as_the_premium_rises(
        self, base_params: ModelParams, base_solution: PDSolution
    ) -> None:
        spec = OptionSpec(strike=100.0, maturity=1.0)
        mc = MCConfigFactory.build(n_paths=20_000, block_size=2_000)
        state = MarketState.from_price(100.0, 0.2, base_solution)

        estimates = []

        for lambda_x in (-0.4, -0.2, 0.0, 0.2):
            params = base_params.replace(beta_q=base_params.beta + lambda_x)
            estimates.append(
                price_call(spec, state, base_solution, params, mc)
            )

        for lower_premium, higher_premium in zip(estimates, estimates[1:]):
            assert drop(lower_premium, higher_premium) > 0


class TestDividendFixedCall:
    def test_the_at_the_money_price_rises_then_falls_with_volatility(
        self, base_params: ModelParams, base_solution: PDSolution
    ) -> None:
        D0 = 100.0 / base_solution.f(0.0)
        spec = OptionSpec(strike=100.0, maturity=0.25)
        mc = MCConfigFactory.build(n_paths=20_000, block_size=2_000)

        calm, moderate, volatile = (
            price_call(
                spec,
                MarketState.from_dividend(D0, x0, base_solution),
                base_solution,
                base_params,
                mc,
            )
            for x0 in (0.0, 0.1, 0.2)
        )

        assert drop(moderate, calm) > 0
        assert drop(moderate, volatile) > 0


class TestPricingIdentity:
    def test_discounted_price_plus_dividends_is_the_spot(
        self, growth_params: ModelParams, growth_solution: PDSolution
    ) -> None:
        state = MarketState.from_price(100.0, 0.2, growth_solution)

        estimate = pricing_identity(
            state,
            growth_solution,
            growth_params,
            MCConfigFactory.build(n_paths=4_000),
            1.0,
        )

        assert abs(estimate.price - 100.0) < 3 * estimate.std_error + 0.01


class TestConvexity:
    def test_with_a_fixed_spot_volatility_raises_the_at_the_money_price(
        self, base_params: ModelParams, base_solution: PDSolution
    ) -> None:
        mc = MCConfigFactory.build(n_paths=4_000)
        spec = OptionSpec(strike=100.0, maturity=0.5)

        calm, volatile = (
            price_call(
                spec,
                MarketState.from_price(100.0, x0, base_solution),
                base_solution,
                base_params,
                mc,
            ).price
            for x0 in (0.0, 0.2)
        )

        assert volatile > calm


class TestHestonReductionCheck:
    @pytest.fixture
    def spec(self) -> OptionSpec:
        return OptionSpec(strike=100.0, maturity=0.5)

    def test_the_full_model_reduces_to_the_twin_without_feedback(
        self, no_feedback_params: ModelParams, spec: OptionSpec
    ) -> None:
        report = heston_reduction_check(
            no_feedback_params, spec, MCConfigFactory.build()
        )

        assert report.agrees
        assert report.difference == pytest.approx(0.0, abs=1e-6)

    def test_without_vol_of_vol_both_match_the_lognormal_price(
        self, spec: OptionSpec
    ) -> None:
        params = ModelParamsFactory.build(
            gamma=0.0, alpha=0.015, sigma_x=0.0
        )

        report = heston_reduction_check(
            params,
            spec,
            MCConfigFactory.build(n_paths=20_000, block_size=2_000),
        )
        expected = lognormal_call(
            100.0,
            100.0,
            0.5,
            0.02,
            0.005,
            deterministic_vol_variance(0.2, 0.5, 0.5),
        )

        assert report.agrees
        assert abs(report.twin.price - expected) < 3 * report.twin.std_error

    def test_it_needs_a_model_without_feedback(
        self, base_params: ModelParams, spec: OptionSpec
    ) -> None:
        with pytest.raises(InvalidConfiguration):
            heston_reduction_check(base_params, spec, MCConfigFactory.build())

    def test_it_needs_r_above_alpha(self, spec: OptionSpec) -> None:
        params = ModelParamsFactory.build(gamma=0.0, alpha=0.05)

        with pytest.raises(GammaZeroRequiresRGreaterAlpha):
            heston_reduction_check(params, spec, MCConfigFactory.build())


class TestLognormalCall:
    def test_a_zero_strike_is_the_discounted_forward(self) -> None:
        assert lognormal_call(100.0, 0.0, 1.0, 0.02, 0.005, 0.04) == (
            pytest.approx(100.0 * math.exp(-0.005))
        )

    def test_zero_variance_is_the_discounted_intrinsic_value(self) -> None:
        assert lognormal_call(100.0, 100.0, 1.0, 0.02, 0.005, 0.0) == (
            pytest.approx(math.exp(-0.02) * (100.0 * math.exp(0.015) - 100.0))
        )


class TestCheckBounds:
    def test_it_accepts_a_price_between_the_bounds(self) -> None:
        bounds = check_bounds(8.0, 100.0, 1.0, 95.0, 0.5, 0.02)

        assert bounds.holds
        assert bounds.lower == pytest.approx(
            100.0 - 1.0 - 95.0 * math.exp(-0.01)
        )

    def test_it_rejects_a_price_above_the_spot(self) -> None:
        assert not check_bounds(100.5, 100.0, 1.0, 95.0, 0.5, 0.02)

    def test_the_lower_bound_is_never_negative(self) -> None:
        assert check_bounds(0.0, 100.0, 1.0, 150.0, 0.5, 0.02).lower == 0.0
