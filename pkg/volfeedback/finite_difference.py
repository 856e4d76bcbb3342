"""
Dense second-order finite-difference solve of the price-dividend equation.

This is deliberately a different discretisation from the collocation solver
in `pd_solver` and serves as an independent reference for it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from logging import getLogger

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.sparse import csc_matrix, diags
from scipy.sparse.linalg import spsolve

from volfeedback.exceptions import InvalidConfiguration, NoSolution
from volfeedback.models import ModelParams, validate
from volfeedback.pd_solver import (
    F_FLOOR,
    asymptotic_ratio,
    ground_state_discount,
)

logger = getLogger(__name__)

MAX_FAILED_DAMPED_STEPS = 5
MAX_NEWTON_ITERATIONS = 50

Floats = NDArray[np.float64]


@dataclass(frozen=True, eq=False)
class GridSolution:
    mesh: Floats
    f_vals: Floats

    def f(self, x: ArrayLike) -> Floats:
        return np.interp(
            np.abs(np.asarray(x, dtype=float)), self.mesh, self.f_vals
        )


class _Discretisation:
    def __init__(self, params: ModelParams, b: float, n_nodes: int) -> None:
        self.params = params
        self.x = np.linspace(0.0, b, n_nodes)
        self.h = self.x[1] - self.x[0]
        self.f_b = float(asymptotic_ratio(params, b)[0])

    def _dividend_vol(
        self, f: Floats, p: Floats, rho: float
    ) -> tuple[Floats, Floats, Floats]:
        """y at interior nodes with its partial derivatives in f and p."""
        sigma = self.params.sigma_x
        x = self.x[1:-1]

        q = p / f
        argument = x**2 - (1 - rho**2) * sigma**2 * q**2
        root = np.sqrt(np.maximum(argument, 0.0))
        y = -rho * sigma * q + root

        with np.errstate(divide="ignore", invalid="ignore"):
            dy_dq = np.where(
                argument > 0,
                -rho * sigma - (1 - rho**2) * sigma**2 * q / root,
                -rho * sigma,
            )

        return y, dy_dq * (-p / f**2), dy_dq / f

    def residual_and_jacobian(
        self, f: Floats, rho: float
    ) -> tuple[Floats, csc_matrix]:
        params = self.params
        sigma2 = params.sigma_x**2
        h = self.h
        x = self.x[1:-1]

        g = np.empty_like(f)
        main = np.empty_like(f)
        upper = np.zeros(f.size - 1)
        lower = np.zeros(f.size - 1)

        # x = 0 with the ghost node f_{-1} = f_1 from f_x(0) = 0
        decay = params.r - params.alpha
        g[0] = sigma2 * (f[1] - f[0]) / h**2 - decay * f[0] + 1
        main[0] = -sigma2 / h**2 - decay
        upper[0] = sigma2 / h**2

        fi = f[1:-1]
        p = (f[2:] - f[:-2]) / (2 * h)
        second = (f[2:] - 2 * fi + f[:-2]) / h**2
        discount = params.r + params.gamma * x**2 - params.alpha

        y, dy_df, dy_dp = self._dividend_vol(fi, p, rho)
        drift = params.sigma_x * rho * y - params.beta * x

        g[1:-1] = drift * p + 0.5 * sigma2 * second - discount * fi + 1

        dt_df = params.sigma_x * rho * p * dy_df
        dt_dp = drift + params.sigma_x * rho * p * dy_dp

        main[1:-1] = dt_df - sigma2 / h**2 - discount
        upper[1:] = dt_dp / (2 * h) + 0.5 * sigma2 / h**2
        lower[:-1] = -dt_dp / (2 * h) + 0.5 * sigma2 / h**2

        g[-1] = f[-1] - self.f_b
        main[-1] = 1.0

        jacobian = diags([lower, main, upper], [-1, 0, 1], format="csc")

        return g, jacobian


def _newton(
    disc: _Discretisation, f: Floats, rho: float, tol: float
) -> Floats:
    """Converged once a full Newton step is below `tol` relative to f."""
    g, jacobian = disc.residual_and_jacobian(f, rho)
    norm = float(np.max(np.abs(g)))

    for _ in range(MAX_NEWTON_ITERATIONS):
        step = spsolve(jacobian, -g)

        if float(np.max(np.abs(step))) <= tol * float(np.max(np.abs(f))):
            return f + step

        damping = 1.0
        failures = 0

        while True:
            trial = f + damping * step
            g_trial, jacobian_trial = disc.residual_and_jacobian(trial, rho)
            norm_trial = float(np.max(np.abs(g_trial)))

            if norm_trial < norm and np.all(np.isfinite(g_trial)):
                break

            failures += 1

            if failures >= MAX_FAILED_DAMPED_STEPS:
                raise NoSolution(
                    f"Newton iteration stalled at rho_dx={rho:+.4f} "
                    f"(residual {norm:.3g})"
                )

            damping /= 2

        f, g, jacobian, norm = trial, g_trial, jacobian_trial, norm_trial

        if float(np.min(f)) < F_FLOOR:
            raise NoSolution(
                f"Price-dividend ratio became non-positive at rho_dx={rho:+.4f}"
            )

    raise NoSolution(f"Newton iteration did not converge at rho_dx={rho:+.4f}")


def finite_difference_pd_ratio(
    params: ModelParams,
    b: float = 5.0,
    n_nodes: int = 10_001,
    continuation_step: float = 0.1,
    tol: float = 1e-10,
) -> GridSolution:
    validate(params)

    if not params.has_feedback:
        raise InvalidConfiguration(
            "The finite-difference solve needs gamma > 0"
        )

    discount = ground_state_discount(params)

    if discount <= 0:
        raise NoSolution(
            f"Long-run discount rate {discount:.4g} is not positive"
        )

    disc = _Discretisation(params, b, n_nodes)
    f, _ = asymptotic_ratio(params, disc.x)

    n_stages = math.ceil(abs(params.rho_dx) / continuation_step)

    for rho in np.linspace(0.0, params.rho_dx, n_stages + 1):
        f = _newton(disc, f, float(rho), tol)

        logger.debug(
            f"Finite-difference stage rho_dx={rho:+.4f}: f(0)={f[0]:.8g}",
            extra={"n_nodes": n_nodes},
        )

    return GridSolution(mesh=disc.x, f_vals=f)


def richardson_pd_ratio(
    params: ModelParams, b: float = 5.0, n_nodes: int = 10_001
) -> GridSolution:
    """
    Richardson extrapolation of two second-order solves, the finer with
    `n_nodes` nodes and the coarser with every other node.
    """
    if n_nodes % 2 == 0:
        raise InvalidConfiguration("n_nodes must be odd for extrapolation")

    fine = finite_difference_pd_ratio(params, b, n_nodes)
    coarse = finite_difference_pd_ratio(params, b, (n_nodes + 1) // 2)

    return GridSolution(
        mesh=coarse.mesh,
        f_vals=(4 * fine.f_vals[::2] - coarse.f_vals) / 3,
    )
