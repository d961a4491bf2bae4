"""Reference problems with closed-form or trivially known solutions."""

from __future__ import annotations

import numpy as np

from . import blocks
from .measure import DiscreteMeasure
from .problem import ProblemSpec

__all__ = [
    "lq1d",
    "lq1d_mu0",
    "lq1d_value",
    "interaction1d",
    "gaussian_interaction2d",
    "running_only1d",
    "affine1d",
    "zero_cost1d",
    "quadratic_drift1d",
]


def lq1d(T: float = 1.0, bound: float = 10.0) -> ProblemSpec:
    """``v = u``, ``L = u^2/2``, ``phi(mu) = 1/2 int x^2 dmu`` on ``U = [-bound, bound]``."""
    return ProblemSpec(
        dim=1,
        control_dim=1,
        T=T,
        U=[[-bound, bound]],
        drifts=[blocks.ControlInput([[1.0]])],
        control_costs=[blocks.QuadraticControlCost(0.5)],
        terminals=[blocks.QuadraticTerminal(1.0)],
        name="lq1d",
    )


def lq1d_mu0() -> DiscreteMeasure:
    return DiscreteMeasure([[-1.0], [3.0]], [0.5, 0.5])


def lq1d_value(tau: float, mu: DiscreteMeasure, T: float = 1.0) -> float:
    """Closed-form value ``Var(mu)/2 + mean(mu)^2 / (2 (1 + T - tau))``.

    Rigid translation leaves the variance untouched, so only the mean is
    controlled; minimizing ``S c^2/2 + (m + S c)^2/2`` over constants gives
    ``c = -m / (1 + S)`` with ``S = T - tau``.
    """
    m = float(mu.mean()[0])
    return 0.5 * mu.variance() + 0.5 * m * m / (1.0 + T - tau)


def interaction1d(T: float = 1.0, bound: float = 10.0, k: float = 1.0) -> ProblemSpec:
    """``v = u + k (mean(mu) - x)`` with LQ costs."""
    base = lq1d(T, bound)
    return ProblemSpec(
        dim=1,
        control_dim=1,
        T=T,
        U=base.U,
        drifts=base.drifts,
        kernels=[blocks.LinearAttraction(k)],
        control_costs=base.control_costs,
        terminals=base.terminals,
        name="interaction1d",
    )


def gaussian_interaction2d(T: float = 1.0) -> ProblemSpec:
    """2-D nonlinear scenario: Gaussian attraction, state and interaction costs."""
    return ProblemSpec(
        dim=2,
        control_dim=2,
        T=T,
        U=[[-2.0, 2.0], [-2.0, 2.0]],
        drifts=[blocks.ControlInput(np.eye(2)), blocks.LinearDrift([[0.0, 0.3], [-0.3, 0.0]])],
        kernels=[blocks.GaussianAttraction(0.8, 1.2)],
        control_costs=[blocks.QuadraticControlCost(0.5)],
        state_costs=[blocks.QuadraticStateCost(0.2, [0.5, 0.0])],
        interactions=[blocks.QuadraticInteraction(0.1)],
        terminals=[blocks.QuadraticTerminal(1.0, [1.0, -0.5])],
        variance_penalty=0.25,
        name="gaussian2d",
    )


def affine1d(T: float = 1.0) -> ProblemSpec:
    """``v = 0``, ``L = 0``, ``phi(mu) = mean(mu)``: the value is the mean."""
    return ProblemSpec(
        dim=1, control_dim=1, T=T, U=[[-1.0, 1.0]], terminals=[blocks.LinearTerminal(1.0)], name="affine1d"
    )


def zero_cost1d(T: float = 1.0, bound: float = 10.0) -> ProblemSpec:
    """``v = u`` with vanishing costs; every control is optimal."""
    return ProblemSpec(
        dim=1, control_dim=1, T=T, U=[[-bound, bound]], drifts=[blocks.ControlInput([[1.0]])], name="zero1d"
    )


def running_only1d(T: float = 1.0, bound: float = 10.0) -> ProblemSpec:
    """``v = u``, ``L = u^2/2``, ``phi = 0``; the value vanishes identically."""
    return ProblemSpec(
        dim=1,
        control_dim=1,
        T=T,
        U=[[-bound, bound]],
        drifts=[blocks.ControlInput([[1.0]])],
        control_costs=[blocks.QuadraticControlCost(0.5)],
        name="running1d",
    )


def quadratic_drift1d(T: float = 1.0) -> ProblemSpec:
    """Drift ``b(x) = x^2``, which breaks the sublinear growth bound."""
    base = lq1d(T)
    return ProblemSpec(
        dim=1,
        control_dim=1,
        T=T,
        U=base.U,
        drifts=[blocks.ControlInput([[1.0]]), blocks.PowerDrift(1.0, 2)],
        control_costs=base.control_costs,
        terminals=base.terminals,
        name="quadratic_drift1d",
    )
