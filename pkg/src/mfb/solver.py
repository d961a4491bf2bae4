"""Direct minimization of the Bolza cost over piecewise-constant controls.

Projected gradient descent on the box ``U`` with Armijo backtracking. The
gradient is the adjoint one from :func:`mfb.pmp.forward_backward_sweep`.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Any

import numpy as np

from .dynamics import Trajectory
from .errors import DomainError, InvalidControlError
from .measure import DiscreteMeasure
from .pmp import forward_backward_sweep
from .problem import (
    DEFAULT_SUBSTEPS,
    ControlSignal,
    ProblemSpec,
    check_control,
    controlled_flow,
    default_intervals,
)

__all__ = ["SolverOptions", "SolveReport", "cost_gradient", "solve"]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverOptions:
    """Knobs of :func:`solve`; ``intervals=None`` means 40 per unit time.

    ``initial_step`` is the first trial step of the first line search. Later
    searches start from a safeguarded Barzilai-Borwein step when
    ``bb_steps`` is set, and from ``initial_step`` otherwise.
    """

    max_iters: int = 500
    grad_tol: float = 1e-6
    initial_step: float = 1.0
    shrink: float = 0.5
    armijo: float = 1e-4
    max_backtracks: int = 40
    bb_steps: bool = True
    intervals: int | None = None
    substeps: int = DEFAULT_SUBSTEPS
    initial_control: Any = None

    def __post_init__(self) -> None:
        if self.max_iters < 0 or not self.grad_tol > 0:
            raise DomainError("max_iters must be >= 0 and grad_tol > 0")
        if not (0 < self.shrink < 1) or not (0 < self.armijo < 1) or not self.initial_step > 0:
            raise DomainError("Armijo parameters need 0 < shrink, armijo < 1 and initial_step > 0")
        if self.substeps < 1 or (self.intervals is not None and self.intervals < 1):
            raise DomainError("intervals and substeps must be positive")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> SolverOptions:
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise DomainError(f"unknown solver option(s): {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        if isinstance(out["initial_control"], np.ndarray):
            out["initial_control"] = out["initial_control"].tolist()
        return out

    def key(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass
class SolveReport:
    control: ControlSignal
    trajectory: Trajectory
    cost: float
    grad_norms: list[float]
    costs: list[float]
    iterations: int
    converged: bool
    options: SolverOptions = field(default_factory=SolverOptions)

    @property
    def total(self) -> float:
        return self.cost

    def to_dict(self) -> dict[str, Any]:
        return {
            "control": self.control.to_dict(),
            "cost": self.cost,
            "grad_norms": list(self.grad_norms),
            "costs": list(self.costs),
            "iterations": self.iterations,
            "converged": self.converged,
            "options": self.options.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def cost_gradient(
    spec: ProblemSpec,
    mu0: DiscreteMeasure,
    u: ControlSignal,
    tau: float | None = None,
    substeps: int = DEFAULT_SUBSTEPS,
) -> np.ndarray:
    """``dJ/du`` per control interval, shape ``(K, m)``."""
    return np.array(forward_backward_sweep(spec, mu0, u, tau, substeps).gradient)


def _cost(spec: ProblemSpec, traj: Trajectory) -> float:
    return float(traj.running[-1]) + spec.terminal_cost(traj.positions[-1], traj.weights)


def _initial_values(spec: ProblemSpec, opts: SolverOptions, K: int) -> np.ndarray:
    if opts.initial_control is None:
        return np.tile(spec.default_control(), (K, 1))
    u0 = np.asarray(opts.initial_control, dtype=float)
    if u0.ndim <= 1:
        u0 = np.tile(np.atleast_1d(u0), (K, 1))
    if u0.shape != (K, spec.control_dim):
        raise DomainError(f"initial control has shape {u0.shape}, expected ({K}, {spec.control_dim})")
    return u0


def solve(
    spec: ProblemSpec,
    mu0: DiscreteMeasure,
    tau: float = 0.0,
    options: SolverOptions | dict[str, Any] | None = None,
) -> SolveReport:
    """Projected-gradient minimization of the cost from ``(tau, mu0)``.

    The stationarity measure is the L2 norm of ``u - P_U(u - grad)``. Costs
    are monotone because only Armijo-accepted steps are taken. Running out
    of iterations returns a report with ``converged=False``.
    """
    opts = options if isinstance(options, SolverOptions) else SolverOptions.from_dict(options or {})
    if not 0.0 <= tau <= spec.T:
        raise DomainError(f"tau={tau!r} is outside [0, {spec.T}]")
    if mu0.dim != spec.dim:
        raise DomainError(f"measure dimension {mu0.dim} != problem dimension {spec.dim}")
    K = opts.intervals if opts.intervals is not None else default_intervals(spec.T - tau)
    sub = opts.substeps
    u = ControlSignal(_initial_values(spec, opts, K), spec.T, tau)
    try:
        check_control(spec, u)
    except InvalidControlError as exc:
        raise DomainError(f"infeasible initial control: {exc}") from None

    dt = u.dt
    lo, hi = spec.U[:, 0], spec.U[:, 1]

    def pgnorm(vals: np.ndarray, g: np.ndarray) -> float:
        return float(np.sqrt(dt * np.sum((vals - np.clip(vals - g, lo, hi)) ** 2)))

    traj = controlled_flow(spec, mu0, u, sub)
    J = _cost(spec, traj)
    costs = [J]
    norms: list[float] = []
    step = opts.initial_step
    prev: tuple[np.ndarray, np.ndarray] | None = None
    converged = False
    it = 0

    if tau >= spec.T:
        # Empty horizon: nothing to optimize.
        return SolveReport(u, traj, J, [0.0], costs, 0, True, opts)

    while True:
        g = np.asarray(forward_backward_sweep(spec, mu0, u, None, sub, trajectory=traj).gradient)
        gn = pgnorm(u.values, g)
        norms.append(gn)
        if gn <= opts.grad_tol:
            converged = True
            break
        if it >= opts.max_iters:
            break
        vals = u.values
        if prev is not None and opts.bb_steps:
            s_vec = vals - prev[0]
            y_vec = g - prev[1]
            sy = float(np.sum(s_vec * y_vec))
            step = float(np.clip(np.sum(s_vec * s_vec) / sy, 1e-6, 1e6)) if sy > 0 else opts.initial_step
        accepted = False
        for _ in range(opts.max_backtracks):
            trial_vals = np.clip(vals - step * g, lo, hi)
            decrease = dt * float(np.sum(g * (trial_vals - vals)))
            trial = u.with_values(trial_vals)
            trial_traj = controlled_flow(spec, mu0, trial, sub)
            J_trial = _cost(spec, trial_traj)
            if J_trial <= J + opts.armijo * decrease:
                accepted = True
                break
            step *= opts.shrink
        if not accepted:
            log.info("line search stalled at iteration %d (gradient norm %.3e)", it, gn)
            break
        prev = (vals, g)
        u, traj, J = trial, trial_traj, J_trial
        costs.append(J)
        it += 1
        log.debug("iter %d cost %.12g step %.3e pgrad %.3e", it, J, step, gn)
    return SolveReport(u, traj, J, norms, costs, it, converged, opts)
