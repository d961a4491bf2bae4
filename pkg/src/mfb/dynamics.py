"""Particle flows of non-local continuity equations.

The solution of ``d/dt mu + div(v(t, mu) mu) = 0`` started from a particle
cloud is the pushforward of the cloud by its characteristic flow, so it is
enough to integrate ``x_i' = v(t, mu(t), x_i)`` with the weights frozen.
"""

from __future__ import annotations

import csv
import io
import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from .errors import BlowUpError, DomainError
from .measure import DiscreteMeasure

__all__ = ["Trajectory", "flow", "integrate", "uniform_grid", "VelocityField", "RunningCost"]

# v(t, mu, x) -> (n, d) velocities at the rows of x; mu is the current cloud.
VelocityField = Callable[[float, DiscreteMeasure, np.ndarray], np.ndarray]
# L(t, mu) -> running cost rate, integrated together with the particles.
RunningCost = Callable[[float, DiscreteMeasure], float]

DEFAULT_STEPS_PER_UNIT = 200


@dataclass(frozen=True)
class Trajectory:
    """Particle positions on a time grid; weights are shared by all nodes.

    ``positions[k, i]`` is the image of particle ``i`` under the flow from
    ``times[0]`` to ``times[k]``. ``running[k]`` is the accumulated running
    cost on ``[times[0], times[k]]`` (zeros when none was integrated).
    """

    times: np.ndarray
    positions: np.ndarray
    weights: np.ndarray
    running: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.times.shape[0]

    def snapshot(self, k: int) -> DiscreteMeasure:
        return DiscreteMeasure._trusted(self.positions[k], self.weights)

    @property
    def snapshots(self) -> list[DiscreteMeasure]:
        return [self.snapshot(k) for k in range(self.n_nodes)]

    @property
    def initial(self) -> DiscreteMeasure:
        return self.snapshot(0)

    @property
    def final(self) -> DiscreteMeasure:
        return self.snapshot(self.n_nodes - 1)

    def support_radii(self) -> np.ndarray:
        return np.max(np.linalg.norm(self.positions, axis=2), axis=1)

    def node_index(self, t: float, atol: float = 1e-9) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > atol:
            raise DomainError(f"t={t!r} is not a node of the trajectory grid")
        return k

    def concat(self, other: Trajectory) -> Trajectory:
        """Append a trajectory that starts where this one ends."""
        if abs(other.times[0] - self.times[-1]) > 1e-12:
            raise DomainError("trajectories are not contiguous in time")
        return Trajectory(
            np.concatenate([self.times, other.times[1:]]),
            np.concatenate([self.positions, other.positions[1:]]),
            self.weights,
            np.concatenate([self.running, self.running[-1] + other.running[1:]]),
        )

    def to_csv(self) -> str:
        d = self.positions.shape[2]
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t", "particle_id"] + [f"x_{k + 1}" for k in range(d)] + ["w"])
        for t, X in zip(self.times, self.positions):
            for i, (x, w) in enumerate(zip(X, self.weights)):
                writer.writerow([repr(float(t)), i] + [repr(float(c)) for c in x] + [repr(float(w))])
        return buf.getvalue()


# Overflow is detected after each step and reported as BlowUpError.
@np.errstate(over="ignore", invalid="ignore")
def integrate(
    field: Callable[[float, np.ndarray, int], np.ndarray],
    X0: np.ndarray,
    times: np.ndarray,
    rate: Callable[[float, np.ndarray, int], float] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Classical RK4 for ``X' = field(t, X, k)`` on the node grid ``times``.

    ``k`` is the index of the step being taken, so piecewise data (frozen
    controls) can be looked up without evaluating at ambiguous switch times.
    ``rate`` is integrated alongside as an augmented scalar state. Returns
    the positions at every node and the accumulated integral of ``rate``.
    """
    steps = times.shape[0] - 1
    X = np.array(X0, dtype=float)
    positions = np.empty((steps + 1,) + X.shape)
    positions[0] = X
    running = np.zeros(steps + 1)
    c = 0.0
    for k in range(steps):
        t = times[k]
        h = times[k + 1] - t
        tm = t + 0.5 * h
        k1 = field(t, X, k)
        X2 = X + (0.5 * h) * k1
        k2 = field(tm, X2, k)
        X3 = X + (0.5 * h) * k2
        k3 = field(tm, X3, k)
        X4 = X + h * k3
        k4 = field(t + h, X4, k)
        if rate is not None:
            c += h / 6.0 * (rate(t, X, k) + 2.0 * (rate(tm, X2, k) + rate(tm, X3, k)) + rate(t + h, X4, k))
            running[k + 1] = c
        X = X + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
        # One reduction per step catches inf/nan produced by any stage.
        if not math.isfinite(X.sum()):
            _locate_blowup(field, times, positions[k], k, X)
        positions[k + 1] = X
    return positions, running


def _locate_blowup(field, times, X, k, X_new) -> None:
    V = np.broadcast_to(field(times[k], X, k), X.shape)
    bad = np.argwhere(~np.isfinite(V))
    if bad.size == 0:
        bad = np.argwhere(~np.isfinite(np.broadcast_to(X_new, X.shape)))
    raise BlowUpError(float(times[k]), int(bad[0, 0]))


def uniform_grid(tau: float, T: float, steps: int) -> np.ndarray:
    times = tau + (T - tau) * (np.arange(steps + 1) / steps)
    times[-1] = T
    return times


def flow(
    v: VelocityField,
    mu0: DiscreteMeasure,
    tau: float,
    T: float,
    steps: int | None = None,
    running_cost: RunningCost | None = None,
) -> Trajectory:
    """Integrate the non-local flow on ``[tau, T]`` with classical RK4.

    Every stage evaluates the field on its own intermediate cloud, so the
    interaction terms are fully coupled. ``T < tau`` integrates backwards.
    ``steps`` defaults to 200 per unit time (at least one).
    """
    if steps is None:
        steps = max(1, int(np.ceil(DEFAULT_STEPS_PER_UNIT * abs(T - tau) - 1e-9)))
    if steps < 1:
        raise DomainError("steps must be a positive integer")
    w = mu0.weights
    times = uniform_grid(tau, T, steps)

    def field(t: float, Y: np.ndarray, k: int) -> np.ndarray:
        return np.asarray(v(t, DiscreteMeasure._trusted(Y, w), Y), dtype=float)

    rate = None
    if running_cost is not None:
        def rate(t: float, Y: np.ndarray, k: int) -> float:
            return float(running_cost(t, DiscreteMeasure._trusted(Y, w)))

    positions, running = integrate(field, mu0.points, times, rate)
    return _freeze_trajectory(times, positions, w, running)


def _freeze_trajectory(times, positions, w, running) -> Trajectory:
    for a in (times, positions, running):
        a.setflags(write=False)
    return Trajectory(times, positions, w, running)
