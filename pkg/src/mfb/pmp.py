"""State-costate dynamics, Hamiltonian and the maximum-principle checks.

Along a particle trajectory the state-costate measure is the graph
``(Id, r)_# mu(t)``, so it is stored as per-particle pairs ``(x_i, r_i)``
sharing the state weights, and its barycentric projection is just ``r``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from .errors import DomainError
from .measure import DiscreteMeasure
from .problem import ControlSignal, ProblemSpec, check_control, controlled_flow, DEFAULT_SUBSTEPS
from .dynamics import Trajectory

__all__ = [
    "StateCostateCloud",
    "Sweep",
    "hamiltonian",
    "forward_backward_sweep",
    "check_maximization",
    "check_sensitivity",
    "SensitivityResult",
    "random_directions",
]


@dataclass(frozen=True)
class StateCostateCloud:
    """Particles ``(x_i, r_i)`` with weights ``w_i`` at time ``t``."""

    t: float
    points: np.ndarray
    costates: np.ndarray
    weights: np.ndarray

    @property
    def state(self) -> DiscreteMeasure:
        """First marginal of the state-costate measure."""
        return DiscreteMeasure._trusted(self.points, self.weights)

    @property
    def barycentric(self) -> np.ndarray:
        return self.costates

    def as_measure(self) -> DiscreteMeasure:
        """The state-costate measure on ``R^{2d}``."""
        return DiscreteMeasure._trusted(np.hstack([self.points, self.costates]), self.weights)


@dataclass(frozen=True)
class Sweep(Sequence):
    """Forward trajectory with the backward costates on the same node grid."""

    trajectory: Trajectory
    costates: np.ndarray
    control: ControlSignal
    substeps: int
    gradient: np.ndarray  # per control interval, time-averaged -dH/du

    def __len__(self) -> int:
        return self.trajectory.n_nodes

    def __getitem__(self, k):  # type: ignore[override]
        if isinstance(k, slice):
            return [self[i] for i in range(*k.indices(len(self)))]
        tr = self.trajectory
        return StateCostateCloud(float(tr.times[k]), tr.positions[k], self.costates[k], tr.weights)

    @property
    def times(self) -> np.ndarray:
        return self.trajectory.times

    def node_control(self, k: int) -> np.ndarray:
        """Control acting on the step that leaves node ``k`` (the last step at ``T``)."""
        j = min(k, len(self) - 2) // self.substeps
        return self.control.values[j]

    def to_csv(self) -> str:
        tr = self.trajectory
        d = tr.positions.shape[2]
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(
            ["t", "particle_id"] + [f"x_{a + 1}" for a in range(d)] + [f"r_{a + 1}" for a in range(d)] + ["w"]
        )
        for t, X, R in zip(tr.times, tr.positions, self.costates):
            for i in range(X.shape[0]):
                writer.writerow(
                    [repr(float(t)), i]
                    + [repr(float(c)) for c in X[i]]
                    + [repr(float(c)) for c in R[i]]
                    + [repr(float(tr.weights[i]))]
                )
        return buf.getvalue()


def hamiltonian(spec: ProblemSpec, t: float, cloud: StateCostateCloud, u: Any) -> float:
    """``sum_i w_i <r_i, v(t, mu, u, x_i)> - L(mu, u)`` with ``mu`` the first marginal."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if u.shape != (spec.control_dim,) or not spec.contains(u):
        raise DomainError(f"control {u.tolist()} is not in U")
    return spec.hamiltonian(t, u, cloud.points, cloud.costates, cloud.weights)


def forward_backward_sweep(
    spec: ProblemSpec,
    mu0: DiscreteMeasure,
    u: ControlSignal,
    tau: float | None = None,
    substeps: int = DEFAULT_SUBSTEPS,
    trajectory: Trajectory | None = None,
) -> Sweep:
    """Forward particle flow, then backward RK4 for the costates.

    The costates start from ``r_i(T) = -grad phi(mu(T))(x_i)`` and follow the
    particle Hamiltonian flow ``r_k' = -(1/w_k) dH/dx_k``. States needed at
    half steps come from cubic Hermite interpolation of the stored nodes, so
    the sweep shares the forward nodes exactly and stays fourth order.

    The per-interval averages of ``-dH/du`` (Simpson rule on every step) are
    attached as ``gradient``; they are the L2 gradient of the cost.
    """
    if tau is not None and abs(tau - u.tau) > 1e-12:
        raise DomainError(f"control starts at {u.tau!r}, not at tau={tau!r}")
    check_control(spec, u)
    traj = trajectory if trajectory is not None else controlled_flow(spec, mu0, u, substeps)
    times, P, w = traj.times, traj.positions, traj.weights
    steps = times.shape[0] - 1
    R = np.empty_like(P)
    R[-1] = -spec.terminal_grad(P[-1], w)
    m = spec.control_dim
    grad = np.zeros((u.K, m))
    rhs = spec.costate_rhs
    dHdu = spec.hamiltonian_du

    r = R[-1]
    # Node quantities (velocity, costate rhs, -dH/du) are shared by the two
    # steps that meet at a node whenever both use the same control value.
    cache_j = -1
    V1 = k1 = g1 = None
    for k in range(steps - 1, -1, -1):
        j = k // substeps
        uk = u.values[j]
        t0, t1 = times[k], times[k + 1]
        h = t1 - t0
        tm = t0 + 0.5 * h
        X0, X1 = P[k], P[k + 1]
        if cache_j != j:
            V1 = spec._velocity_raw(t1, uk, X1, w)
            k1 = rhs(t1, uk, X1, r, w)
            g1 = dHdu(t1, uk, X1, r, w)
        V0 = spec._velocity_raw(t0, uk, X0, w)
        Xm = 0.5 * (X0 + X1) + (h / 8.0) * (V0 - V1)
        k2 = rhs(tm, uk, Xm, r - (0.5 * h) * k1, w)
        k3 = rhs(tm, uk, Xm, r - (0.5 * h) * k2, w)
        k4 = rhs(t0, uk, X0, r - h * k3, w)
        r_new = r - (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
        if not math.isfinite(r_new.sum()):
            raise FloatingPointError(f"costate blow-up at t={t0!r}")
        R[k] = r_new
        # Simpson on [t0, t1] for -dH/du; r at the midpoint by Hermite as well.
        rd0 = rhs(t0, uk, X0, r_new, w)
        rm = 0.5 * (r_new + r) + (h / 8.0) * (rd0 - k1)
        g0 = dHdu(t0, uk, X0, r_new, w)
        grad[j] -= (h / 6.0) * (g0 + 4.0 * dHdu(tm, uk, Xm, rm, w) + g1)
        r = r_new
        cache_j, V1, k1, g1 = j, V0, rd0, g0
    grad /= u.dt
    R.setflags(write=False)
    grad.setflags(write=False)
    return Sweep(traj, R, u, substeps, grad)


def check_maximization(
    spec: ProblemSpec,
    sweep: Sweep,
    u: ControlSignal | None = None,
    u_grid: int = 401,
) -> float:
    """Largest Hamiltonian gap ``max_{u'} H(u') - H(u(t))`` over the sweep nodes.

    ``u'`` ranges over a tensor grid with ``u_grid`` points per control
    coordinate; a vanishing gap is the discrete maximum condition.
    """
    u = sweep.control if u is None else u
    grid = spec.control_grid(u_grid)
    gap = -np.inf
    tr = sweep.trajectory
    w = tr.weights
    for k in range(len(sweep)):
        t = float(tr.times[k])
        X, R = tr.positions[k], sweep.costates[k]
        uk = sweep.node_control(k)
        h_ref = spec.hamiltonian(t, uk, X, R, w)
        h_best = max(spec.hamiltonian(t, g, X, R, w) for g in grid)
        gap = max(gap, h_best - h_ref)
    return float(gap)


def random_directions(
    rng: np.random.Generator,
    count: int,
    n: int,
    d: int,
    hs: Sequence[float] = (-1.0, 0.0, 1.0),
) -> list[tuple[float, np.ndarray]]:
    """``count`` tables ``F`` with ``sup |F| <= 1``, each paired with every ``h``."""
    out = []
    for _ in range(count):
        F = rng.uniform(-1.0, 1.0, size=(n, d))
        norms = np.linalg.norm(F, axis=1, keepdims=True)
        F = F / np.maximum(norms, 1.0)
        for h in hs:
            out.append((float(h), F))
    return out


@dataclass
class SensitivityResult:
    worst_slack: float
    per_time: dict[float, float]
    skipped: list[tuple[float, float, str]]
    probes: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "worst_slack": self.worst_slack,
            "per_time": {repr(k): v for k, v in self.per_time.items()},
            "skipped": [list(s) for s in self.skipped],
            "probes": self.probes,
        }


def check_sensitivity(
    spec: ProblemSpec,
    sweep: Sweep,
    directions: Sequence[tuple[float, Any]],
    epsilons: Sequence[float] | None = None,
    times: Sequence[float] | None = None,
    value_fn: Any = None,
) -> SensitivityResult:
    """Test ``(H(t, nu(t), u(t)), -r(t))`` against the value function's difference quotients.

    For every sampled node time, direction ``(h, F)`` and step ``eps`` the
    quotient ``[V(t + eps h, (Id + eps F)_# mu(t)) - V(t, mu(t))] / eps`` is
    formed; the slack of a direction is the smallest quotient over the
    ``eps`` grid minus ``delta h + <xi, F>``. Steps leaving ``[0, T]`` are
    skipped, as are directions with no admissible step.
    """
    from .analysis import DEFAULT_EPS_GRID, ValueFunction, superdifferential_test

    vf = value_fn if value_fn is not None else ValueFunction(spec)
    eps = tuple(DEFAULT_EPS_GRID if epsilons is None else epsilons)
    tr = sweep.trajectory
    if times is None:
        times = tr.times[:-1]
    per_time: dict[float, float] = {}
    skipped: list[tuple[float, float, str]] = []
    probes = 0
    for t in times:
        k = tr.node_index(float(t))
        cloud = sweep[k]
        delta = spec.hamiltonian(cloud.t, sweep.node_control(k), cloud.points, cloud.costates, cloud.weights)
        xi = -cloud.costates
        res = superdifferential_test(
            spec, cloud.t, cloud.state, delta, xi, directions, eps, value_fn=vf, reduce="min"
        )
        per_time[float(tr.times[k])] = res.worst_slack
        skipped.extend((float(tr.times[k]), h, why) for h, why in res.skipped)
        probes += res.probes
    worst = max(per_time.values()) if per_time else -np.inf
    return SensitivityResult(float(worst), per_time, skipped, probes)
