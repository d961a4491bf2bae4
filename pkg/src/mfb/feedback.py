"""Set-valued optimal feedback through lower Dini derivatives of the value function.

A control ``u`` is admitted at ``(t, mu)`` when

    residual(u) = D^-V(t, mu)(1, v(t, mu, u)) + L(mu, u) <= tol,

where ``D^-V`` is the joint time-measure lower derivative of
:func:`mfb.analysis.dini_lower_derivative`. The feedback set is kept as its
control preimage; the induced velocity tables are attached.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .analysis import DEFAULT_EPS_GRID, ValueFunction, dini_lower_derivative
from .dynamics import Trajectory
from .errors import AnalysisError, DomainError, SelectionError
from .measure import DiscreteMeasure
from .problem import DEFAULT_SUBSTEPS, ControlSignal, ProblemSpec, controlled_flow

__all__ = [
    "DEFAULT_FEEDBACK_TOL",
    "FeedbackSet",
    "feedback_set",
    "feedback_residual",
    "FeedbackVerification",
    "verify_optimality_via_feedback",
    "ClosedLoopResult",
    "closed_loop_simulate",
    "select_control",
    "ClosednessProbe",
    "graph_closedness_probe",
]

DEFAULT_FEEDBACK_TOL = 1e-3
DEFAULT_GRID_POINTS = 9
DEFAULT_REFINE = 4


@dataclass(frozen=True)
class FeedbackSet:
    """Admitted controls at ``(t, mu)`` with their residuals.

    ``evaluated`` and ``evaluated_residuals`` list every grid control that
    was tested, admitted or not. ``grid_step`` is the finest spacing used.
    """

    t: float
    digest: str
    controls: np.ndarray
    residuals: np.ndarray
    velocities: tuple
    tol: float
    grid_step: float
    evaluated: np.ndarray
    evaluated_residuals: np.ndarray

    def __len__(self) -> int:
        return self.controls.shape[0]

    @property
    def cardinality(self) -> int:
        return len(self)

    @property
    def empty(self) -> bool:
        return len(self) == 0

    def distance(self, u: Any) -> float:
        """Euclidean distance from ``u`` to the admitted controls (inf when empty)."""
        if self.empty:
            return float("inf")
        return float(np.min(np.linalg.norm(self.controls - np.asarray(u, dtype=float), axis=1)))

    def to_dict(self) -> dict[str, Any]:
        return {
            "t": self.t,
            "digest": self.digest,
            "controls": self.controls.tolist(),
            "residuals": self.residuals.tolist(),
            "tol": self.tol,
            "grid_step": self.grid_step,
        }


def feedback_residual(
    spec: ProblemSpec,
    t: float,
    mu: DiscreteMeasure,
    u: Any,
    eps_grid: Sequence[float] | None = None,
    value_fn: ValueFunction | None = None,
) -> float:
    """``D^-V(t, mu)(1, v(t, mu, u)) + L(mu, u)``; nonnegative up to discretization."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    F = np.array(spec.velocity(t, u, mu.points, mu.weights))
    d = dini_lower_derivative(spec, t, mu, 1.0, F, eps_grid, value_fn)
    return d + spec.running_cost(u, mu.points, mu.weights)


def _box_grid(lo: np.ndarray, hi: np.ndarray, points: int) -> tuple[np.ndarray, float]:
    axes = [np.linspace(a, b, points) if b > a else np.array([a]) for a, b in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    step = max((float(ax[1] - ax[0]) for ax in axes if ax.size > 1), default=0.0)
    return np.stack([g.ravel() for g in mesh], axis=1), step


def feedback_set(
    spec: ProblemSpec,
    t: float,
    mu: DiscreteMeasure,
    u_grid: int | np.ndarray = DEFAULT_GRID_POINTS,
    tol: float = DEFAULT_FEEDBACK_TOL,
    *,
    refine: int | None = None,
    eps_grid: Sequence[float] | None = None,
    value_fn: ValueFunction | None = None,
) -> FeedbackSet:
    """Admitted controls on a box grid of ``U``.

    ``u_grid`` is either the number of points per control coordinate or an
    explicit ``(G, m)`` array. With an integer grid, ``refine`` further
    levels zoom in: each places the same number of points on the box of
    half-width one previous spacing around the current best residual, so
    the spacing shrinks by ``(points - 1) / 2`` per level. Admitted controls
    from every level are pooled.
    """
    if not 0.0 <= t < spec.T:
        raise DomainError(f"feedback needs t in [0, {spec.T}), got {t!r}")
    if not tol > 0:
        raise DomainError("tol must be positive")
    vf = value_fn if value_fn is not None else ValueFunction(spec)
    lo, hi = spec.U[:, 0], spec.U[:, 1]
    seen: dict[tuple[float, ...], float] = {}
    order: list[tuple[float, ...]] = []

    def run(grid: np.ndarray) -> None:
        for g in grid:
            key = tuple(float(c) for c in g)
            if key in seen:
                continue
            try:
                seen[key] = feedback_residual(spec, t, mu, g, eps_grid, vf)
            except AnalysisError:
                seen[key] = float("inf")
            order.append(key)

    if isinstance(u_grid, (int, np.integer)):
        points = int(u_grid)
        if points < 2:
            raise DomainError("u_grid needs at least 2 points per coordinate")
        levels = DEFAULT_REFINE if refine is None else int(refine)
        grid, step = _box_grid(lo, hi, points)
        run(grid)
        for _ in range(levels):
            if step <= 0:
                break
            best = np.array(min(order, key=lambda k: (seen[k], k)))
            grid, new_step = _box_grid(np.maximum(best - step, lo), np.minimum(best + step, hi), points)
            run(grid)
            step = new_step if new_step > 0 else step
    else:
        grid = np.atleast_2d(np.asarray(u_grid, dtype=float))
        if grid.shape[1] != spec.control_dim:
            raise DomainError(f"control grid has {grid.shape[1]} columns, expected {spec.control_dim}")
        if not all(spec.contains(g) for g in grid):
            raise DomainError("control grid leaves U")
        run(grid)
        step = _grid_spacing(grid)

    evaluated = np.array(order, dtype=float).reshape(-1, spec.control_dim)
    res = np.array([seen[k] for k in order])
    keep = res <= tol
    controls = evaluated[keep]
    vel = tuple(np.array(spec.velocity(t, c, mu.points, mu.weights)) for c in controls)
    for a in (controls, res, evaluated):
        a.setflags(write=False)
    return FeedbackSet(float(t), mu.digest(), controls, res[keep], vel, float(tol), float(step), evaluated, res)


def _grid_spacing(grid: np.ndarray) -> float:
    steps = []
    for a in range(grid.shape[1]):
        vals = np.unique(grid[:, a])
        if vals.size > 1:
            steps.append(float(np.min(np.diff(vals))))
    return max(steps, default=0.0)


# --- selection --------------------------------------------------------------

SelectionRule = Callable[[FeedbackSet, "np.ndarray | None"], np.ndarray]


def select_control(fs: FeedbackSet, rule: str | SelectionRule = "min_norm", previous: np.ndarray | None = None) -> np.ndarray:
    """Pick one admitted control.

    ``min_norm`` takes the smallest Euclidean norm with lexicographic ties,
    ``first`` the first admitted grid point, ``closest_to_previous`` the
    nearest to ``previous`` (``min_norm`` when there is none).
    """
    if fs.empty:
        raise SelectionError(-1, fs.t)
    C = fs.controls
    if callable(rule):
        return np.asarray(rule(fs, previous), dtype=float)
    if rule == "first":
        return C[0].copy()
    if rule == "closest_to_previous" and previous is not None:
        dist = np.linalg.norm(C - previous, axis=1)
    elif rule in ("min_norm", "closest_to_previous"):
        dist = np.linalg.norm(C, axis=1)
    else:
        raise DomainError(f"unknown selection rule {rule!r}")
    # lexsort: last key is primary.
    order = np.lexsort(tuple(C[:, a] for a in range(C.shape[1] - 1, -1, -1)) + (dist,))
    return C[order[0]].copy()


# --- optimality verification ------------------------------------------------


@dataclass
class FeedbackVerification:
    passed: bool
    residuals: dict[float, float]
    tol: float

    @property
    def worst(self) -> float:
        return max(self.residuals.values(), default=0.0)

    def to_dict(self) -> dict[str, Any]:
        return {
            "passed": self.passed,
            "tol": self.tol,
            "worst": self.worst,
            "residuals": {repr(k): v for k, v in self.residuals.items()},
        }


def verify_optimality_via_feedback(
    spec: ProblemSpec,
    trajectory: Trajectory,
    u: ControlSignal,
    time_samples: Sequence[float] | None = None,
    tol: float = 5e-3,
    eps_grid: Sequence[float] | None = None,
    value_fn: ValueFunction | None = None,
) -> FeedbackVerification:
    """Residual of the pair's own control at sampled node times before ``T``."""
    vf = value_fn if value_fn is not None else ValueFunction(spec)
    times = trajectory.times
    if time_samples is None:
        idx = np.unique(np.linspace(0, trajectory.n_nodes - 2, 10).round().astype(int))
    else:
        idx = np.array([trajectory.node_index(float(s)) for s in time_samples])
    residuals: dict[float, float] = {}
    for k in idx:
        t = float(times[k])
        if t >= spec.T:
            continue
        residuals[t] = feedback_residual(spec, t, trajectory.snapshot(int(k)), u.value_at(t), eps_grid, vf)
    passed = all(r <= tol for r in residuals.values())
    return FeedbackVerification(passed, residuals, float(tol))


# --- closed loop ------------------------------------------------------------


@dataclass
class ClosedLoopResult:
    trajectory: Trajectory
    control: ControlSignal
    cost: float
    trace: list[tuple[float, np.ndarray, float, int]] = field(default_factory=list)

    def to_csv(self) -> str:
        m = self.control.values.shape[1]
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t"] + [f"u_{a + 1}" for a in range(m)] + ["residual", "cardinality"])
        for t, u, res, card in self.trace:
            writer.writerow([repr(float(t))] + [repr(float(c)) for c in u] + [repr(float(res)), card])
        return buf.getvalue()


def closed_loop_simulate(
    spec: ProblemSpec,
    mu0: DiscreteMeasure,
    tau: float = 0.0,
    rule: str | SelectionRule = "min_norm",
    steps: int | None = None,
    *,
    u_grid: int | np.ndarray = DEFAULT_GRID_POINTS,
    refine: int | None = None,
    tol: float = DEFAULT_FEEDBACK_TOL,
    substeps: int = DEFAULT_SUBSTEPS,
    eps_grid: Sequence[float] | None = None,
    value_fn: ValueFunction | None = None,
) -> ClosedLoopResult:
    """Feedback loop: select from the feedback set at each node, hold it for one step.

    ``steps`` defaults to 10 per unit time. Each step is integrated with
    ``substeps`` RK4 steps under the held control.
    """
    if not 0.0 <= tau < spec.T:
        raise DomainError(f"tau={tau!r} must lie in [0, {spec.T})")
    vf = value_fn if value_fn is not None else ValueFunction(spec)
    if steps is None:
        steps = max(1, int(np.ceil(10 * (spec.T - tau) - 1e-9)))
    nodes = np.linspace(tau, spec.T, steps + 1)
    mu = mu0
    traj: Trajectory | None = None
    values = []
    trace = []
    prev = None
    for k in range(steps):
        t0, t1 = float(nodes[k]), float(nodes[k + 1])
        fs = feedback_set(spec, t0, mu, u_grid, tol, refine=refine, eps_grid=eps_grid, value_fn=vf)
        if fs.empty:
            raise SelectionError(k, t0)
        uk = select_control(fs, rule, prev)
        res = float(fs.residuals[np.argmin(np.linalg.norm(fs.controls - uk, axis=1))])
        trace.append((t0, uk, res, fs.cardinality))
        piece = controlled_flow(spec, mu, ControlSignal(uk[None, :], t1, t0), substeps)
        traj = piece if traj is None else traj.concat(piece)
        mu = piece.final
        values.append(uk)
        prev = uk
    assert traj is not None
    control = ControlSignal(np.array(values), spec.T, tau)
    cost = float(traj.running[-1]) + spec.terminal_cost(traj.positions[-1], traj.weights)
    return ClosedLoopResult(traj, control, cost, trace)


# --- graph closedness -------------------------------------------------------


@dataclass
class ClosednessProbe:
    distances: list[float]
    grid_step: float
    limit_cardinality: int

    @property
    def worst(self) -> float:
        return max(self.distances, default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst <= self.grid_step + 1e-12

    def to_dict(self) -> dict[str, Any]:
        return {
            "distances": self.distances,
            "grid_step": self.grid_step,
            "limit_cardinality": self.limit_cardinality,
            "worst": self.worst,
            "passed": self.passed,
        }


def graph_closedness_probe(
    spec: ProblemSpec,
    t: float,
    mu: DiscreteMeasure,
    u_grid: int | np.ndarray,
    tol: float,
    seed: int = 0,
    levels: int = 3,
    scale: float = 0.05,
    eps_grid: Sequence[float] | None = None,
    value_fn: ValueFunction | None = None,
) -> ClosednessProbe:
    """Distances from ``G(t_k, mu_k)`` to ``G(t, mu)`` along a refining sequence.

    ``t_k = t + s_k`` and ``mu_k = (Id + s_k G)_# mu`` with a fixed random
    table ``sup |G| <= 1`` and ``s_k = scale 2^-k``. Closedness of the graph
    predicts every admitted control near the limit lies within one grid step
    of the limit set. An explicit grid with ``refine=0`` keeps all sets on
    the same lattice.
    """
    vf = value_fn if value_fn is not None else ValueFunction(spec)
    rng = np.random.Generator(np.random.Philox(seed))
    G = rng.uniform(-1.0, 1.0, size=mu.points.shape)
    G /= np.maximum(np.linalg.norm(G, axis=1, keepdims=True), 1.0)
    limit = feedback_set(spec, t, mu, u_grid, tol, refine=0, eps_grid=eps_grid, value_fn=vf)
    dists = []
    for k in range(levels):
        s = scale * 2.0**-k
        tk = min(t + s, spec.T - max(DEFAULT_EPS_GRID) - 1e-9) if t + s >= spec.T else t + s
        fk = feedback_set(spec, tk, mu.with_points(mu.points + s * G), u_grid, tol, refine=0, eps_grid=eps_grid, value_fn=vf)
        dists.append(max((limit.distance(c) for c in fk.controls), default=0.0))
    return ClosednessProbe(dists, limit.grid_step, limit.cardinality)
