"""Bolza problems on particle clouds.

A :class:`ProblemSpec` assembles the controlled non-local velocity

    v(t, mu, u, x) = sum_b b(t, u, x) + sum_j w_j K(t, u, x, x_j)

the running cost

    L(mu, u) = c(u) + sum_i w_i l(x_i) + sum_ij w_i w_j W(x_i, x_j)

and the terminal cost ``phi(mu) = sum_i w_i g(x_i) + kappa Var(mu)`` out of
the blocks in :mod:`mfb.blocks`, together with the particle-level gradients
needed by the costate equations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import blocks as _blocks
from .dynamics import Trajectory, _freeze_trajectory, integrate, uniform_grid
from .errors import DomainError, InvalidControlError
from .measure import DiscreteMeasure, moment

__all__ = [
    "ProblemSpec",
    "ControlSignal",
    "CostBreakdown",
    "HypothesisReport",
    "evaluate_cost",
    "validate_hypotheses",
    "check_derivatives",
    "DEFAULT_INTERVALS_PER_UNIT",
    "DEFAULT_SUBSTEPS",
]

DEFAULT_INTERVALS_PER_UNIT = 40
DEFAULT_SUBSTEPS = 5
CONTROL_SLACK = 1e-12


def _tuple(items: Any) -> tuple:
    return tuple(items) if items is not None else ()


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Dynamics and cost blocks of a mean-field Bolza problem.

    ``U`` is the control box given as an ``(m, 2)`` array of bounds.
    """

    dim: int
    control_dim: int
    T: float
    U: Any
    drifts: tuple = ()
    kernels: tuple = ()
    control_costs: tuple = ()
    state_costs: tuple = ()
    interactions: tuple = ()
    terminals: tuple = ()
    variance_penalty: float = 0.0
    name: str = "problem"

    def __post_init__(self) -> None:
        U = np.array(self.U, dtype=float).reshape(-1, 2)
        if U.shape[0] != self.control_dim:
            raise DomainError(f"control box has {U.shape[0]} rows, expected {self.control_dim}")
        if np.any(U[:, 0] > U[:, 1]):
            raise DomainError("control box bounds must satisfy a <= b")
        if not self.T > 0:
            raise DomainError("horizon T must be positive")
        U.setflags(write=False)
        object.__setattr__(self, "U", U)
        for name in ("drifts", "kernels", "control_costs", "state_costs", "interactions", "terminals"):
            object.__setattr__(self, name, _tuple(getattr(self, name)))

    # -- control box ---------------------------------------------------------

    def contains(self, u: np.ndarray) -> bool:
        u = np.asarray(u, dtype=float)
        return bool(np.all(u >= self.U[:, 0] - CONTROL_SLACK) and np.all(u <= self.U[:, 1] + CONTROL_SLACK))

    def project(self, u: np.ndarray) -> np.ndarray:
        return np.clip(u, self.U[:, 0], self.U[:, 1])

    def default_control(self) -> np.ndarray:
        zero = np.zeros(self.control_dim)
        return zero if self.contains(zero) else self.U.mean(axis=1)

    def control_grid(self, points: int) -> np.ndarray:
        """Tensor grid of ``points`` values per control coordinate, shape ``(G, m)``."""
        axes = [np.linspace(a, b, points) for a, b in self.U]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=1)

    # -- velocity ------------------------------------------------------------

    def velocity(self, t: float, u: np.ndarray, X: np.ndarray, w: np.ndarray) -> np.ndarray:
        """``v(t, mu, u, x_i)`` at the particles, shape ``(n, d)``."""
        V = self._velocity_raw(t, u, X, w)
        return V if V.shape == X.shape else np.broadcast_to(V, X.shape)

    def _velocity_raw(self, t: float, u: np.ndarray, X: np.ndarray, w: np.ndarray) -> np.ndarray:
        # Broadcastable to (n, d); integrators only combine it with X.
        V = None
        for b in self.drifts:
            val = b.value(t, u, X)
            V = val if V is None else V + val
        for K in self.kernels:
            val = np.einsum("j,ijk->ik", w, K.value(t, u, X, X))
            V = val if V is None else V + val
        return np.zeros_like(X) if V is None else V

    def velocity_jac_u(self, t: float, u: np.ndarray, X: np.ndarray, w: np.ndarray) -> np.ndarray:
        J = np.zeros(X.shape + (self.control_dim,))
        for b in self.drifts:
            J = J + b.jac_u(t, u, X)
        for K in self.kernels:
            J = J + np.einsum("j,ijab->iab", w, K.jac_u(t, u, X, X))
        return J

    def velocity_field(self, u: np.ndarray):
        """The field ``(t, mu, x) -> v(t, mu, u, x)`` for a frozen control."""
        u = np.asarray(u, dtype=float)

        def v(t: float, mu: DiscreteMeasure, X: np.ndarray) -> np.ndarray:
            if X is mu.points:
                return self.velocity(t, u, X, mu.weights)
            return self._velocity_at(t, u, mu, X)

        return v

    def _velocity_at(self, t: float, u: np.ndarray, mu: DiscreteMeasure, X: np.ndarray) -> np.ndarray:
        # Field of the cloud mu evaluated at arbitrary query points.
        V = np.zeros_like(X)
        for b in self.drifts:
            V += b.value(t, u, X)
        for K in self.kernels:
            V += np.einsum("j,ijk->ik", mu.weights, K.value(t, u, X, mu.points))
        return V

    # -- costs ---------------------------------------------------------------

    def control_cost(self, u: np.ndarray) -> float:
        return float(sum(c.value(u) for c in self.control_costs))

    def control_cost_grad(self, u: np.ndarray) -> np.ndarray:
        g = np.zeros(self.control_dim)
        for c in self.control_costs:
            g += c.grad(u)
        return g

    def state_cost(self, X: np.ndarray, w: np.ndarray) -> float:
        total = 0.0
        for l in self.state_costs:
            total += float(w @ l.value(X))
        for W in self.interactions:
            total += float(w @ W.value(X, X) @ w)
        return total

    def running_cost(self, u: np.ndarray, X: np.ndarray, w: np.ndarray) -> float:
        return self.control_cost(u) + self.state_cost(X, w)

    def state_cost_grad(self, X: np.ndarray, w: np.ndarray) -> np.ndarray:
        """Wasserstein gradient of ``mu -> L(mu, u)`` at the particles."""
        G = np.zeros_like(X)
        for l in self.state_costs:
            G = G + l.grad(X)
        for W in self.interactions:
            G = G + np.einsum("j,kja->ka", w, W.grad_x(X, X)) + np.einsum("j,jka->ka", w, W.grad_y(X, X))
        return G

    def terminal_cost(self, X: np.ndarray, w: np.ndarray) -> float:
        total = 0.0
        for g in self.terminals:
            total += float(w @ g.value(X))
        if self.variance_penalty:
            C = X - w @ X
            total += self.variance_penalty * float(w @ np.einsum("ij,ij->i", C, C))
        return total

    def terminal_grad(self, X: np.ndarray, w: np.ndarray) -> np.ndarray:
        """Wasserstein gradient of ``phi`` at the particles."""
        G = np.zeros_like(X)
        for g in self.terminals:
            G = G + g.grad(X)
        if self.variance_penalty:
            G = G + 2.0 * self.variance_penalty * (X - w @ X)
        return G

    # -- Hamiltonian calculus ------------------------------------------------

    def hamiltonian(self, t: float, u: np.ndarray, X: np.ndarray, R: np.ndarray, w: np.ndarray) -> float:
        V = self._velocity_raw(t, u, X, w)
        return float(w @ (R * V).sum(axis=1)) - self.running_cost(u, X, w)

    def hamiltonian_du(self, t: float, u: np.ndarray, X: np.ndarray, R: np.ndarray, w: np.ndarray) -> np.ndarray:
        g = -self.control_cost_grad(u)
        rbar = None
        for b in self.drifts:
            if b.x_independent:
                if rbar is None:
                    rbar = w @ R
                g += rbar @ b.jac_u0(t, u)
            else:
                g += np.einsum("i,ia,iam->m", w, R, b.jac_u(t, u, X))
        for K in self.kernels:
            g += np.einsum("i,j,ia,ijam->m", w, w, R, K.jac_u(t, u, X, X))
        return g

    def costate_rhs(self, t: float, u: np.ndarray, X: np.ndarray, R: np.ndarray, w: np.ndarray) -> np.ndarray:
        """Particle costate velocity ``r_k' = -(1/w_k) dH/dx_k``."""
        out = self.state_cost_grad(X, w) if (self.state_costs or self.interactions) else np.zeros_like(X)
        for b in self.drifts:
            if not b.x_independent:
                out -= np.einsum("kab,ka->kb", b.jac_x(t, u, X), R)
        for K in self.kernels:
            Jx = np.einsum("j,kjab->kab", w, K.jac_x(t, u, X, X))
            out -= np.einsum("kab,ka->kb", Jx, R)
            out -= np.einsum("i,ikab,ia->kb", w, K.jac_y(t, u, X, X), R)
        return out

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "dim": self.dim,
            "control_dim": self.control_dim,
            "T": self.T,
            "U": self.U.tolist(),
            "blocks": {
                "drift": [b.to_dict() for b in self.drifts],
                "kernel": [b.to_dict() for b in self.kernels],
                "control_cost": [b.to_dict() for b in self.control_costs],
                "state_cost": [b.to_dict() for b in self.state_costs],
                "interaction": [b.to_dict() for b in self.interactions],
                "terminal": [b.to_dict() for b in self.terminals],
                "variance_penalty": self.variance_penalty,
            },
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ProblemSpec:
        unknown_top = set(data) - {"name", "dim", "control_dim", "T", "U", "blocks"}
        if unknown_top:
            raise DomainError(f"unknown problem key(s): {sorted(unknown_top)}")
        blk = data.get("blocks", {})
        unknown = set(blk) - {"drift", "kernel", "control_cost", "state_cost", "interaction", "terminal", "variance_penalty"}
        if unknown:
            raise DomainError(f"unknown block group(s): {sorted(unknown)}")
        make = _blocks.block_from_dict
        return cls(
            dim=int(data["dim"]),
            control_dim=int(data["control_dim"]),
            T=float(data["T"]),
            U=data["U"],
            drifts=[make(b) for b in blk.get("drift", [])],
            kernels=[make(b) for b in blk.get("kernel", [])],
            control_costs=[make(b) for b in blk.get("control_cost", [])],
            state_costs=[make(b) for b in blk.get("state_cost", [])],
            interactions=[make(b) for b in blk.get("interaction", [])],
            terminals=[make(b) for b in blk.get("terminal", [])],
            variance_penalty=float(blk.get("variance_penalty", 0.0)),
            name=str(data.get("name", "problem")),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass(frozen=True)
class ControlSignal:
    """Piecewise-constant control on ``K`` uniform intervals of ``[tau, T]``."""

    values: Any
    T: float
    tau: float = 0.0

    def __post_init__(self) -> None:
        vals = np.array(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.ndim != 2 or vals.shape[0] == 0:
            raise DomainError("control values must have shape (K, m) with K >= 1")
        if not self.tau <= self.T:
            raise DomainError("control grid needs tau <= T")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def constant(cls, u: Any, T: float, tau: float = 0.0, intervals: int | None = None) -> ControlSignal:
        K = intervals if intervals is not None else default_intervals(T - tau)
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return cls(np.tile(u, (K, 1)), T, tau)

    @property
    def K(self) -> int:
        return self.values.shape[0]

    @property
    def dt(self) -> float:
        return (self.T - self.tau) / self.K

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(self.tau, self.T, self.K + 1)

    def interval_index(self, t: float) -> int:
        """Index of the interval containing ``t`` (right-continuous; ``T`` maps to the last)."""
        if self.K == 1 or self.dt == 0:
            return 0
        k = int(np.floor((t - self.tau) / self.dt + 1e-9))
        return min(max(k, 0), self.K - 1)

    def value_at(self, t: float) -> np.ndarray:
        return self.values[self.interval_index(t)]

    def with_values(self, values: np.ndarray) -> ControlSignal:
        return ControlSignal(values, self.T, self.tau)

    def to_dict(self) -> dict[str, Any]:
        return {"tau": self.tau, "T": self.T, "values": self.values.tolist()}


def default_intervals(horizon: float) -> int:
    return max(1, int(np.ceil(DEFAULT_INTERVALS_PER_UNIT * horizon - 1e-9)))


@dataclass(frozen=True)
class CostBreakdown:
    total: float
    running: float
    terminal: float
    trajectory: Trajectory


def _substeps(u: ControlSignal, steps: int | None) -> int:
    if steps is None:
        return DEFAULT_SUBSTEPS
    if steps < u.K or steps % u.K:
        raise DomainError(f"steps={steps} must be a positive multiple of the {u.K} control intervals")
    return steps // u.K


def check_control(spec: ProblemSpec, u: ControlSignal) -> None:
    if u.values.shape[1] != spec.control_dim:
        raise InvalidControlError(f"control has dimension {u.values.shape[1]}, expected {spec.control_dim}")
    for k, val in enumerate(u.values):
        if not spec.contains(val):
            raise InvalidControlError(f"control value {val.tolist()} on interval {k} lies outside U")


def controlled_flow(spec: ProblemSpec, mu0: DiscreteMeasure, u: ControlSignal, substeps: int = DEFAULT_SUBSTEPS) -> Trajectory:
    """RK4 flow of ``v(t, mu, u(t), x)`` with ``substeps`` steps per control interval.

    The running cost is carried as an augmented state of the same scheme.
    """
    w = mu0.weights
    times = uniform_grid(u.tau, u.T, u.K * substeps)
    values = u.values

    def field(t: float, X: np.ndarray, k: int) -> np.ndarray:
        return spec._velocity_raw(t, values[k // substeps], X, w)

    costs = [spec.control_cost(val) for val in values]
    if spec.state_costs or spec.interactions:
        def rate(t: float, X: np.ndarray, k: int) -> float:
            return costs[k // substeps] + spec.state_cost(X, w)
    else:
        def rate(t: float, X: np.ndarray, k: int) -> float:
            return costs[k // substeps]

    positions, running = integrate(field, mu0.points, times, rate)
    return _freeze_trajectory(times, positions, w, running)


def evaluate_cost(
    spec: ProblemSpec,
    mu0: DiscreteMeasure,
    u: ControlSignal,
    tau: float | None = None,
    steps: int | None = None,
) -> CostBreakdown:
    """Cost of ``u`` from ``mu0`` at time ``tau``, with the RK4 trajectory.

    The running cost is integrated as an extra state of the same RK4 scheme.
    ``steps`` is the total number of RK4 steps (a multiple of the control
    intervals; five per interval by default).
    """
    if tau is not None and abs(tau - u.tau) > 1e-12:
        raise DomainError(f"control starts at {u.tau!r}, not at tau={tau!r}")
    if mu0.dim != spec.dim:
        raise DomainError(f"measure dimension {mu0.dim} != problem dimension {spec.dim}")
    check_control(spec, u)
    sub = _substeps(u, steps)
    traj = controlled_flow(spec, mu0, u, sub)
    running = float(traj.running[-1])
    terminal = spec.terminal_cost(traj.positions[-1], traj.weights)
    return CostBreakdown(running + terminal, running, terminal, traj)


# --- hypothesis validation --------------------------------------------------


@dataclass
class HypothesisReport:
    """Empirical constants of the standing hypotheses and any violations.

    ``violations`` holds ``(hypothesis_id, witness, residual)`` triples.
    """

    constants: dict[str, float] = field(default_factory=dict)
    violations: list[tuple[str, dict[str, Any], float]] = field(default_factory=list)
    samples: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict[str, Any]:
        return {
            "constants": {k: float(v) for k, v in sorted(self.constants.items())},
            "violations": [{"id": h, "witness": wit, "residual": float(r)} for h, wit, r in self.violations],
            "samples": self.samples,
            "ok": self.ok,
        }


def _ball_points(rng: np.random.Generator, n: int, d: int, r: float) -> np.ndarray:
    g = rng.normal(size=(n, d))
    g /= np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-300)
    return g * (r * rng.uniform(size=(n, 1)) ** (1.0 / d))


def _random_measure(rng: np.random.Generator, d: int, r: float, max_n: int = 6) -> DiscreteMeasure:
    n = int(rng.integers(1, max_n + 1))
    return DiscreteMeasure(_ball_points(rng, n, d, r), rng.dirichlet(np.ones(n)))


def _ratio(num: float, den: float) -> float:
    return num / den if den > 0 else (0.0 if num == 0 else np.inf)


def validate_hypotheses(
    spec: ProblemSpec,
    r: float,
    samples: int = 200,
    seed: int = 0,
    *,
    interpolation: bool = True,
    growth_threshold: float = 0.6,
) -> HypothesisReport:
    """Sample the growth, coercivity and Lipschitz hypotheses on ``B(0, r)``.

    Constants are reported as the extreme ratios observed. Superlinear growth
    of ``v`` or ``L`` is flagged when the sup ratio keeps growing like a
    positive power of the radius across the scales ``r/4, r/2, r``.
    """
    from .transport import optimal_plan, random_plan

    if not r > 0 or samples < 1:
        raise DomainError("need r > 0 and samples >= 1")
    rng = np.random.Generator(np.random.Philox(seed))
    d, T = spec.dim, spec.T
    report = HypothesisReport(samples=samples)
    const = {"m": 0.0, "l_K": 0.0, "C1": np.inf, "l1": 0.0, "L_K1": 0.0, "C2": np.inf, "L_K2": 0.0, "m_sublin": 0.0}
    if interpolation:
        const["C_v_r"] = 0.0

    scales = (0.25, 0.5, 1.0)
    growth_v = np.zeros(len(scales))
    growth_L = np.zeros(len(scales))
    growth_wit_v: list[dict[str, Any]] = [{} for _ in scales]
    lo, hi = spec.U[:, 0], spec.U[:, 1]

    for _ in range(samples):
        t, s = rng.uniform(0, T, size=2)
        u = rng.uniform(lo, hi)
        mu = _random_measure(rng, d, r)
        nu = _random_measure(rng, d, r)
        x = _ball_points(rng, 1, d, r)
        y = _ball_points(rng, 1, d, r)
        uu = 1.0 + float(u @ u)
        w1 = optimal_plan(mu, nu, 1)[1]

        vx = spec._velocity_at(t, u, mu, x)[0]
        vy = spec._velocity_at(s, u, nu, y)[0]
        M1 = moment(mu, 1)
        lin = 1.0 + float(np.linalg.norm(x)) + M1
        const["m"] = max(const["m"], _ratio(float(np.linalg.norm(vx)), lin * uu))
        const["m_sublin"] = max(const["m_sublin"], _ratio(float(np.linalg.norm(vx)), lin * (1.0 + float(np.linalg.norm(u)))))
        gap = abs(t - s) + w1 + float(np.linalg.norm(x - y))
        const["l_K"] = max(const["l_K"], _ratio(float(np.linalg.norm(vx - vy)), gap * uu))

        Lmu = spec.running_cost(u, mu.points, mu.weights)
        Lnu = spec.running_cost(u, nu.points, nu.weights)
        if Lmu < 0:
            report.violations.append(("OCP-ii-nonnegative", {"u": u.tolist(), "mu": mu.to_dict()}, -Lmu))
        if float(u @ u) > 0:
            const["C1"] = min(const["C1"], Lmu / float(u @ u))
        const["l1"] = max(const["l1"], _ratio(Lmu, (1.0 + M1) * uu))
        if w1 > 0:
            const["L_K1"] = max(const["L_K1"], abs(Lnu - Lmu) / (w1 * uu))

        pmu = spec.terminal_cost(mu.points, mu.weights)
        pnu = spec.terminal_cost(nu.points, nu.weights)
        const["C2"] = min(const["C2"], pmu, pnu)
        if w1 > 0:
            const["L_K2"] = max(const["L_K2"], abs(pnu - pmu) / w1)

        # Same normalized configuration at three radii: the growth probe.
        xs, ms = x / r, mu.points / r
        for k, sc in enumerate(scales):
            mu_s = DiscreteMeasure._trusted(ms * (sc * r), mu.weights)
            x_s = xs * (sc * r)
            lin_s = 1.0 + float(np.linalg.norm(x_s)) + moment(mu_s, 1)
            ratio = float(np.linalg.norm(spec._velocity_at(t, u, mu_s, x_s)[0])) / (lin_s * uu)
            if ratio > growth_v[k]:
                growth_v[k] = ratio
                growth_wit_v[k] = {"t": float(t), "u": u.tolist(), "x": x_s[0].tolist(), "mu": mu_s.to_dict()}
            L_s = spec.running_cost(u, mu_s.points, mu_s.weights)
            growth_L[k] = max(growth_L[k], L_s / ((1.0 + moment(mu_s, 1)) * uu))

        if interpolation:
            plan = random_plan(mu, nu, rng)
            lam = float(rng.uniform(0.05, 0.95))
            from .measure import interpolate_along_plan

            mid = interpolate_along_plan(plan, lam)
            z = (1.0 - lam) * x + lam * y
            v1 = spec._velocity_at(t, u, mu, x)[0]
            v2 = spec._velocity_at(t, u, nu, y)[0]
            vm = spec._velocity_at(t, u, mid, z)[0]
            den = lam * (1.0 - lam) * (plan.cost(2.0) + float(np.sum((x - y) ** 2)))
            const["C_v_r"] = max(const["C_v_r"], _ratio(float(np.linalg.norm((1 - lam) * v1 + lam * v2 - vm)), den))

    for label, g, wit in (("OCP-i-growth", growth_v, growth_wit_v[-1]), ("OCP-ii-growth", growth_L, {})):
        with np.errstate(divide="ignore", invalid="ignore"):
            slopes = np.log2(g[1:] / g[:-1])
        if np.all(g > 0) and np.all(slopes > growth_threshold):
            report.violations.append((label, wit, float(slopes.min())))

    report.constants = {k: (0.0 if not np.isfinite(v) else float(v)) for k, v in const.items()}
    return report


def check_derivatives(
    spec: ProblemSpec,
    probes: int = 50,
    seed: int = 0,
    step: float = 1e-5,
    radius: float = 2.0,
    n: int = 3,
) -> float:
    """Worst relative error of the analytic derivatives against central differences.

    Covers the velocity (x- and u-Jacobians of every block), the Wasserstein
    gradients of running and terminal costs, and the control-cost gradient.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    d, m = spec.dim, spec.control_dim
    worst = 0.0

    def rel(a: np.ndarray, b: np.ndarray) -> float:
        return float(np.max(np.abs(np.asarray(a) - np.asarray(b)) / np.maximum(1.0, np.abs(b)))) if np.size(a) else 0.0

    def fd(f, z: np.ndarray) -> np.ndarray:
        cols = []
        for k in range(z.size):
            e = np.zeros_like(z)
            e.flat[k] = step
            cols.append((np.asarray(f(z + e)) - np.asarray(f(z - e))) / (2 * step))
        return np.stack(cols, axis=-1)

    for _ in range(probes):
        t = float(rng.uniform(0, spec.T))
        u = rng.uniform(spec.U[:, 0], spec.U[:, 1])
        X = _ball_points(rng, n, d, radius)
        Y = _ball_points(rng, n, d, radius)
        w = rng.dirichlet(np.ones(n))
        for b in spec.drifts:
            def bval(uu, Z, b=b):
                return np.broadcast_to(b.value(t, uu, Z), Z.shape)[0]

            worst = max(worst, rel(b.jac_x(t, u, X)[0], fd(lambda z: bval(u, np.vstack([z, X[1:]])), X[0])))
            worst = max(worst, rel(b.jac_u(t, u, X)[0], fd(lambda z: bval(z, X), u)))
            if b.x_independent:
                worst = max(worst, rel(b.jac_u0(t, u), b.jac_u(t, u, X)[0]))
        for K in spec.kernels:
            worst = max(worst, rel(K.jac_x(t, u, X, Y)[0, 1], fd(lambda z: K.value(t, u, z[None], Y)[0, 1], X[0])))
            worst = max(worst, rel(K.jac_y(t, u, X, Y)[0, 1], fd(lambda z: K.value(t, u, X, np.vstack([Y[:1], z[None], Y[2:]]))[0, 1], Y[1])))
            worst = max(worst, rel(K.jac_u(t, u, X, Y)[0, 1], fd(lambda z: K.value(t, z, X, Y)[0, 1], u)))
        worst = max(worst, rel(spec.control_cost_grad(u), fd(lambda z: spec.control_cost(z), u)))
        # Wasserstein gradients: d/dx_k of the functional equals w_k grad(x_k).
        for k in range(n):
            def moved(z, k=k):
                Z = X.copy()
                Z[k] = z
                return Z

            worst = max(worst, rel(w[k] * spec.state_cost_grad(X, w)[k], fd(lambda z: spec.state_cost(moved(z), w), X[k])))
            worst = max(worst, rel(w[k] * spec.terminal_grad(X, w)[k], fd(lambda z: spec.terminal_cost(moved(z), w), X[k])))
        R = rng.normal(size=(n, d))
        worst = max(worst, rel(spec.hamiltonian_du(t, u, X, R, w), fd(lambda z: spec.hamiltonian(t, z, X, R, w), u)))
        for k in range(n):
            def moved_h(z, k=k):
                Z = X.copy()
                Z[k] = z
                return spec.hamiltonian(t, u, Z, R, w)

            worst = max(worst, rel(-w[k] * spec.costate_rhs(t, u, X, R, w)[k], fd(moved_h, X[k])))
    return worst
