"""Exact discrete optimal transport between particle clouds.

Optimal plans are vertices of the transportation polytope, computed with the
HiGHS dual simplex through :func:`scipy.optimize.linprog`. Every solve is
certified by checking dual feasibility and complementary slackness of the
returned multipliers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import coo_matrix

from .errors import DomainError, SizeError
from .measure import DiscreteMeasure

__all__ = [
    "TransportPlan",
    "optimal_plan",
    "wasserstein",
    "barycentric_projection",
    "plan_interpolation_cost",
    "product_plan",
    "identity_plan",
    "graph_plan",
    "northwest_corner_plan",
    "random_plan",
]

MARGINAL_TOL = 1e-10
CERTIFICATE_TOL = 1e-8
DEFAULT_MAX_PARTICLES = 512


@dataclass(frozen=True)
class TransportPlan:
    """Coupling ``gamma`` between ``source`` (rows) and ``target`` (columns)."""

    source: DiscreteMeasure
    target: DiscreteMeasure
    mass: np.ndarray
    certificate: float | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        mass = np.asarray(self.mass, dtype=float)
        if mass.shape != (self.source.n, self.target.n):
            raise DomainError(f"plan shape {mass.shape} does not match ({self.source.n}, {self.target.n})")
        if np.any(mass < 0):
            raise DomainError("plan has negative entries")
        row_err = np.max(np.abs(mass.sum(axis=1) - self.source.weights))
        col_err = np.max(np.abs(mass.sum(axis=0) - self.target.weights))
        if max(row_err, col_err) > MARGINAL_TOL:
            raise DomainError(f"plan marginals off by {max(row_err, col_err):.3e}")
        mass.setflags(write=False)
        object.__setattr__(self, "mass", mass)

    def cost(self, p: float = 2.0) -> float:
        """``sum_ij gamma_ij |x_i - y_j|^p`` (no p-th root)."""
        return float(np.sum(self.mass * _ground_cost(self.source.points, self.target.points, p)))

    def to_dict(self) -> dict[str, Any]:
        return {"rows": self.source.n, "cols": self.target.n, "mass": self.mass.tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _ground_cost(x: np.ndarray, y: np.ndarray, p: float) -> np.ndarray:
    diff = x[:, None, :] - y[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return dist**p


def optimal_plan(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    p: float = 2.0,
    *,
    max_particles: int = DEFAULT_MAX_PARTICLES,
) -> tuple[TransportPlan, float]:
    """Optimal coupling for the ``|x - y|^p`` cost and ``W_p(mu, nu)``.

    Ties between optimal plans are resolved by the simplex pivoting order,
    which is deterministic for identical inputs.
    """
    if p < 1:
        raise DomainError(f"p must be >= 1, got {p!r}")
    if mu.dim != nu.dim:
        raise DomainError(f"dimension mismatch: {mu.dim} vs {nu.dim}")
    n, m = mu.n, nu.n
    if n > max_particles or m > max_particles:
        raise SizeError(f"particle counts ({n}, {m}) exceed cap {max_particles}")

    C = _ground_cost(mu.points, nu.points, p)
    if n == 1 or m == 1:
        mass = np.outer(mu.weights, nu.weights)
        plan = TransportPlan(mu, nu, mass, certificate=0.0)
        return plan, float(np.sum(mass * C)) ** (1.0 / p)

    # Equality constraints: row sums (n) and column sums (m); the last column
    # constraint is implied by the others and dropped to keep the basis square.
    idx = np.arange(n * m)
    rows = np.concatenate([idx // m, n + (idx % m)])
    cols = np.concatenate([idx, idx])
    A = coo_matrix((np.ones(2 * n * m), (rows, cols)), shape=(n + m, n * m)).tocsr()[: n + m - 1]
    b = np.concatenate([mu.weights, nu.weights])[: n + m - 1]
    res = linprog(
        C.ravel(),
        A_eq=A,
        b_eq=b,
        bounds=(0, None),
        method="highs-ds",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    mass = np.clip(res.x.reshape(n, m), 0.0, None)
    # Vertex solutions are exact up to round-off; wipe residual dust.
    mass[mass < 1e-15] = 0.0

    duals = np.concatenate([res.eqlin.marginals, [0.0]])
    reduced = C - duals[:n, None] - duals[None, n:]
    certificate = max(float(np.sum(mass * np.abs(reduced))), float(max(0.0, -reduced.min())))
    if certificate > CERTIFICATE_TOL * max(1.0, float(C.max())):
        raise RuntimeError(f"transport LP certificate residual {certificate:.3e} too large")
    plan = TransportPlan(mu, nu, mass, certificate=certificate)
    total = max(float(np.sum(mass * C)), 0.0)
    return plan, total ** (1.0 / p)


def wasserstein(mu: DiscreteMeasure, nu: DiscreteMeasure, p: float = 2.0) -> float:
    return optimal_plan(mu, nu, p)[1]


def barycentric_projection(gamma: TransportPlan) -> np.ndarray:
    """Conditional mean of the target given each source atom, shape ``(n, d)``."""
    w = gamma.source.weights
    if np.any(w <= 0):
        raise DomainError("barycentric projection needs strictly positive source weights")
    return (gamma.mass @ gamma.target.points) / w[:, None]


def plan_interpolation_cost(gamma: TransportPlan) -> float:
    """``(sum_ij gamma_ij |x_i - y_j|^2)^(1/2)``, the plan-restricted W2."""
    return gamma.cost(2.0) ** 0.5


def product_plan(mu: DiscreteMeasure, nu: DiscreteMeasure) -> TransportPlan:
    return TransportPlan(mu, nu, np.outer(mu.weights, nu.weights))


def identity_plan(mu: DiscreteMeasure) -> TransportPlan:
    return TransportPlan(mu, mu, np.diag(mu.weights))


def graph_plan(mu: DiscreteMeasure, f_points: np.ndarray) -> TransportPlan:
    """Plan ``(Id x f)_# mu`` given the images ``f(x_i)`` row by row."""
    return TransportPlan(mu, mu.with_points(f_points), np.diag(mu.weights))


def northwest_corner_plan(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    row_order: np.ndarray | None = None,
    col_order: np.ndarray | None = None,
) -> TransportPlan:
    """Greedy vertex of the transportation polytope for the given visit orders."""
    n, m = mu.n, nu.n
    ro = np.arange(n) if row_order is None else np.asarray(row_order)
    co = np.arange(m) if col_order is None else np.asarray(col_order)
    a = mu.weights[ro].astype(float).copy()
    b = nu.weights[co].astype(float).copy()
    mass = np.zeros((n, m))
    i = j = 0
    while i < n and j < m:
        q = min(a[i], b[j])
        mass[ro[i], co[j]] += q
        a[i] -= q
        b[j] -= q
        if a[i] <= b[j]:
            i += 1
        else:
            j += 1
    # Round-off leaves the last row/column slightly short; close them exactly.
    mass[ro[-1], co[-1]] += max(0.0, mu.weights[ro[-1]] - mass[ro[-1]].sum())
    return TransportPlan(mu, nu, mass)


def random_plan(mu: DiscreteMeasure, nu: DiscreteMeasure, rng: np.random.Generator) -> TransportPlan:
    """Random convex mixture of the product plan and a shuffled corner plan."""
    corner = northwest_corner_plan(mu, nu, rng.permutation(mu.n), rng.permutation(nu.n))
    theta = float(rng.uniform())
    mass = theta * corner.mass + (1.0 - theta) * np.outer(mu.weights, nu.weights)
    return TransportPlan(mu, nu, mass)
