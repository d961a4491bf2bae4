"""Value function and its regularity checks.

Every check is a finite, seeded experiment: upper and lower limits in the
step ``eps`` are replaced by the max or min over a fixed geometric grid.
"""

from __future__ import annotations

import hashlib
import json
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .errors import AnalysisError, DomainError
from .measure import DiscreteMeasure, interpolate_along_plan
from .problem import ProblemSpec
from .solver import SolveReport, SolverOptions, solve
from .transport import optimal_plan, product_plan, random_plan, wasserstein

__all__ = [
    "DEFAULT_EPS_GRID",
    "AnalysisReport",
    "ValueFunction",
    "ValueResult",
    "value",
    "direction_table",
    "difference_quotients",
    "dini_lower_derivative",
    "regularized_lower_derivative",
    "SuperdiffResult",
    "superdifferential_test",
    "semiconcavity_test",
    "minimal_semiconcavity_constant",
    "lipschitz_estimate",
    "dpp_residuals",
    "sample_measures",
]

DEFAULT_EPS_GRID: tuple[float, ...] = tuple(1e-2 * 2.0**-k for k in range(7))


def sample_measures(
    rng: np.random.Generator,
    count: int,
    dim: int,
    radius: float,
    sizes: tuple[int, int] = (2, 6),
    equal_weights: bool = True,
) -> list[DiscreteMeasure]:
    """Random clouds with support in the closed ball ``B(0, radius)``."""
    out = []
    for _ in range(count):
        n = int(rng.integers(sizes[0], sizes[1] + 1))
        g = rng.normal(size=(n, dim))
        g /= np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-300)
        pts = g * (radius * rng.uniform(size=(n, 1)) ** (1.0 / dim))
        w = None if equal_weights else rng.dirichlet(np.ones(n))
        out.append(DiscreteMeasure(pts, w))
    return out


@dataclass
class AnalysisReport:
    """Outcome of one check: ``passed`` iff ``statistic <= tolerance``."""

    scenario: str
    check: str
    inputs_digest: str
    statistic: float
    tolerance: float
    details: dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.statistic) and self.statistic <= self.tolerance)

    def to_dict(self) -> dict[str, Any]:
        return {
            "scenario": self.scenario,
            "check": self.check,
            "inputs_digest": self.inputs_digest,
            "statistic": float(self.statistic),
            "tolerance": float(self.tolerance),
            "passed": self.passed,
            "details": self.details,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _digest(parts: Iterable[str]) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(p.encode())
        h.update(b"\0")
    return h.hexdigest()


@dataclass(frozen=True)
class ValueResult:
    value: float
    converged: bool
    iterations: int


class ValueFunction:
    """Memoized ``V(tau, mu)`` computed by :func:`mfb.solver.solve`.

    Keys are ``(tau rounded to 1e-12, measure digest, solver options)``, so
    the cache never changes a result: every miss solves from the same
    initial control. Non-converged solves are still cached and listed in
    ``flagged``.
    """

    def __init__(self, spec: ProblemSpec, options: SolverOptions | dict[str, Any] | None = None, jobs: int = 1):
        self.spec = spec
        self.options = options if isinstance(options, SolverOptions) else SolverOptions.from_dict(options or {})
        self.jobs = max(1, int(jobs))
        self._key = self.options.key()
        self._cache: dict[tuple[float, str, str], ValueResult] = {}
        self._lock = threading.Lock()
        self.flagged: list[tuple[float, str]] = []
        self.solves = 0

    def __len__(self) -> int:
        return len(self._cache)

    def key(self, tau: float, mu: DiscreteMeasure) -> tuple[float, str, str]:
        return (round(float(tau), 12), mu.digest(), self._key)

    def evaluate(self, tau: float, mu: DiscreteMeasure) -> ValueResult:
        T = self.spec.T
        if not (-1e-12 <= tau <= T + 1e-12):
            raise DomainError(f"tau={tau!r} is outside [0, {T}]")
        tau = min(max(float(tau), 0.0), T)
        key = self.key(tau, mu)
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit
        if T - tau <= 1e-12:
            res = ValueResult(self.spec.terminal_cost(mu.points, mu.weights), True, 0)
        else:
            rep = solve(self.spec, mu, tau, self.options)
            res = ValueResult(rep.cost, rep.converged, rep.iterations)
        with self._lock:
            self.solves += 1
            if key not in self._cache:
                self._cache[key] = res
                if not res.converged:
                    self.flagged.append((tau, key[1]))
            res = self._cache[key]
        return res

    def __call__(self, tau: float, mu: DiscreteMeasure) -> float:
        return self.evaluate(tau, mu).value

    def map(self, probes: Sequence[tuple[float, DiscreteMeasure]]) -> list[ValueResult]:
        """Evaluate many probes; output order follows input order."""
        if self.jobs == 1 or len(probes) < 2:
            return [self.evaluate(t, m) for t, m in probes]
        with ThreadPoolExecutor(max_workers=self.jobs) as pool:
            return list(pool.map(lambda p: self.evaluate(*p), probes))


def value(
    spec: ProblemSpec,
    tau: float,
    mu: DiscreteMeasure,
    options: SolverOptions | dict[str, Any] | None = None,
    cache: ValueFunction | None = None,
) -> float:
    vf = cache if cache is not None else ValueFunction(spec, options)
    return vf(tau, mu)


def direction_table(mu: DiscreteMeasure, F: Any) -> np.ndarray:
    """Point table ``F(x_i)`` of shape ``(n, d)`` from a table, a constant or a callable."""
    if callable(F):
        tab = np.asarray(F(mu.points), dtype=float)
    else:
        tab = np.asarray(F, dtype=float)
    tab = np.broadcast_to(tab, mu.points.shape) if tab.ndim < 2 else tab
    if tab.shape != mu.points.shape:
        raise DomainError(f"direction table shape {tab.shape} does not match support {mu.points.shape}")
    return np.array(tab)


def difference_quotients(
    spec: ProblemSpec,
    tau: float,
    mu: DiscreteMeasure,
    h: float,
    F: Any,
    eps_grid: Sequence[float] | None = None,
    value_fn: ValueFunction | None = None,
    base: float | None = None,
) -> tuple[list[tuple[float, float]], list[str]]:
    """``(eps, q(eps))`` pairs of the joint quotient and the reasons for skipped steps."""
    vf = value_fn if value_fn is not None else ValueFunction(spec)
    grid = DEFAULT_EPS_GRID if eps_grid is None else tuple(eps_grid)
    tab = direction_table(mu, F)
    v0 = vf.evaluate(tau, mu)
    if base is None:
        if not v0.converged:
            return [], ["base value did not converge"]
        base = v0.value
    out: list[tuple[float, float]] = []
    skipped: list[str] = []
    T = spec.T
    for eps in grid:
        t = tau + eps * h
        if t < -1e-12 or t > T + 1e-12:
            skipped.append(f"eps={eps!r}: time {t!r} outside [0, {T}]")
            continue
        res = vf.evaluate(min(max(t, 0.0), T), mu.with_points(mu.points + eps * tab))
        if not res.converged:
            skipped.append(f"eps={eps!r}: value solve did not converge")
            continue
        out.append((eps, (res.value - base) / eps))
    return out, skipped


def dini_lower_derivative(
    spec: ProblemSpec,
    tau: float,
    mu: DiscreteMeasure,
    h: float,
    F: Any,
    eps_grid: Sequence[float] | None = None,
    value_fn: ValueFunction | None = None,
) -> float:
    """Minimum over the eps grid of ``[V(tau + eps h, (Id + eps F)_# mu) - V(tau, mu)] / eps``."""
    qs, skipped = difference_quotients(spec, tau, mu, h, F, eps_grid, value_fn)
    if not qs:
        raise AnalysisError("no admissible probe for the lower derivative: " + "; ".join(skipped))
    return min(q for _, q in qs)


def regularized_lower_derivative(
    spec: ProblemSpec,
    tau: float,
    mu: DiscreteMeasure,
    h: float,
    F: Any,
    rng: np.random.Generator,
    perturbations: int = 10,
    eta: float = 1e-3,
    eps_grid: Sequence[float] | None = None,
    value_fn: ValueFunction | None = None,
) -> float:
    """Lower derivative with the base point also ranging over ``(Id + eta' G)_# mu``.

    ``G`` are random tables with ``sup |G| <= 1`` and ``|eta'| <= eta``;
    the direction table ``F`` is carried along with the particles.
    """
    vf = value_fn if value_fn is not None else ValueFunction(spec)
    tab = direction_table(mu, F)
    best = dini_lower_derivative(spec, tau, mu, h, tab, eps_grid, vf)
    for _ in range(perturbations):
        G = _unit_ball_table(rng, mu.n, mu.dim)
        e = float(rng.uniform(-eta, eta))
        nu = mu.with_points(mu.points + e * G)
        best = min(best, dini_lower_derivative(spec, tau, nu, h, tab, eps_grid, vf))
    return best


def _unit_ball_table(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    G = rng.uniform(-1.0, 1.0, size=(n, d))
    return G / np.maximum(np.linalg.norm(G, axis=1, keepdims=True), 1.0)


@dataclass
class SuperdiffResult:
    worst_slack: float
    slacks: list[float]
    skipped: list[tuple[float, str]]
    probes: int


def superdifferential_test(
    spec: ProblemSpec,
    tau: float,
    mu: DiscreteMeasure,
    delta: float,
    xi: Any,
    directions: Sequence[tuple[float, Any]],
    eps_grid: Sequence[float] | None = None,
    value_fn: ValueFunction | None = None,
    reduce: str = "max",
) -> SuperdiffResult:
    """Slack of ``(delta, xi)`` against the quotients in every direction ``(h, F)``.

    The slack of a direction is the ``reduce`` ("max" or "min") of
    ``q(eps)`` over the grid minus ``delta h + <xi, F>_{L2(mu)}``; the result
    keeps the largest slack. Directions without an admissible step are
    skipped and listed.
    """
    if reduce not in ("max", "min"):
        raise DomainError("reduce must be 'max' or 'min'")
    agg = max if reduce == "max" else min
    vf = value_fn if value_fn is not None else ValueFunction(spec)
    xi_tab = direction_table(mu, xi)
    base = vf.evaluate(tau, mu)
    slacks: list[float] = []
    skipped: list[tuple[float, str]] = []
    probes = 0
    for h, F in directions:
        tab = direction_table(mu, F)
        if np.max(np.linalg.norm(tab, axis=1), initial=0.0) > 1.0 + 1e-12:
            raise DomainError("direction tables must satisfy sup |F| <= 1")
        if not base.converged:
            skipped.append((float(h), "base value did not converge"))
            continue
        qs, why = difference_quotients(spec, tau, mu, h, tab, eps_grid, vf, base=base.value)
        probes += len(qs)
        if not qs:
            skipped.append((float(h), "; ".join(why)))
            continue
        pairing = float(mu.weights @ np.einsum("ij,ij->i", xi_tab, tab))
        slacks.append(agg(q for _, q in qs) - (delta * h + pairing))
    worst = max(slacks) if slacks else -np.inf
    return SuperdiffResult(float(worst), slacks, skipped, probes)


def _plan_for(kind: str, mu: DiscreteMeasure, nu: DiscreteMeasure, rng: np.random.Generator):
    if kind == "product":
        return product_plan(mu, nu)
    if kind == "optimal":
        return optimal_plan(mu, nu, 2)[0]
    if kind == "random":
        return random_plan(mu, nu, rng)
    raise DomainError(f"unknown plan kind {kind!r}")


def _measure_pairs_digest(tau_pairs, measure_pairs, extra: Sequence[str] = ()) -> str:
    parts = [repr((float(a), float(b))) for a, b in tau_pairs]
    parts += [m1.digest() + m2.digest() for m1, m2 in measure_pairs]
    return _digest(list(parts) + list(extra))


def _semiconcavity_terms(spec, tau_pairs, measure_pairs, plans, lambda_grid, rng, vf):
    """Raw excess and modulus ``lam(1-lam)(|dtau|^2 + W2_plan^2)`` for every sample."""
    if len(tau_pairs) != len(measure_pairs):
        raise DomainError("tau_pairs and measure_pairs must have the same length")
    rows = []
    for (t1, t2), (m1, m2) in zip(tau_pairs, measure_pairs):
        if m1.dim != m2.dim or m1.dim != spec.dim:
            raise DomainError("measure pair dimensions do not match the problem")
        v1, v2 = vf(t1, m1), vf(t2, m2)
        for kind in plans:
            plan = _plan_for(kind, m1, m2, rng)
            w2 = plan.cost(2.0)
            for lam in lambda_grid:
                lam = float(lam)
                if lam == 0.0:
                    mid_v = v1
                elif lam == 1.0:
                    mid_v = v2
                else:
                    mid = interpolate_along_plan(plan, lam)
                    mid_v = vf((1.0 - lam) * t1 + lam * t2, mid)
                excess = (1.0 - lam) * v1 + lam * v2 - mid_v
                modulus = lam * (1.0 - lam) * ((t1 - t2) ** 2 + w2)
                rows.append((excess, modulus, kind, lam))
    return rows


def semiconcavity_test(
    spec: ProblemSpec,
    tau_pairs: Sequence[tuple[float, float]],
    measure_pairs: Sequence[tuple[DiscreteMeasure, DiscreteMeasure]],
    plans: Sequence[str] = ("product", "optimal", "random"),
    lambda_grid: Sequence[float] | None = None,
    C_r: float = 0.0,
    tolerance: float = 1e-6,
    seed: int = 0,
    value_fn: ValueFunction | None = None,
) -> AnalysisReport:
    """Worst excess of ``V`` over the concavity modulus ``C_r lam(1-lam)(...)``."""
    lam_grid = np.linspace(0.0, 1.0, 11) if lambda_grid is None else np.asarray(lambda_grid, dtype=float)
    if np.any((lam_grid < 0) | (lam_grid > 1)):
        raise DomainError("lambda grid must lie in [0, 1]")
    vf = value_fn if value_fn is not None else ValueFunction(spec)
    rng = np.random.Generator(np.random.Philox(seed))
    rows = _semiconcavity_terms(spec, tau_pairs, measure_pairs, plans, lam_grid, rng, vf)
    worst = max((exc - C_r * mod for exc, mod, _, _ in rows), default=-np.inf)
    needed = _minimal_constant(rows)
    digest = _measure_pairs_digest(tau_pairs, measure_pairs, [repr(tuple(plans)), repr(lam_grid.tolist()), repr(seed)])
    return AnalysisReport(
        spec.name,
        "semiconcavity",
        digest,
        float(worst),
        tolerance,
        {"C_r": float(C_r), "minimal_C_r": needed, "samples": len(rows), "plans": list(plans)},
    )


def _minimal_constant(rows) -> float:
    best = 0.0
    for exc, mod, _, _ in rows:
        if mod > 0:
            best = max(best, exc / mod)
    return float(best)


def minimal_semiconcavity_constant(
    spec: ProblemSpec,
    tau_pairs: Sequence[tuple[float, float]],
    measure_pairs: Sequence[tuple[DiscreteMeasure, DiscreteMeasure]],
    plans: Sequence[str] = ("product", "optimal", "random"),
    lambda_grid: Sequence[float] | None = None,
    seed: int = 0,
    value_fn: ValueFunction | None = None,
) -> float:
    """Smallest ``C_r >= 0`` for which the sample shows no positive excess."""
    lam_grid = np.linspace(0.0, 1.0, 11) if lambda_grid is None else np.asarray(lambda_grid, dtype=float)
    vf = value_fn if value_fn is not None else ValueFunction(spec)
    rng = np.random.Generator(np.random.Philox(seed))
    return _minimal_constant(_semiconcavity_terms(spec, tau_pairs, measure_pairs, plans, lam_grid, rng, vf))


def lipschitz_estimate(
    spec: ProblemSpec,
    tau_grid: Sequence[float],
    measures: Sequence[DiscreteMeasure],
    spatial_cap: float = np.inf,
    time_cap: float = np.inf,
    value_fn: ValueFunction | None = None,
) -> AnalysisReport:
    """Empirical spatial (W1) and time Lipschitz ratios of ``V``.

    The statistic is ``max(L / spatial_cap, M / time_cap)`` with tolerance 1,
    so the report passes iff both ratios are finite and within their caps.
    """
    if not len(tau_grid) or not len(measures):
        raise DomainError("need at least one time and one measure")
    vf = value_fn if value_fn is not None else ValueFunction(spec)
    taus = [float(t) for t in tau_grid]
    vals = {(i, j): vf(t, m) for i, t in enumerate(taus) for j, m in enumerate(measures)}
    spatial, temporal, skipped = 0.0, 0.0, 0
    for a in range(len(measures)):
        for b in range(a + 1, len(measures)):
            w1 = wasserstein(measures[a], measures[b], 1)
            if w1 <= 1e-14:
                skipped += 1
                continue
            for i in range(len(taus)):
                spatial = max(spatial, abs(vals[i, a] - vals[i, b]) / w1)
    for j in range(len(measures)):
        for i in range(len(taus)):
            for k in range(i + 1, len(taus)):
                if abs(taus[i] - taus[k]) > 1e-14:
                    temporal = max(temporal, abs(vals[i, j] - vals[k, j]) / abs(taus[i] - taus[k]))

    def scaled(x: float, cap: float) -> float:
        if cap == np.inf:
            return 0.0 if np.isfinite(x) else np.inf
        return x / cap if cap > 0 else (0.0 if x == 0 else np.inf)

    stat = max(scaled(spatial, spatial_cap), scaled(temporal, time_cap))
    digest = _digest([repr(taus)] + [m.digest() for m in measures])
    return AnalysisReport(
        spec.name,
        "lipschitz",
        digest,
        float(stat),
        1.0,
        {
            "L_r": float(spatial),
            "M_r": float(temporal),
            "spatial_cap": float(spatial_cap),
            "time_cap": float(time_cap),
            "degenerate_pairs_skipped": skipped,
        },
    )


def dpp_residuals(
    spec: ProblemSpec,
    report: SolveReport,
    times: Sequence[float] | None = None,
    value_fn: ValueFunction | None = None,
) -> dict[float, float]:
    """``V(t, mu*(t)) + int_{tau}^t L`` at node times along a solved pair.

    The values should not depend on ``t`` along an optimal pair; callers
    usually look at their spread.
    """
    vf = value_fn if value_fn is not None else ValueFunction(spec, report.options)
    tr = report.trajectory
    if times is None:
        idx = np.linspace(0, tr.n_nodes - 1, 11).round().astype(int)
    else:
        idx = np.array([tr.node_index(float(t)) for t in times])
    out = {}
    for k in idx:
        t = float(tr.times[k])
        out[t] = vf(t, tr.snapshot(int(k))) + float(tr.running[k])
    return out
