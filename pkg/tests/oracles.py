"""Independent reference computations used by the tests.

Nothing here imports the solver stack: OT by permutation enumeration, the
LQ value function in closed form and the exponential contraction of the
mean-reversion flow.
"""

from __future__ import annotations

import itertools

import numpy as np


def brute_force_ot(x: np.ndarray, y: np.ndarray, p: float) -> float:
    """``W_p^p`` between two uniform clouds of equal size by enumerating permutations."""
    n = x.shape[0]
    cost = np.linalg.norm(x[:, None, :] - y[None, :, :], axis=2) ** p
    best = min(sum(cost[i, s[i]] for i in range(n)) for s in itertools.permutations(range(n)))
    return best / n


def lq_value(tau: float, points: np.ndarray, weights: np.ndarray, T: float = 1.0) -> float:
    """``1/2 Var + 1/2 m^2 / (1 + T - tau)`` for ``v = u``, ``L = u^2/2``, ``phi = 1/2 int x^2``."""
    x = np.asarray(points, dtype=float).reshape(len(weights), -1)[:, 0]
    m = float(weights @ x)
    var = float(weights @ (x - m) ** 2)
    return 0.5 * var + 0.5 * m**2 / (1.0 + T - tau)


def lq_optimal_control(tau: float, mean: float, T: float = 1.0) -> float:
    return -mean / (1.0 + T - tau)


def lq_feedback_residual(t: float, mean: float, u: float, T: float = 1.0) -> float:
    """Completing the square: ``D^-V(1, u) + u^2/2 = 1/2 (u + m/(1+T-t))^2``."""
    return 0.5 * (u + mean / (1.0 + T - t)) ** 2


def mean_reversion(x0: np.ndarray, t: float) -> np.ndarray:
    """Exact flow of ``x' = mean - x``: the mean is fixed and deviations decay like ``e^-t``."""
    m = x0.mean(axis=0)
    return m + (x0 - m) * np.exp(-t)
