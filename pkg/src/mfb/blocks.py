"""Building blocks of controlled velocity fields and Bolza costs.

All blocks are vectorized over particles:

* drift blocks ``b(t, u, x)`` map ``X`` of shape ``(n, d)`` to an array
  broadcastable to ``(n, d)``;
* kernel blocks ``K(t, u, x, y)`` return the pairwise array ``(n, n', d)``
  with entry ``[i, j] = K(t, u, x_i, y_j)``;
* control costs ``c(u)``, state costs ``l(x)``, interaction energies
  ``W(x, y)`` and terminal integrands ``g(x)`` are scalar valued.

Jacobians follow the convention ``J[..., a, b] = d f_a / d z_b``.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Any, ClassVar

import numpy as np

__all__ = [
    "BLOCK_TYPES",
    "block_from_dict",
    "ControlInput",
    "LinearDrift",
    "PowerDrift",
    "LinearAttraction",
    "GaussianAttraction",
    "QuadraticControlCost",
    "QuadraticStateCost",
    "LinearStateCost",
    "QuadraticInteraction",
    "QuadraticTerminal",
    "LinearTerminal",
    "ConstantTerminal",
]

BLOCK_TYPES: dict[str, type] = {}


def _register(cls: type) -> type:
    BLOCK_TYPES[cls.kind] = cls  # type: ignore[attr-defined]
    return cls


def block_from_dict(data: dict[str, Any]) -> Any:
    params = dict(data)
    kind = params.pop("type")
    try:
        cls = BLOCK_TYPES[kind]
    except KeyError:
        raise ValueError(f"unknown block type {kind!r}") from None
    return cls(**params)


def _as_matrix(a: Any) -> np.ndarray:
    return np.atleast_2d(np.asarray(a, dtype=float))


def _as_vector(a: Any) -> np.ndarray:
    return np.atleast_1d(np.asarray(a, dtype=float))


class _Block:
    kind: ClassVar[str]
    # Drifts whose value does not depend on x contribute nothing to costates
    # and must provide jac_u0(t, u).
    x_independent: ClassVar[bool] = False

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"type": self.kind}
        for f in fields(self):  # type: ignore[arg-type]
            value = getattr(self, f.name)
            out[f.name] = value.tolist() if isinstance(value, np.ndarray) else value
        return out


# --- drift blocks -----------------------------------------------------------


@_register
@dataclass(frozen=True, eq=False)
class ControlInput(_Block):
    """Uniform control term ``B u``."""

    kind: ClassVar[str] = "control_input"
    x_independent: ClassVar[bool] = True
    B: Any

    def __post_init__(self) -> None:
        object.__setattr__(self, "B", _as_matrix(self.B))

    def value(self, t: float, u: np.ndarray, X: np.ndarray) -> np.ndarray:
        return self.B @ u

    def jac_x(self, t: float, u: np.ndarray, X: np.ndarray) -> np.ndarray:
        n, d = X.shape
        return np.zeros((n, d, d))

    def jac_u(self, t: float, u: np.ndarray, X: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.B, (X.shape[0],) + self.B.shape)

    def jac_u0(self, t: float, u: np.ndarray) -> np.ndarray:
        """u-Jacobian shared by all particles, shape ``(d, m)``."""
        return self.B


@_register
@dataclass(frozen=True, eq=False)
class LinearDrift(_Block):
    """Affine drift ``A x + c``."""

    kind: ClassVar[str] = "linear_drift"
    A: Any
    c: Any = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "A", _as_matrix(self.A))
        object.__setattr__(self, "c", _as_vector(self.c))

    def value(self, t, u, X):
        return X @ self.A.T + self.c

    def jac_x(self, t, u, X):
        return np.broadcast_to(self.A, (X.shape[0],) + self.A.shape)

    def jac_u(self, t, u, X):
        return np.zeros(X.shape + (u.shape[0],))


@_register
@dataclass(frozen=True, eq=False)
class PowerDrift(_Block):
    """Componentwise ``coef * x**power`` for an integer ``power >= 1``."""

    kind: ClassVar[str] = "power_drift"
    coef: float = 1.0
    power: int = 2

    def __post_init__(self) -> None:
        if int(self.power) != self.power or self.power < 1:
            raise ValueError("power must be an integer >= 1")

    def value(self, t, u, X):
        return self.coef * X**self.power

    def jac_x(self, t, u, X):
        diag = self.coef * self.power * X ** (self.power - 1)
        return diag[:, :, None] * np.eye(X.shape[1])

    def jac_u(self, t, u, X):
        return np.zeros(X.shape + (u.shape[0],))


# --- interaction kernels ----------------------------------------------------


@_register
@dataclass(frozen=True, eq=False)
class LinearAttraction(_Block):
    """``K(x, y) = k (y - x)``; averaged against mu this is ``k (mean(mu) - x)``."""

    kind: ClassVar[str] = "linear_attraction"
    k: float = 1.0

    def value(self, t, u, X, Y):
        return self.k * (Y[None, :, :] - X[:, None, :])

    def jac_x(self, t, u, X, Y):
        d = X.shape[1]
        return np.broadcast_to(-self.k * np.eye(d), (X.shape[0], Y.shape[0], d, d))

    def jac_y(self, t, u, X, Y):
        d = X.shape[1]
        return np.broadcast_to(self.k * np.eye(d), (X.shape[0], Y.shape[0], d, d))

    def jac_u(self, t, u, X, Y):
        return np.zeros((X.shape[0], Y.shape[0], X.shape[1], u.shape[0]))


@_register
@dataclass(frozen=True, eq=False)
class GaussianAttraction(_Block):
    """``K(x, y) = k (y - x) exp(-|x - y|^2 / (2 s^2))``."""

    kind: ClassVar[str] = "gaussian_attraction"
    k: float = 1.0
    s: float = 1.0

    def _parts(self, X, Y):
        D = Y[None, :, :] - X[:, None, :]
        E = np.exp(-np.einsum("ijk,ijk->ij", D, D) / (2.0 * self.s**2))
        return D, E

    def value(self, t, u, X, Y):
        D, E = self._parts(X, Y)
        return self.k * D * E[:, :, None]

    def jac_y(self, t, u, X, Y):
        D, E = self._parts(X, Y)
        d = X.shape[1]
        outer = np.einsum("ija,ijb->ijab", D, D) / self.s**2
        return self.k * E[:, :, None, None] * (np.eye(d) - outer)

    def jac_x(self, t, u, X, Y):
        return -self.jac_y(t, u, X, Y)

    def jac_u(self, t, u, X, Y):
        return np.zeros((X.shape[0], Y.shape[0], X.shape[1], u.shape[0]))


# --- costs ------------------------------------------------------------------


@_register
@dataclass(frozen=True, eq=False)
class QuadraticControlCost(_Block):
    """``c(u) = coef |u|^2``; coercive with constant ``coef``."""

    kind: ClassVar[str] = "quadratic_control"
    coef: float = 0.5

    def value(self, u):
        return self.coef * float(u @ u)

    def grad(self, u):
        return 2.0 * self.coef * u


@_register
@dataclass(frozen=True, eq=False)
class QuadraticStateCost(_Block):
    """``l(x) = coef/2 |x - center|^2``."""

    kind: ClassVar[str] = "quadratic_state"
    coef: float = 1.0
    center: Any = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", _as_vector(self.center))

    def value(self, X):
        D = X - self.center
        return 0.5 * self.coef * np.einsum("ij,ij->i", D, D)

    def grad(self, X):
        return self.coef * (X - self.center)


@_register
@dataclass(frozen=True, eq=False)
class LinearStateCost(_Block):
    """``l(x) = a . x``."""

    kind: ClassVar[str] = "linear_state"
    a: Any = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "a", _as_vector(self.a))

    def value(self, X):
        return X @ np.broadcast_to(self.a, (X.shape[1],))

    def grad(self, X):
        return np.broadcast_to(self.a, X.shape).copy()


@_register
@dataclass(frozen=True, eq=False)
class QuadraticInteraction(_Block):
    """``W(x, y) = coef/2 |x - y|^2``."""

    kind: ClassVar[str] = "quadratic_interaction"
    coef: float = 1.0

    def value(self, X, Y):
        D = X[:, None, :] - Y[None, :, :]
        return 0.5 * self.coef * np.einsum("ijk,ijk->ij", D, D)

    def grad_x(self, X, Y):
        return self.coef * (X[:, None, :] - Y[None, :, :])

    def grad_y(self, X, Y):
        return -self.grad_x(X, Y)


@_register
@dataclass(frozen=True, eq=False)
class QuadraticTerminal(QuadraticStateCost):
    kind: ClassVar[str] = "quadratic_terminal"


@_register
@dataclass(frozen=True, eq=False)
class LinearTerminal(LinearStateCost):
    kind: ClassVar[str] = "linear_terminal"


@_register
@dataclass(frozen=True, eq=False)
class ConstantTerminal(_Block):
    kind: ClassVar[str] = "constant_terminal"
    level: float = 0.0

    def value(self, X):
        return np.full(X.shape[0], float(self.level))

    def grad(self, X):
        return np.zeros_like(X)
