"""Finitely supported probability measures on R^d.

A :class:`DiscreteMeasure` is a weighted particle cloud. Coincident points
are kept as separate atoms so that particle indices stay stable under
pushforwards, plan interpolation and costate bookkeeping.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from collections.abc import Callable, Sequence
from typing import Any

import numpy as np

from .errors import DomainError, InvalidMapError

__all__ = [
    "DiscreteMeasure",
    "pushforward",
    "moment",
    "interpolate_along_plan",
]

WEIGHT_SLACK = 1e-9


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


class DiscreteMeasure:
    """Weighted particle cloud ``sum_i w_i delta_{x_i}``.

    Parameters
    ----------
    points : array_like, shape (n, d) or (n,)
        Atom locations. A 1-D array is read as ``n`` points in dimension 1.
    weights : array_like, shape (n,), optional
        Nonnegative weights summing to one within ``1e-9``; they are
        renormalized once. Uniform weights when omitted.
    """

    __slots__ = ("points", "weights")

    points: np.ndarray
    weights: np.ndarray

    def __init__(self, points: Any, weights: Any = None) -> None:
        pts = np.array(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0 or pts.shape[1] == 0:
            raise DomainError(f"points must be a non-empty (n, d) array, got shape {pts.shape}")
        n = pts.shape[0]
        if weights is None:
            w = np.full(n, 1.0 / n)
        else:
            w = np.array(weights, dtype=float).reshape(-1)
            if w.shape[0] != n:
                raise DomainError(f"{n} points but {w.shape[0]} weights")
            if not np.all(np.isfinite(w)) or np.any(w < 0):
                raise DomainError("weights must be finite and nonnegative")
            total = float(np.sum(w))
            if abs(total - 1.0) > WEIGHT_SLACK:
                raise DomainError(f"weights sum to {total!r}, expected 1 within {WEIGHT_SLACK}")
            if total != 1.0:
                w = w / total
        if not np.all(np.isfinite(pts)):
            raise DomainError("points must be finite")
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "weights", _frozen(w))

    @classmethod
    def _trusted(cls, points: np.ndarray, weights: np.ndarray) -> DiscreteMeasure:
        # Internal fast path: caller guarantees shapes and normalization.
        obj = object.__new__(cls)
        object.__setattr__(obj, "points", points)
        object.__setattr__(obj, "weights", weights)
        return obj

    @classmethod
    def dirac(cls, point: Any) -> DiscreteMeasure:
        return cls(np.atleast_1d(np.asarray(point, dtype=float))[None, :])

    def __setattr__(self, name: str, value: Any) -> None:
        raise AttributeError("DiscreteMeasure is immutable")

    def __repr__(self) -> str:
        return f"DiscreteMeasure(n={self.n}, dim={self.dim})"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DiscreteMeasure):
            return NotImplemented
        return (
            self.points.shape == other.points.shape
            and bool(np.array_equal(self.points, other.points))
            and bool(np.array_equal(self.weights, other.weights))
        )

    __hash__ = None  # type: ignore[assignment]

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def support_radius(self) -> float:
        """``max_i |x_i|``; the measure lies in ``P(B(0, r))`` iff this is ``<= r``."""
        return float(np.max(np.linalg.norm(self.points, axis=1)))

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def variance(self) -> float:
        """Total variance ``int |x - mean|^2 dmu``."""
        c = self.points - self.mean()
        return float(self.weights @ np.einsum("ij,ij->i", c, c))

    def with_points(self, points: np.ndarray) -> DiscreteMeasure:
        """Same weights, new locations (a pushforward by an index-wise map)."""
        pts = np.asarray(points, dtype=float)
        if pts.shape[0] != self.n or pts.ndim != 2:
            raise DomainError(f"expected {self.n} points, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise DomainError("points must be finite")
        return DiscreteMeasure._trusted(_frozen(pts.copy()), self.weights)

    def permuted(self, perm: Sequence[int]) -> DiscreteMeasure:
        perm = np.asarray(perm)
        return DiscreteMeasure._trusted(
            _frozen(self.points[perm].copy()), _frozen(self.weights[perm].copy())
        )

    def digest(self) -> str:
        """Content hash invariant under relabeling of the atoms.

        Rows ``(x, w)`` are rounded to 1e-12, sorted lexicographically and hashed.
        """
        rows = np.round(np.column_stack([self.points, self.weights]), 12) + 0.0
        order = np.lexsort(rows.T[::-1])
        h = hashlib.sha256()
        h.update(str(rows.shape).encode())
        h.update(np.ascontiguousarray(rows[order]).tobytes())
        return h.hexdigest()

    def to_dict(self) -> dict[str, Any]:
        return {"dim": self.dim, "points": self.points.tolist(), "weights": self.weights.tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> DiscreteMeasure:
        mu = cls(np.asarray(data["points"], dtype=float).reshape(len(data["points"]), -1), data.get("weights"))
        if "dim" in data and int(data["dim"]) != mu.dim:
            raise DomainError(f"declared dim {data['dim']} but points have dim {mu.dim}")
        return mu

    @classmethod
    def from_json(cls, text: str) -> DiscreteMeasure:
        return cls.from_dict(json.loads(text))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([f"x_{k + 1}" for k in range(self.dim)] + ["w"])
        for x, w in zip(self.points, self.weights):
            writer.writerow([repr(float(c)) for c in x] + [repr(float(w))])
        return buf.getvalue()


def pushforward(
    mu: DiscreteMeasure,
    f: Callable[[np.ndarray], Any],
    *,
    vectorized: bool = False,
) -> DiscreteMeasure:
    """Image measure ``f_# mu``; weights are carried over unchanged.

    ``f`` is applied point by point unless ``vectorized`` is set, in which
    case it receives the full ``(n, d)`` array and must return ``(n, d')``.
    """
    if vectorized:
        out = np.asarray(f(mu.points), dtype=float)
        if out.ndim == 1:
            out = out[:, None]
        if out.ndim != 2 or out.shape[0] != mu.n:
            raise InvalidMapError(f"vectorized map returned shape {out.shape} for {mu.n} points")
    else:
        images = [np.atleast_1d(np.asarray(f(x), dtype=float)) for x in mu.points]
        dims = {im.shape for im in images}
        if len(dims) != 1 or images[0].ndim != 1:
            raise InvalidMapError(f"point map returned inconsistent shapes {sorted(dims)}")
        out = np.stack(images)
    if not np.all(np.isfinite(out)):
        raise InvalidMapError("point map returned non-finite values")
    return DiscreteMeasure._trusted(_frozen(out), mu.weights)


def moment(mu: DiscreteMeasure, p: float) -> float:
    """``(sum_i w_i |x_i|^p)^(1/p)`` for ``p >= 1``."""
    if not p >= 1:
        raise DomainError(f"moment order must be >= 1, got {p!r}")
    norms = np.linalg.norm(mu.points, axis=1)
    return float((mu.weights @ norms**p) ** (1.0 / p))


def interpolate_along_plan(gamma: Any, lam: float) -> DiscreteMeasure:
    """Interpolated measure ``((1 - lam) pi^1 + lam pi^2)_# gamma``.

    One atom per coupled pair ``(i, j)`` with positive mass, in row-major
    order; zero-mass pairs are dropped.
    """
    if not 0.0 <= lam <= 1.0:
        raise DomainError(f"lambda must lie in [0, 1], got {lam!r}")
    mass = np.asarray(gamma.mass)
    rows, cols = np.nonzero(mass > 0)
    x = gamma.source.points[rows]
    y = gamma.target.points[cols]
    pts = (1.0 - lam) * x + lam * y
    w = mass[rows, cols]
    return DiscreteMeasure._trusted(_frozen(pts), _frozen(w / np.sum(w)))
