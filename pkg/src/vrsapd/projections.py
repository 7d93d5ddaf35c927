"""Euclidean projections onto the ball, the simplex and the chi-square set P_r.

All functions act on the last axis, so a batch of points stored row-wise is
projected row by row.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class ProjectionError(RuntimeError):
    """Raised when an iterative projection fails to reach its tolerance."""


def project_ball(x, radius_sq: float, center=0.0):
    """Project onto ``{x : |x - center|^2 <= radius_sq}`` by radial scaling."""
    x = np.asarray(x, dtype=float)
    d = x - center
    nrm = np.linalg.norm(d, axis=-1, keepdims=True)
    r = math.sqrt(radius_sq)
    scale = np.where(nrm > r, r / np.where(nrm > 0, nrm, 1.0), 1.0)
    return center + d * scale


def project_simplex(v):
    """Project onto the unit simplex with the sort-and-threshold rule."""
    v = np.asarray(v, dtype=float)
    n = v.shape[-1]
    u = -np.sort(-v, axis=-1)
    css = np.cumsum(u, axis=-1) - 1.0
    ks = np.arange(1, n + 1)
    cond = u - css / ks > 0
    # largest k with cond true; cond[..., 0] always holds
    rho = n - 1 - np.argmax(cond[..., ::-1], axis=-1)
    lam = np.take_along_axis(css, rho[..., None], axis=-1) / (rho[..., None] + 1.0)
    return np.maximum(v - lam, 0.0)


@dataclass(frozen=True)
class BallSet:
    """``{x : |x|^2 <= radius_sq}``."""

    radius_sq: float

    def __post_init__(self):
        if not self.radius_sq > 0:
            raise ValueError("radius_sq must be positive")

    def project(self, x):
        return project_ball(x, self.radius_sq)

    def contains(self, x, tol=0.0):
        x = np.asarray(x)
        return bool(np.all(np.sum(x * x, axis=-1) <= self.radius_sq + tol))


@dataclass(frozen=True)
class UncertaintySet:
    """``{y >= 0, sum(y) = 1, |y - 1/n|^2 <= r / n^2}``."""

    n: int
    r: float
    tol: float = 1e-10
    max_iter: int = 10_000
    method: str = "dykstra"

    def __post_init__(self):
        if self.n < 1 or not self.r > 0:
            raise ValueError("need n >= 1 and r > 0")
        if self.method not in ("dykstra", "sorted"):
            raise ValueError(f"unknown projection method {self.method!r}")

    @property
    def radius(self) -> float:
        return math.sqrt(self.r) / self.n

    def project(self, v):
        if self.method == "sorted":
            return project_uncertainty_sorted(v, self)
        return project_uncertainty(v, self, tol=self.tol, max_iter=self.max_iter)

    def contains(self, y, tol=0.0):
        y = np.asarray(y)
        d = y - 1.0 / self.n
        return bool(
            np.all(y >= -tol)
            and np.all(np.abs(y.sum(axis=-1) - 1.0) <= tol)
            and np.all(np.sum(d * d, axis=-1) <= self.r / self.n**2 + tol)
        )


def default_radius(n: int) -> float:
    return 2.0 * math.sqrt(n)


def project_uncertainty(v, uset: UncertaintySet, tol: float = 1e-10, max_iter: int = 10_000):
    """Project onto ``P_r`` with Dykstra's algorithm (simplex, then ball).

    Plain alternating projections would only find *a* point of the
    intersection; Dykstra's correction terms make the limit the Euclidean
    projection.  Rows are iterated together until every row has converged.
    """
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != uset.n:
        raise ValueError(f"expected last dimension {uset.n}, got {v.shape[-1]}")
    center = 1.0 / uset.n
    rsq = uset.r / uset.n**2

    # Cheap exits: already feasible, or the simplex projection is in the ball.
    s = project_simplex(v)
    if _in_ball(s, center, rsq).all():
        return s

    x = v.copy()
    p = np.zeros_like(v)
    q = np.zeros_like(v)
    for _ in range(max_iter):
        y = project_simplex(x + p)
        p = x + p - y
        x_new = project_ball(y + q, rsq, center)
        q = y + q - x_new
        res = max(
            float(np.max(np.linalg.norm(x_new - x, axis=-1))),
            float(np.max(np.linalg.norm(x_new - y, axis=-1))),
        )
        x = x_new
        if res <= tol:
            return y
    raise ProjectionError(f"Dykstra did not reach tol={tol} in {max_iter} sweeps (residual {res:.3e})")


def project_uncertainty_sorted(v, uset: UncertaintySet):
    """Exact projection onto ``P_r`` from one sort per row.

    The solution is ``y = (v - t)_+ / sum((v - t)_+)`` for a threshold ``t``
    at or below the simplex threshold.  Along that path ``|y - 1/n|^2``
    increases with ``t``, so the breakpoints ``t = v_(j)`` bracket the root
    and, with the active set fixed, the sphere equation is a quadratic in
    ``t`` with a closed-form root.
    """
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != uset.n:
        raise ValueError(f"expected last dimension {uset.n}, got {v.shape[-1]}")
    shape = v.shape
    v = v.reshape(-1, shape[-1])
    n = uset.n
    rsq = uset.r / n**2
    out = project_simplex(v)
    todo = ~_in_ball(out, 1.0 / n, rsq)
    if todo.any():
        out[todo] = _sphere_threshold(v[todo], n, rsq)
    return out.reshape(shape)


def _sphere_threshold(v, n, rsq):
    big_r = rsq + 1.0 / n  # target |y|^2, using sum(y) = 1
    u = -np.sort(-v, axis=-1)
    ks = np.arange(1, n + 1, dtype=float)
    s1 = np.cumsum(u, axis=-1)
    s2 = np.cumsum(u * u, axis=-1)
    # |y|^2 at t = u_(j+1) with the top-j entries active (j = 1..n-1)
    t = u[:, 1:]
    num = s2[:, :-1] - 2.0 * t * s1[:, :-1] + ks[:-1] * t * t
    den = (s1[:, :-1] - ks[:-1] * t) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        sq = np.where(den > 0, num / den, np.inf)
    # segment k (top-k active) holds the root: count breakpoints still outside
    k = 1 + np.sum(sq > big_r, axis=-1)
    rows = np.arange(v.shape[0])
    S1 = s1[rows, k - 1]
    S2 = s2[rows, k - 1]
    kf = k.astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        disc = np.maximum(kf * S2 - S1 * S1, 0.0) / (big_r * kf - 1.0)
        thr = (S1 - np.sqrt(np.maximum(disc, 0.0))) / kf
    # Rk == 1 makes every t in the segment a root; take its right end
    thr = np.where(np.isfinite(thr), thr, u[rows, k - 1])
    pos = np.maximum(v - thr[:, None], 0.0)
    return pos / pos.sum(axis=-1, keepdims=True)


def _in_ball(y, center, rsq):
    d = y - center
    return np.sum(d * d, axis=-1) <= rsq
