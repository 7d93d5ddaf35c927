"""Regularized distributionally robust logistic regression as a saddle problem.

    min_{|x|^2 <= D_x}  max_{y in P_r}  mu_x/2 |x|^2 + sum_i y_i phi_i(x) - mu_y/2 |y|^2

with ``phi_i(x) = log(1 + exp(-b_i a_i^T x))``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .oracle import ConvergenceError, SaddleProblem
from .params import CurvatureProfile
from .projections import BallSet, UncertaintySet, default_radius

DEFAULT_DX = 100.0


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        b = np.asarray(self.b, dtype=float)
        if A.ndim != 2 or A.shape[0] == 0 or A.shape[1] == 0:
            raise DatasetError("feature matrix must be a nonempty 2-D array")
        if b.shape != (A.shape[0],):
            raise DatasetError("label vector length must match the number of rows")
        if not np.all(np.isfinite(A)):
            raise DatasetError("features contain NaN or infinite values")
        if not np.all(np.abs(b) == 1.0):
            raise DatasetError("labels must be exactly +1 or -1")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def d(self) -> int:
        return self.A.shape[1]


def _map_labels(raw, positive_class=None):
    raw = np.asarray(raw)
    classes = np.unique(raw)
    if positive_class is not None:
        pos = raw == type(raw.flat[0])(positive_class) if raw.dtype.kind in "US" else raw == float(positive_class)
        return np.where(pos, 1.0, -1.0)
    if len(classes) > 2:
        raise DatasetError(f"{len(classes)} classes found; designate a positive class")
    if len(classes) == 1:
        return np.ones(len(raw)) if classes[0] in (1, "1") else -np.ones(len(raw))
    # two classes: the larger label is the positive one ({-1,1} and {0,1} map naturally)
    return np.where(raw == classes[1], 1.0, -1.0)


def _is_number(s):
    try:
        float(s)
    except ValueError:
        return False
    return True


def load_dataset(path, format="csv", label_column=-1, positive_class=None) -> Dataset:
    """Read a labelled dataset from CSV (optional header) or svmlight text."""
    if format == "svmlight":
        from sklearn.datasets import load_svmlight_file

        try:
            X, y = load_svmlight_file(str(path))
        except ValueError as exc:
            raise DatasetError(f"cannot parse svmlight file {path}: {exc}") from exc
        return Dataset(X.toarray(), _map_labels(y, positive_class))
    if format != "csv":
        raise DatasetError(f"unknown dataset format {format!r}")
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise DatasetError(f"{path} is empty")
    header = None
    if not all(_is_number(c) for c in rows[0]):
        header, rows = [c.strip() for c in rows[0]], rows[1:]
    if not rows:
        raise DatasetError(f"{path} has a header but no data")
    if isinstance(label_column, str) and not _is_number(label_column):
        if header is None or label_column not in header:
            raise DatasetError(f"label column {label_column!r} not found")
        col = header.index(label_column)
    else:
        col = int(label_column)
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise DatasetError("ragged CSV rows")
    col %= width
    labels = [r[col].strip() for r in rows]
    try:
        feats = np.array([[float(c) if c.strip() else math.nan for j, c in enumerate(r) if j != col] for r in rows])
    except ValueError as exc:
        raise DatasetError(f"non-numeric feature in {path}: {exc}") from exc
    raw = np.array([float(v) for v in labels]) if all(_is_number(v) for v in labels) else np.array(labels)
    return Dataset(feats, _map_labels(raw, positive_class))


def normalize(dataset: Dataset, scheme="minmax_per_column") -> Dataset:
    """Min-max scale each column (constant columns become 0) or divide by ``min(sqrt d, sqrt n)``."""
    A = dataset.A
    if scheme == "minmax_per_column":
        lo = A.min(axis=0)
        span = A.max(axis=0) - lo
        safe = np.where(span > 0, span, 1.0)
        A = np.where(span > 0, (A - lo) / safe, 0.0)
    elif scheme == "global_scale":
        A = A / min(math.sqrt(dataset.d), math.sqrt(dataset.n))
    elif scheme != "none":
        raise ValueError(f"unknown normalization {scheme!r}")
    return Dataset(A, dataset.b)


def spectral_norm(A, tol: float = 1e-8, max_iter: int = 10_000) -> float:
    """Largest singular value by power iteration on ``A^T A`` from the all-ones start."""
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        raise ValueError("empty matrix")
    v = np.ones(A.shape[1]) / math.sqrt(A.shape[1])
    lam = 0.0
    for _ in range(max_iter):
        w = A.T @ (A @ v)
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0
        v = w / nrm
        if abs(nrm - lam) <= tol * nrm:
            return math.sqrt(nrm)
        lam = nrm
    raise ConvergenceError(f"power iteration did not converge in {max_iter} iterations", math.sqrt(lam))


def synthetic_dataset(n=200, d=10, rng=None, flip=0.1) -> Dataset:
    """Gaussian features with labels from a planted separator, a fraction flipped."""
    rng = np.random.default_rng(rng)
    A = rng.standard_normal((n, d))
    w = rng.standard_normal(d)
    b = np.where(A @ w >= 0, 1.0, -1.0)
    b[rng.random(n) < flip] *= -1.0
    return Dataset(A, b)


def mu_y_for_accuracy(eps: float, D_y: float = 1.0) -> float:
    """Dual regularization ``eps / (2 D_y)`` that keeps the smoothed gap within ``eps``."""
    return eps / (2.0 * D_y)


class RegDroProblem(SaddleProblem):
    """Reg-DRO logistic regression with mini-batch gradient oracles."""

    D_y = 1.0

    def __init__(self, dataset: Dataset, mu_x, mu_y, r=None, D_x=DEFAULT_DX, batch_size=10, replace=True,
                 projection="sorted"):
        if not (mu_x > 0 and mu_y > 0):
            raise ValueError("mu_x and mu_y must be positive")
        self.dataset = dataset
        self.A = dataset.A
        self.b = dataset.b
        self.n, self.d = dataset.n, dataset.d
        self.dim_x, self.dim_y = self.d, self.n
        self.mu_x, self.mu_y = float(mu_x), float(mu_y)
        self.r = default_radius(self.n) if r is None else float(r)
        self.D_x = float(D_x)
        self.batch_size = int(batch_size)
        self.replace = bool(replace)
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        self.constraint_x = BallSet(self.D_x)
        self.constraint_y = UncertaintySet(self.n, self.r, method=projection)
        row_sq = np.max(np.sum(self.A**2, axis=1))
        norm_A = spectral_norm(self.A)
        self.profile = CurvatureProfile(
            mu_x=self.mu_x, mu_y=self.mu_y, L_xx=self.mu_x + row_sq / 4.0, L_yx=norm_A, L_yy=self.mu_y
        )

    def losses(self, x):
        """``phi_i(x)`` for every data point; shape ``(..., n)``."""
        m = np.asarray(x) @ self.A.T
        return np.logaddexp(0.0, -self.b * m)

    def value(self, x, y):
        x, y = np.asarray(x), np.asarray(y)
        return (
            0.5 * self.mu_x * np.sum(x * x, axis=-1)
            + np.sum(y * self.losses(x), axis=-1)
            - 0.5 * self.mu_y * np.sum(y * y, axis=-1)
        )

    def grad_x(self, x, y):
        x, y = np.asarray(x), np.asarray(y)
        m = x @ self.A.T
        w = y * (-self.b * expit(-self.b * m))
        return self.mu_x * x + w @ self.A

    def grad_y(self, x, y):
        return self.losses(x) - self.mu_y * np.asarray(y)

    def _sample(self, batch_shape, rng):
        B = self.batch_size
        if self.replace:
            return rng.integers(0, self.n, size=batch_shape + (B,))
        if B == self.n:
            return np.broadcast_to(np.arange(self.n), batch_shape + (B,))
        return np.argsort(rng.random(batch_shape + (self.n,)), axis=-1)[..., :B]

    def stochastic_grad_x(self, x, y, rng):
        x, y = np.asarray(x), np.asarray(y)
        idx = self._sample(x.shape[:-1], rng)
        a = self.A[idx]
        bi = self.b[idx]
        m = np.einsum("...bd,...d->...b", a, x)
        coef = np.take_along_axis(y, idx, axis=-1) * (-bi * expit(-bi * m))
        return self.mu_x * x + (self.n / self.batch_size) * np.einsum("...b,...bd->...d", coef, a)

    def stochastic_grad_y(self, x, y, rng):
        x, y = np.asarray(x), np.asarray(y)
        idx = self._sample(x.shape[:-1], rng)
        a = self.A[idx]
        bi = self.b[idx]
        m = np.einsum("...bd,...d->...b", a, x)
        phi = np.logaddexp(0.0, -bi * m)
        est = np.zeros(y.shape)
        flat = est.reshape(-1, self.n)
        rows = np.repeat(np.arange(flat.shape[0]), self.batch_size)
        np.add.at(flat, (rows, idx.reshape(-1)), phi.reshape(-1))
        return (self.n / self.batch_size) * est - self.mu_y * y


def build_problem(
    dataset, mu_x, mu_y, r=None, D_x=DEFAULT_DX, batch_size=10, replace=True, projection="sorted"
) -> RegDroProblem:
    """Reg-DRO problem; ``projection`` picks the exact sort-based or Dykstra projection onto P_r."""
    return RegDroProblem(
        dataset, mu_x, mu_y, r=r, D_x=D_x, batch_size=batch_size, replace=replace, projection=projection
    )


# Configurations used in the experiments on the public datasets.
DRY_BEAN = dict(mu_x=0.01, mu_y=10.0, theta=0.95, batch_size=10, normalization="minmax_per_column")
ARCENE = dict(mu_x=0.02, mu_y=10.0, theta=0.95, batch_size=10, normalization="global_scale")
MNIST = dict(mu_x=0.1, mu_y=10.0, theta=0.95, batch_size=10, normalization="minmax_per_column")
