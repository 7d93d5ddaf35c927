"""Constant-stepsize iteration engines for stochastic saddle-point problems.

Every step function maps an :class:`IterateState` to a new one.  States may
hold a single point (1-D arrays) or a batch of independent paths stored
row-wise; ``rng=None`` switches to exact gradients.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .params import CurvatureProfile, SapdParams, params_from_theta

SOLVER_KINDS = ("sapd", "apd", "sgda", "smp", "sogda", "vr_sapd")


def _gx(problem, x, y, rng):
    return problem.grad_x(x, y) if rng is None else problem.stochastic_grad_x(x, y, rng)


def _gy(problem, x, y, rng):
    return problem.grad_y(x, y) if rng is None else problem.stochastic_grad_y(x, y, rng)


@dataclass(frozen=True)
class IterateState:
    """Markov state ``(z_k, z_{k-1})`` plus the stored stochastic gradients.

    ``gy_prev`` is the dual estimate drawn at ``z_{k-1}`` (at ``k = 0`` the
    one drawn at ``z_0``).  ``gx_prev`` is only used by optimistic GDA.
    """

    x: np.ndarray
    y: np.ndarray
    x_prev: np.ndarray
    y_prev: np.ndarray
    gy_prev: np.ndarray | None = None
    gx_prev: np.ndarray | None = None
    k: int = 0

    @classmethod
    def start(cls, problem, x0, y0, rng=None, kind="sapd"):
        x0 = np.array(x0, dtype=float)
        y0 = np.array(y0, dtype=float)
        gy = gx = None
        if kind in ("sapd", "apd", "sogda"):
            gy = _gy(problem, x0, y0, rng)
        if kind == "sogda":
            gx = _gx(problem, x0, y0, rng)
        return cls(x0, y0, x0.copy(), y0.copy(), gy, gx, 0)

    @property
    def z(self):
        return self.x, self.y

    def to_dict(self) -> dict:
        d = {"k": self.k}
        for name in ("x", "y", "x_prev", "y_prev", "gy_prev", "gx_prev"):
            v = getattr(self, name)
            d[name] = None if v is None else np.asarray(v).tolist()
        return d

    @classmethod
    def from_dict(cls, d) -> IterateState:
        arr = {k: (None if d[k] is None else np.asarray(d[k], dtype=float))
               for k in ("x", "y", "x_prev", "y_prev", "gy_prev", "gx_prev")}
        return cls(k=int(d["k"]), **arr)


def sapd_step(problem, state: IterateState, params: SapdParams, rng=None) -> IterateState:
    """One SAPD iteration: momentum dual ascent, then primal descent at the new dual point."""
    th = params.theta
    x, y = state.x, state.y
    gy = state.gy_prev if state.k == 0 else _gy(problem, x, y, rng)
    q = (1.0 + th) * gy - th * state.gy_prev
    y_new = problem.project_y(y + params.sigma * q)
    gx = _gx(problem, x, y_new, rng)
    x_new = problem.project_x(x - params.tau * gx)
    return IterateState(x_new, y_new, x, y, gy, None, state.k + 1)


def sgda_step(problem, state: IterateState, eta: float, rng=None) -> IterateState:
    """Simultaneous stochastic gradient descent-ascent."""
    x, y = state.x, state.y
    gx = _gx(problem, x, y, rng)
    gy = _gy(problem, x, y, rng)
    return IterateState(
        problem.project_x(x - eta * gx), problem.project_y(y + eta * gy), x, y, None, None, state.k + 1
    )


def smp_step(problem, state: IterateState, eta: float, rng=None) -> IterateState:
    """Stochastic extragradient (mirror prox with the Euclidean prox)."""
    x, y = state.x, state.y
    gx = _gx(problem, x, y, rng)
    gy = _gy(problem, x, y, rng)
    wx = problem.project_x(x - eta * gx)
    wy = problem.project_y(y + eta * gy)
    gx = _gx(problem, wx, wy, rng)
    gy = _gy(problem, wx, wy, rng)
    return IterateState(
        problem.project_x(x - eta * gx), problem.project_y(y + eta * gy), x, y, None, None, state.k + 1
    )


def sogda_step(problem, state: IterateState, eta: float, rng=None) -> IterateState:
    """Stochastic optimistic GDA; uses ``2 g_k - g_{k-1}`` with ``g_{-1} = g_0``."""
    x, y = state.x, state.y
    if state.k == 0:
        gx, gy = state.gx_prev, state.gy_prev
    else:
        gx = _gx(problem, x, y, rng)
        gy = _gy(problem, x, y, rng)
    x_new = problem.project_x(x - eta * (2.0 * gx - state.gx_prev))
    y_new = problem.project_y(y + eta * (2.0 * gy - state.gy_prev))
    return IterateState(x_new, y_new, x, y, gy, gx, state.k + 1)


def baseline_lipschitz(profile: CurvatureProfile) -> float:
    """Single smoothness constant used to size the baseline step lengths.

    ``profile.L_xx`` already includes ``mu_x``.
    """
    return max(profile.L_xx, profile.mu_y, profile.L_yx)


@dataclass(frozen=True)
class SolverSpec:
    """Which engine to run and with which constant step parameters."""

    kind: str
    params: SapdParams | None = None
    eta: float | None = None
    project: bool = True
    noise: bool = True
    name: str | None = None
    # VR-SAPD only
    mode: str = "averaged"
    burn_in: int = 0

    def __post_init__(self):
        if self.kind not in SOLVER_KINDS:
            raise ValueError(f"unknown solver kind {self.kind!r}")
        if self.kind in ("sapd", "apd", "vr_sapd") and self.params is None:
            raise ValueError(f"{self.kind} needs SapdParams")
        if self.kind in ("sgda", "smp", "sogda") and (self.eta is None or self.eta < 0):
            raise ValueError(f"{self.kind} needs a nonnegative step eta")
        if self.kind == "apd" and self.noise:
            object.__setattr__(self, "noise", False)

    @property
    def label(self) -> str:
        return self.name or self.kind

    @classmethod
    def sapd(cls, profile, theta, **kw):
        return cls("sapd", params=params_from_theta(profile, theta), **kw)

    @classmethod
    def apd(cls, profile, theta, **kw):
        return cls("apd", params=params_from_theta(profile, theta), noise=False, **kw)

    @classmethod
    def baseline(cls, kind, profile, eta=None, **kw):
        """SGDA/S-OGDA default to ``1/L``, SMP to ``1/sqrt(L)``."""
        if eta is None:
            L = baseline_lipschitz(profile)
            eta = 1.0 / math.sqrt(L) if kind == "smp" else 1.0 / L
        return cls(kind, eta=eta, **kw)


class _Unprojected:
    """View of a problem with its constraint sets switched off."""

    def __init__(self, problem):
        self._problem = problem

    def __getattr__(self, name):
        return getattr(self._problem, name)

    def project_x(self, x):
        return x

    def project_y(self, y):
        return y


def step_function(spec: SolverSpec) -> Callable:
    if spec.kind in ("sapd", "apd"):
        return lambda p, s, r: sapd_step(p, s, spec.params, r)
    if spec.kind == "sgda":
        return lambda p, s, r: sgda_step(p, s, spec.eta, r)
    if spec.kind == "smp":
        return lambda p, s, r: smp_step(p, s, spec.eta, r)
    if spec.kind == "sogda":
        return lambda p, s, r: sogda_step(p, s, spec.eta, r)
    raise ValueError(f"{spec.kind} has no single-chain step; use vr.run_vr_sapd")


@dataclass
class TrajectoryRecord:
    """Per-iteration metrics of one run (one or many paths).

    ``rel_eds`` has shape ``(len(k),)`` for a single path and
    ``(len(k), P)`` for a batch.  ``snapshots`` maps ``k`` to ``(x, y)``.
    """

    k: np.ndarray
    rel_eds: np.ndarray | None = None
    snapshots: dict = field(default_factory=dict)
    final_state: IterateState | None = None
    tag: str | None = None

    def to_csv(self, path=None, with_snapshots=False) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        eds = None if self.rel_eds is None else np.asarray(self.rel_eds)
        multi = eds is not None and eds.ndim == 2
        header = ["k"]
        if eds is not None:
            header += [f"rel_eds_{p}" for p in range(eds.shape[1])] if multi else ["rel_eds"]
        if self.tag is not None:
            header.append("tag")
        snap_cols = 0
        if with_snapshots and self.snapshots:
            x, y = next(iter(self.snapshots.values()))
            flat = np.concatenate([np.ravel(x), np.ravel(y)])
            snap_cols = flat.size
            header += [f"z_{j}" for j in range(snap_cols)]
        w.writerow(header)
        for i, k in enumerate(self.k):
            row = [int(k)]
            if eds is not None:
                row += [repr(float(v)) for v in np.atleast_1d(eds[i])]
            if self.tag is not None:
                row.append(self.tag)
            if snap_cols:
                if int(k) in self.snapshots:
                    x, y = self.snapshots[int(k)]
                    row += [repr(float(v)) for v in np.concatenate([np.ravel(x), np.ravel(y)])]
                else:
                    row += [""] * snap_cols
            w.writerow(row)
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def relative_eds(z, z_star, z0):
    """``|z - z*|^2 / |z0 - z*|^2`` for ``z = (x, y)``; row-wise for batches."""
    x, y = z
    xs, ys = z_star
    x0, y0 = z0
    den = float(np.sum((np.asarray(x0) - xs) ** 2) + np.sum((np.asarray(y0) - ys) ** 2))
    if den == 0.0:
        raise ZeroDivisionError("initial point coincides with the reference saddle point")
    dx = np.asarray(x) - xs
    dy = np.asarray(y) - ys
    return (np.sum(dx * dx, axis=-1) + np.sum(dy * dy, axis=-1)) / den


class Recorder:
    """Collects relative EDS every ``stride`` iterations and optional snapshots."""

    def __init__(self, z_star=None, z0=None, stride=1, snapshot_at=()):
        self.z_star = z_star
        self.z0 = z0
        self.stride = max(1, int(stride))
        self.snapshot_at = set(int(k) for k in snapshot_at)
        self.ks = []
        self.values = []
        self.snapshots = {}

    def __call__(self, k, x, y):
        if k % self.stride == 0:
            self.ks.append(k)
            if self.z_star is not None:
                self.values.append(relative_eds((x, y), self.z_star, self.z0))
        if k in self.snapshot_at:
            self.snapshots[k] = (np.copy(x), np.copy(y))

    def record(self, final_state=None, tag=None) -> TrajectoryRecord:
        eds = np.asarray(self.values) if self.values else None
        return TrajectoryRecord(np.asarray(self.ks, dtype=np.int64), eds, self.snapshots, final_state, tag)


def run(problem, spec: SolverSpec, init, num_iters: int, rng=None, recorder=None) -> TrajectoryRecord:
    """Iterate ``spec`` for ``num_iters`` steps from ``init = (x0, y0)``.

    ``recorder(k, x, y)`` is called after every step ``k = 1..num_iters``.
    The outcome is a deterministic function of the inputs and the state of
    ``rng``.
    """
    if num_iters < 1:
        raise ValueError("num_iters must be >= 1")
    if spec.kind == "vr_sapd":
        from .vr import ExtrapolationSpec, run_vr_sapd

        xspec = ExtrapolationSpec.from_theta(spec.params.theta, init, mode=spec.mode, burn_in=spec.burn_in)
        return run_vr_sapd(problem, xspec, num_iters, rng, recorder)
    if not spec.project:
        problem = _Unprojected(problem)
    if not spec.noise:
        rng = None
    recorder = recorder if recorder is not None else Recorder()
    step = step_function(spec)
    state = IterateState.start(problem, init[0], init[1], rng, spec.kind)
    for _ in range(num_iters):
        state = step(problem, state, rng)
        recorder(state.k, state.x, state.y)
    if isinstance(recorder, Recorder):
        return recorder.record(state)
    return TrajectoryRecord(np.arange(1, num_iters + 1), final_state=state)


def continue_run(problem, spec: SolverSpec, state: IterateState, num_iters: int, rng=None, recorder=None):
    """Resume from a saved ``state``; used to check the Markov property."""
    if not spec.project:
        problem = _Unprojected(problem)
    if not spec.noise:
        rng = None
    step = step_function(spec)
    for _ in range(num_iters):
        state = step(problem, state, rng)
        if recorder is not None:
            recorder(state.k, state.x, state.y)
    return state
