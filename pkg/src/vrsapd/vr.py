"""Richardson-Romberg extrapolation over two SAPD chains and iterate averaging."""
from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .params import params_from_theta
from .solvers import IterateState, Recorder, TrajectoryRecord, sapd_step

MODES = ("raw", "averaged")


def extrapolate(a, b):
    """``2 a - b``: cancels a bias that is linear in ``1 - theta`` when ``theta_b = 2 theta_a - 1``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return 2.0 * a - b


def richardson_weights(theta_1: float, theta_2: float) -> tuple[float, float]:
    """Weights with ``w1 + w2 = 1`` and ``w1 (1-theta_1) + w2 (1-theta_2) = 0``."""
    if theta_1 == theta_2:
        raise ValueError("extrapolation needs two distinct theta values")
    w1 = (1.0 - theta_2) / (theta_1 - theta_2)
    return w1, 1.0 - w1


@dataclass(frozen=True)
class ExtrapolationSpec:
    theta_1: float
    theta_2: float
    shared_init: tuple
    mode: str = "raw"
    burn_in: int = 0
    coupling: str = "independent"

    def __post_init__(self):
        if not (0.0 < self.theta_2 < 1.0 and 0.0 < self.theta_1 < 1.0):
            raise ValueError("both theta values must lie in (0, 1)")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.coupling not in ("independent", "common"):
            raise ValueError("coupling must be 'independent' or 'common'")

    @classmethod
    def from_theta(cls, theta_1, init, **kw):
        """Default pairing ``theta_2 = 2 theta_1 - 1``; needs ``theta_1 > 1/2``."""
        if not theta_1 > 0.5:
            raise ValueError(f"theta_1={theta_1} <= 0.5 puts 2*theta_1 - 1 outside (0, 1)")
        return cls(theta_1, 2.0 * theta_1 - 1.0, tuple(init), **kw)

    @property
    def weights(self):
        return richardson_weights(self.theta_1, self.theta_2)


class RunningAverage:
    """Incremental mean of ``z_b, ..., z_{k-1}`` where ``b`` is the burn-in.

    Before any iterate past the burn-in has been seen, ``value`` is the latest
    iterate.
    """

    def __init__(self, burn_in: int = 0):
        self.burn_in = int(burn_in)
        self.seen = 0
        self.count = 0
        self.mean = None
        self.last = None

    def update(self, z):
        z = np.asarray(z, dtype=float)
        self.last = z
        if self.seen >= self.burn_in:
            self.count += 1
            self.mean = z.copy() if self.mean is None else self.mean + (z - self.mean) / self.count
        self.seen += 1
        return self.value

    @property
    def value(self):
        return self.last if self.mean is None else self.mean


def running_average(seq, burn_in: int = 0) -> np.ndarray:
    """Averages ``xi~_1, ..., xi~_K`` of ``z_0, ..., z_{K-1}`` in one pass."""
    avg = RunningAverage(burn_in)
    return np.array([np.copy(avg.update(z)) for z in seq])


def _chain_streams(rng, coupling):
    if rng is None:
        return None, None
    if coupling == "common":
        return rng, copy.deepcopy(rng)
    return tuple(rng.spawn(2))


def run_vr_sapd(
    problem, spec: ExtrapolationSpec, num_iters: int, rng=None, recorder=None, chain_recorders=None
) -> TrajectoryRecord:
    """Run two SAPD chains from a shared start and record their extrapolation.

    The chains use rule parameters for ``theta_1`` and ``theta_2`` and child
    streams spawned from ``rng``, so each iteration costs two oracle pairs.
    In ``averaged`` mode the same weights combine the chains' running averages.
    """
    if num_iters < 1:
        raise ValueError("num_iters must be >= 1")
    p1 = params_from_theta(problem.profile, spec.theta_1)
    p2 = params_from_theta(problem.profile, spec.theta_2)
    w1, w2 = spec.weights
    r1, r2 = _chain_streams(rng, spec.coupling)
    x0, y0 = spec.shared_init
    s1 = IterateState.start(problem, x0, y0, r1)
    s2 = IterateState.start(problem, x0, y0, r2)
    recorder = recorder if recorder is not None else Recorder()
    if spec.mode == "averaged":
        avgs = [RunningAverage(spec.burn_in) for _ in range(4)]
        for a, v in zip(avgs, (s1.x, s1.y, s2.x, s2.y)):
            a.update(v)
    for _ in range(num_iters):
        s1 = sapd_step(problem, s1, p1, r1)
        s2 = sapd_step(problem, s2, p2, r2)
        if chain_recorders is not None:
            chain_recorders[0](s1.k, s1.x, s1.y)
            chain_recorders[1](s2.k, s2.x, s2.y)
        if spec.mode == "averaged":
            x1, y1, x2, y2 = (a.update(v) for a, v in zip(avgs, (s1.x, s1.y, s2.x, s2.y)))
        else:
            x1, y1, x2, y2 = s1.x, s1.y, s2.x, s2.y
        recorder(s1.k, w1 * x1 + w2 * x2, w1 * y1 + w2 * y2)
    if isinstance(recorder, Recorder):
        return recorder.record(final_state=(s1, s2), tag="extrapolated")
    return TrajectoryRecord(np.arange(1, num_iters + 1), final_state=(s1, s2), tag="extrapolated")
