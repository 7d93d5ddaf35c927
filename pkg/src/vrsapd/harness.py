"""Seeded Monte Carlo experiments: relative-EDS curves, stationary moments, bias scans.

Paths are processed in blocks of a fixed size, and path ``p`` of solver ``s``
always draws from the stream seeded by ``(master_seed, s, p)``.  Outputs
therefore do not depend on the number of worker threads.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .oracle import reference_solution
from .params import distance_potential, drift_rate, initial_gap, params_from_theta, xi_tilde
from .solvers import IterateState, Recorder, SolverSpec, run, sapd_step
from .streams import PathStreams
from .vr import RunningAverage

BLOCK_PATHS = 64
STATIONARY_BLOCK_PATHS = 4096


def _blocks(num_paths, block=BLOCK_PATHS):
    return [range(s, min(s + block, num_paths)) for s in range(0, num_paths, block)]


def _map_blocks(fn, blocks, threads):
    if threads <= 1 or len(blocks) == 1:
        return [fn(b) for b in blocks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, blocks))


def auto_burn_in(theta: float, eps: float = 1e-6) -> int:
    """Iterations after which the geometric transient ``zeta^k`` is below ``eps``."""
    return int(math.ceil(math.log(eps) / math.log(drift_rate(theta))))


def default_init(problem):
    """``x0 = 2 * ones`` and ``y0 = ones / d_y``."""
    return 2.0 * np.ones(problem.dim_x), np.ones(problem.dim_y) / problem.dim_y


@dataclass
class ExperimentPlan:
    problem: object
    solvers: list
    num_paths: int = 50
    num_iters: int = 1000
    master_seed: int = 0
    stride: int = 1
    z_star: tuple | None = None
    init: tuple | None = None
    reference: dict = field(default_factory=dict)
    threads: int = 1
    block_paths: int = BLOCK_PATHS

    def __post_init__(self):
        if self.num_paths < 1 or self.num_iters < 1:
            raise ValueError("num_paths and num_iters must be positive")
        labels = [s.label for s in self.solvers]
        if len(set(labels)) != len(labels):
            raise ValueError(f"solver labels must be unique, got {labels}")


@dataclass
class ExperimentSummary:
    """Mean/std relative-EDS curves per solver, plus the per-path matrices."""

    k: np.ndarray
    mean: dict
    std: dict
    paths: dict
    z_star: tuple
    z0: tuple
    master_seed: int

    def final(self, label):
        return float(self.mean[label][-1]), float(self.std[label][-1])

    def plateau(self, label, window: int) -> float:
        """Mean relative EDS over the last ``window`` recorded iterations."""
        return float(np.mean(self.mean[label][-window:]))


def resolve_reference(problem, z_star=None, **settings):
    if z_star is not None:
        return tuple(np.asarray(v, dtype=float) for v in z_star)
    if problem.known_saddle is not None:
        return problem.known_saddle
    return reference_solution(problem, **settings)


def run_experiment(plan: ExperimentPlan) -> ExperimentSummary:
    """Run every solver on ``num_paths`` seeded paths and aggregate relative EDS."""
    problem = plan.problem
    z_star = resolve_reference(problem, plan.z_star, **plan.reference)
    x0, y0 = plan.init if plan.init is not None else default_init(problem)
    x0, y0 = np.asarray(x0, dtype=float), np.asarray(y0, dtype=float)
    blocks = _blocks(plan.num_paths, plan.block_paths)
    mean, std, paths = {}, {}, {}
    ks = None
    for s_idx, spec in enumerate(plan.solvers):

        def work(block, spec=spec, s_idx=s_idx):
            P = len(block)
            rng = PathStreams.from_seed(plan.master_seed, (s_idx,), block) if spec.noise else None
            rec = Recorder(z_star, (x0, y0), stride=plan.stride)
            init = (np.tile(x0, (P, 1)), np.tile(y0, (P, 1)))
            return run(problem, spec, init, plan.num_iters, rng, rec)

        records = _map_blocks(work, blocks, plan.threads)
        eds = np.concatenate([r.rel_eds for r in records], axis=1)
        ks = records[0].k
        paths[spec.label] = eds
        mean[spec.label] = eds.mean(axis=1)
        # shift by the first path: identical paths give exactly zero spread
        std[spec.label] = (eds - eds[:, :1]).std(axis=1)
    return ExperimentSummary(ks, mean, std, paths, z_star, (x0, y0), plan.master_seed)


@dataclass
class StationaryEstimate:
    """Tail averages of ``z - z*`` and its 2nd/4th moments with batch-means SEs."""

    theta: float
    mean: np.ndarray
    se_mean: np.ndarray
    m2: float
    se_m2: float
    m4: float
    se_m4: float
    burn_in: int
    tail_len: int
    num_paths: int

    @property
    def samples(self) -> int:
        return self.tail_len * self.num_paths

    @property
    def bias(self) -> float:
        return float(np.linalg.norm(self.mean))

    @property
    def se_bias(self) -> float:
        b = self.bias
        if b == 0.0:
            return float(np.linalg.norm(self.se_mean))
        return float(np.sqrt(np.sum((self.mean / b) ** 2 * self.se_mean**2)))

    def to_dict(self):
        return {
            "theta": self.theta,
            "mean": self.mean.tolist(),
            "se_mean": self.se_mean.tolist(),
            "m2": self.m2,
            "se_m2": self.se_m2,
            "m4": self.m4,
            "se_m4": self.se_m4,
            "bias": self.bias,
            "se_bias": self.se_bias,
            "burn_in": self.burn_in,
            "tail_len": self.tail_len,
            "num_paths": self.num_paths,
        }


def _batch_se(values):
    """Mean and standard error over the leading (batch) axis."""
    n = values.shape[0]
    m = values.mean(axis=0)
    if n < 2:
        return m, np.full_like(m, np.nan)
    return m, values.std(axis=0, ddof=1) / math.sqrt(n)


def stationary_moments(
    problem,
    params,
    burn_in=None,
    tail_len=20_000,
    num_paths=64,
    master_seed=0,
    z_star=None,
    init=None,
    n_batches=20,
    key=0,
    threads=1,
    block_paths=STATIONARY_BLOCK_PATHS,
) -> StationaryEstimate:
    """Estimate stationary moments of SAPD iterates around ``z_star``.

    Each path is burnt in, then its tail is cut into ``n_batches`` contiguous
    batches; the standard errors come from the spread of all batch means.
    """
    if not hasattr(params, "theta"):
        params = params_from_theta(problem.profile, float(params))
    if n_batches < 2 or tail_len < 20 * n_batches:
        raise ValueError(f"tail_len={tail_len} is too short for {n_batches} batches of >= 20 samples")
    if burn_in is None:
        burn_in = auto_burn_in(params.theta)
    xs, ys = resolve_reference(problem, z_star)
    x0, y0 = (xs, ys) if init is None else (np.asarray(v, dtype=float) for v in init)
    blen = tail_len // n_batches
    tail_len = blen * n_batches
    dim = problem.dim_x + problem.dim_y

    def work(block):
        P = len(block)
        rng = PathStreams.from_seed(master_seed, (key,), block)
        state = IterateState.start(problem, np.tile(x0, (P, 1)), np.tile(y0, (P, 1)), rng)
        for _ in range(burn_in):
            state = sapd_step(problem, state, params, rng)
        s1 = np.zeros((n_batches, P, dim))
        s2 = np.zeros((n_batches, P))
        s4 = np.zeros((n_batches, P))
        for b in range(n_batches):
            a1 = np.zeros((P, dim))
            a2 = np.zeros(P)
            a4 = np.zeros(P)
            for _ in range(blen):
                state = sapd_step(problem, state, params, rng)
                d = np.concatenate([state.x - xs, state.y - ys], axis=-1)
                q = np.sum(d * d, axis=-1)
                a1 += d
                a2 += q
                a4 += q * q
            s1[b], s2[b], s4[b] = a1 / blen, a2 / blen, a4 / blen
        return s1, s2, s4

    parts = _map_blocks(work, _blocks(num_paths, block_paths), threads)
    s1 = np.concatenate([p[0] for p in parts], axis=1).reshape(-1, dim)
    s2 = np.concatenate([p[1] for p in parts], axis=1).reshape(-1)
    s4 = np.concatenate([p[2] for p in parts], axis=1).reshape(-1)
    m1, se1 = _batch_se(s1)
    m2, se2 = _batch_se(s2)
    m4, se4 = _batch_se(s4)
    return StationaryEstimate(
        params.theta, m1, se1, float(m2), float(se2), float(m4), float(se4), burn_in, tail_len, num_paths
    )


@dataclass
class BiasTable:
    rows: list
    slope: float
    extrapolated: list = field(default_factory=list)

    def to_dict(self):
        return {"rows": self.rows, "slope": self.slope, "extrapolated": self.extrapolated}


def fit_loglog_slope(thetas, biases) -> float:
    """Least-squares slope of ``log b`` against ``log(1 - theta)``."""
    x = np.log(1.0 - np.asarray(thetas, dtype=float))
    y = np.log(np.asarray(biases, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


def _pairings(theta_list, vr_pairing):
    if vr_pairing is None or vr_pairing is False:
        return []
    if vr_pairing is True or vr_pairing == "each":
        pairs = [(t, 2.0 * t - 1.0) for t in theta_list]
    elif np.isscalar(vr_pairing[0]):
        pairs = [tuple(vr_pairing)]
    else:
        pairs = [tuple(p) for p in vr_pairing]
    for t1, t2 in pairs:
        if not (0.0 < t2 < 1.0 and 0.0 < t1 < 1.0) or t1 == t2:
            raise ValueError(f"invalid extrapolation pair ({t1}, {t2}); theta_1 must exceed 0.5")
    return [(float(a), float(b)) for a, b in pairs]


def bias_scan(problem, theta_list, vr_pairing=None, z_star=None, master_seed=0, threads=1, **settings) -> BiasTable:
    """Stationary bias ``|E_pi[z] - z*|`` for each theta and its log-log slope.

    ``vr_pairing`` is a pair ``(theta_1, theta_2)``, a list of pairs, or
    ``True`` to pair every theta with ``2 theta - 1``; each pair adds the bias
    of the Richardson combination of the two stationary means.
    """
    from .vr import richardson_weights

    z_star = resolve_reference(problem, z_star)
    thetas = [float(t) for t in theta_list]
    pairs = _pairings(thetas, vr_pairing)
    wanted = list(dict.fromkeys(thetas + [t for p in pairs for t in p]))
    est = {}
    for i, th in enumerate(wanted):
        est[th] = stationary_moments(
            problem, th, z_star=z_star, master_seed=master_seed, key=i, threads=threads, **settings
        )
    rows = [
        {"theta": th, "bias": est[th].bias, "se": est[th].se_bias, "mean": est[th].mean.tolist(),
         "se_mean": est[th].se_mean.tolist(), "m2": est[th].m2, "se_m2": est[th].se_m2}
        for th in thetas
    ]
    slope = fit_loglog_slope(thetas, [est[t].bias for t in thetas]) if len(thetas) >= 2 else float("nan")
    extra = []
    for t1, t2 in pairs:
        w1, w2 = richardson_weights(t1, t2)
        m = w1 * est[t1].mean + w2 * est[t2].mean
        se_vec = np.sqrt(w1**2 * est[t1].se_mean**2 + w2**2 * est[t2].se_mean**2)
        extra.append({
            "theta_1": t1,
            "theta_2": t2,
            "bias": float(np.linalg.norm(m)),
            # the norm of a near-zero mean is not smooth; bound its noise by |se|
            "se": float(np.linalg.norm(se_vec)),
            "mean": m.tolist(),
            "bias_theta_1": est[t1].bias,
            "se_theta_1": est[t1].se_bias,
        })
    return BiasTable(rows, slope, extra)


def lyapunov_curve(
    problem, theta, num_paths, num_iters, master_seed=0, init=None, z_star=None, threads=1,
    block_paths=STATIONARY_BLOCK_PATHS,
):
    """Mean and SE over paths of ``mu_x |x_k-x*|^2 + mu_y (1+theta)/2 |y_k-y*|^2``.

    Returned together with the bound ``theta^k Delta_0 + Xi_theta delta^2``.
    """
    params = params_from_theta(problem.profile, theta)
    xs, ys = resolve_reference(problem, z_star)
    x0, y0 = default_init(problem) if init is None else (np.asarray(v, dtype=float) for v in init)
    delta = problem.noise_bound(2) or 0.0

    def work(block):
        P = len(block)
        rng = PathStreams.from_seed(master_seed, (0,), block) if delta > 0 else None
        state = IterateState.start(problem, np.tile(x0, (P, 1)), np.tile(y0, (P, 1)), rng)
        out = np.empty((num_iters, P))
        for k in range(num_iters):
            state = sapd_step(problem, state, params, rng)
            out[k] = distance_potential(problem.profile, theta, state.x, state.y, xs, ys)
        return out

    vals = np.concatenate(_map_blocks(work, _blocks(num_paths, block_paths), threads), axis=1)
    mean = vals.mean(axis=1)
    se = vals.std(axis=1, ddof=1) / math.sqrt(num_paths) if num_paths > 1 else np.zeros(num_iters)
    ks = np.arange(1, num_iters + 1)
    d0 = initial_gap(problem.profile, x0, y0, xs, ys)
    bound = theta**ks * d0 + xi_tilde(problem.profile, theta) * delta**2
    return ks, mean, se, bound


def averaging_gap_curve(problem, theta, num_iters, init, z_star=None):
    """``k (1-theta)/(1+theta) |xi~_k - xi*| / |xi_0 - xi*|`` on the noise-free path.

    For quadratic problems the noise-free recursion is exactly the mean of the
    stochastic one, so this traces the gap of the averaged mean.
    """
    params = params_from_theta(problem.profile, theta)
    xs, ys = resolve_reference(problem, z_star)
    xi_star = np.concatenate([xs, ys, xs, ys])
    state = IterateState.start(problem, init[0], init[1], None)
    avg = RunningAverage()
    xi0 = np.concatenate([state.x, state.y, state.x_prev, state.y_prev])
    d0 = np.linalg.norm(xi0 - xi_star)
    gaps = np.empty(num_iters)
    for k in range(1, num_iters + 1):
        avg.update(np.concatenate([state.x, state.y, state.x_prev, state.y_prev]))
        gaps[k - 1] = np.linalg.norm(avg.value - xi_star)
        state = sapd_step(problem, state, params, None)
    ks = np.arange(1, num_iters + 1)
    return ks, ks * (1.0 - theta) / (1.0 + theta) * gaps / d0, gaps
