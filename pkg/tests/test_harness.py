import math

import numpy as np
import pytest

from vrsapd.harness import (
    ExperimentPlan,
    auto_burn_in,
    bias_scan,
    default_init,
    fit_loglog_slope,
    lyapunov_curve,
    run_experiment,
    stationary_moments,
)
from vrsapd.oracle import QuadraticSaddle
from vrsapd.solvers import SolverSpec


def quad(sigma=0.1, C=0.5):
    return QuadraticSaddle(1.0, 1.0, np.array([[C]]), noise_sigma=sigma)


def plan(problem, threads=1, seed=0, paths=10, iters=60, block=4):
    specs = [SolverSpec.sapd(problem.profile, 0.9), SolverSpec.baseline("sgda", problem.profile),
             SolverSpec.baseline("smp", problem.profile), SolverSpec.baseline("sogda", problem.profile),
             SolverSpec("vr_sapd", params=SolverSpec.sapd(problem.profile, 0.9).params, mode="averaged")]
    return ExperimentPlan(problem, specs, num_paths=paths, num_iters=iters, master_seed=seed, threads=threads,
                          block_paths=block)


def test_zero_noise_has_zero_spread():
    s = run_experiment(plan(quad(sigma=0.0)))
    for label in s.std:
        assert np.all(s.std[label] == 0.0)


def test_same_seed_identical_and_thread_invariant():
    a = run_experiment(plan(quad(), threads=1))
    b = run_experiment(plan(quad(), threads=1))
    c = run_experiment(plan(quad(), threads=4))
    for label in a.mean:
        assert np.array_equal(a.paths[label], b.paths[label])
        assert np.array_equal(a.paths[label], c.paths[label])
    d = run_experiment(plan(quad(), seed=1))
    assert not np.array_equal(a.paths["sapd"], d.paths["sapd"])


def test_summary_shapes_and_defaults():
    p = quad()
    s = run_experiment(ExperimentPlan(p, [SolverSpec.sapd(p.profile, 0.9)], num_paths=3, num_iters=50, stride=5))
    assert len(s.k) == 10 and s.k[0] == 5
    assert np.all(s.std["sapd"] >= 0)
    x0, y0 = default_init(p)
    assert np.array_equal(s.z0[0], x0) and np.array_equal(x0, [2.0]) and np.array_equal(y0, [1.0])
    assert s.plateau("sapd", 2) == pytest.approx(s.mean["sapd"][-2:].mean())
    with pytest.raises(ValueError):
        ExperimentPlan(p, [SolverSpec.sapd(p.profile, 0.9)] * 2)


def test_se_shrinks_with_more_paths():
    p = quad(sigma=0.3)

    def se(paths):
        s = run_experiment(ExperimentPlan(p, [SolverSpec.sapd(p.profile, 0.9)], num_paths=paths, num_iters=300,
                                          block_paths=1024))
        return np.mean(s.std["sapd"][-100:]) / math.sqrt(paths)

    assert 1.25 <= se(200) / se(400) <= 1.6


def test_lyapunov_bound_with_noise():
    p = quad(sigma=0.1)
    ks, mean, se, bound = lyapunov_curve(p, 0.9, 200, 300, init=(np.ones(1), np.ones(1)))
    assert np.all(mean <= bound + 4 * se)


def test_stationary_zero_noise_exact():
    est = stationary_moments(quad(sigma=0.0), 0.9, tail_len=400, num_paths=2)
    assert np.all(est.mean == 0) and est.m2 == 0 and est.m4 == 0


def test_stationary_quadratic_unbiased():
    est = stationary_moments(quad(), 0.9, tail_len=4000, num_paths=256)
    assert np.all(np.abs(est.mean) <= 3 * est.se_mean)
    assert est.m2 > 0 and est.samples == 4000 * 256


def test_stationary_rejects_short_tail():
    with pytest.raises(ValueError):
        stationary_moments(quad(), 0.9, tail_len=100, n_batches=20)


def test_stationary_thread_invariant():
    a = stationary_moments(quad(), 0.9, tail_len=400, num_paths=12, block_paths=4, threads=1)
    b = stationary_moments(quad(), 0.9, tail_len=400, num_paths=12, block_paths=4, threads=4)
    assert a.to_dict() == b.to_dict()


def test_auto_burn_in():
    assert auto_burn_in(0.9) == 256
    zeta = 2 * 0.99 / 1.99
    assert zeta ** auto_burn_in(0.99) <= 1e-6 < zeta ** (auto_burn_in(0.99) - 1)


def test_quadratic_bias_scan_reports_noise_floor():
    table = bias_scan(quad(), [0.9, 0.95], tail_len=2000, num_paths=256)
    assert len(table.rows) == 2 and math.isfinite(table.slope)
    for r in table.rows:
        assert r["bias"] <= 3 * np.linalg.norm(r["se_mean"])


def test_bias_scan_rejects_bad_pairing():
    with pytest.raises(ValueError):
        bias_scan(quad(), [0.4, 0.9], vr_pairing=True)


def test_loglog_slope():
    th = np.array([0.9, 0.95, 0.975])
    assert fit_loglog_slope(th, 3 * (1 - th) ** 1.5) == pytest.approx(1.5)
