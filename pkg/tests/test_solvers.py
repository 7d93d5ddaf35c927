import copy
import json

import numpy as np
import pytest

from vrsapd.dro import RegDroProblem, synthetic_dataset
from vrsapd.oracle import QuadraticSaddle, SaddleProblem
from vrsapd.params import (
    CurvatureProfile,
    SapdParams,
    distance_potential,
    initial_gap,
    params_from_theta,
    theta_thresholds,
)
from vrsapd.solvers import (
    IterateState,
    Recorder,
    SolverSpec,
    baseline_lipschitz,
    continue_run,
    relative_eds,
    run,
    sapd_step,
    sgda_step,
    smp_step,
    sogda_step,
)
from vrsapd.streams import PathStreams


class Bilinear(SaddleProblem):
    """``f = x y``; the stochastic oracle adds no noise."""

    dim_x = dim_y = 1
    profile = CurvatureProfile(1.0, 1.0, 1.0, 1.0, 0.0)

    def grad_x(self, x, y):
        return np.asarray(y, dtype=float)

    def grad_y(self, x, y):
        return np.asarray(x, dtype=float)

    stochastic_grad_x = lambda self, x, y, rng: self.grad_x(x, y)  # noqa: E731
    stochastic_grad_y = lambda self, x, y, rng: self.grad_y(x, y)  # noqa: E731


HALF = SapdParams(theta=0.5, tau=1.0, sigma=1.0, alpha=0.25)
ONE = np.ones(1)


def decoupled():
    return QuadraticSaddle(1.0, 1.0, np.zeros((1, 1)))


def start(problem, kind="sapd", z=(ONE, ONE)):
    return IterateState.start(problem, z[0], z[1], None, kind)


def test_sapd_decoupled_one_step_to_saddle():
    s = sapd_step(decoupled(), start(decoupled()), HALF)
    assert s.x == pytest.approx([0.0]) and s.y == pytest.approx([0.0])


def test_sapd_coupled_hand_step():
    p = QuadraticSaddle(1.0, 1.0, np.ones((1, 1)))
    s0 = start(p)
    assert s0.gy_prev == pytest.approx([0.0])
    s = sapd_step(p, s0, HALF)
    assert (s.x[0], s.y[0]) == pytest.approx((-1.0, 1.0))


def test_sapd_k0_uses_single_dual_draw(rng):
    p = QuadraticSaddle(1.0, 1.0, np.zeros((1, 1)), noise_sigma=1.0)
    s0 = IterateState.start(p, ONE, ONE, rng)
    s1 = sapd_step(p, s0, HALF, rng)
    # q0 = (1+theta) g0 - theta g0 = g0
    assert s1.y == pytest.approx(ONE + s0.gy_prev)
    assert s1.gy_prev is s0.gy_prev


@pytest.mark.parametrize("kind", ["sapd", "sgda", "smp", "sogda"])
def test_fixed_point_at_saddle(kind, rng):
    p = QuadraticSaddle.random(3, 2, rng)
    z = (np.zeros(3), np.zeros(2))
    s = start(p, kind, z)
    for _ in range(3):
        s = {"sapd": lambda s: sapd_step(p, s, params_from_theta(p.profile, 0.9)),
             "sgda": lambda s: sgda_step(p, s, 0.3),
             "smp": lambda s: smp_step(p, s, 0.3),
             "sogda": lambda s: sogda_step(p, s, 0.3)}[kind](s)
    assert np.all(s.x == 0) and np.all(s.y == 0)


def test_sgda_examples():
    p = decoupled()
    s = sgda_step(p, start(p, "sgda"), 0.5)
    assert (s.x[0], s.y[0]) == (0.5, 0.5)
    s = sgda_step(p, start(p, "sgda"), 0.0)
    assert (s.x[0], s.y[0]) == (1.0, 1.0)


def test_smp_bilinear_hand_step():
    p = Bilinear()
    s = smp_step(p, start(p, "smp"), 0.5)
    assert (s.x[0], s.y[0]) == pytest.approx((0.25, 1.25))
    s = smp_step(p, start(p, "smp"), 0.0)
    assert (s.x[0], s.y[0]) == (1.0, 1.0)


def test_sogda_examples():
    p = decoupled()
    s0 = start(p, "sogda")
    s1 = sogda_step(p, s0, 0.5)
    g = sgda_step(p, start(p, "sgda"), 0.5)
    assert (s1.x[0], s1.y[0]) == (g.x[0], g.y[0])
    s2 = sogda_step(p, s1, 0.5)
    assert (s2.x[0], s2.y[0]) == pytest.approx((0.5, 0.5))
    assert (sogda_step(p, s0, 0.0).x[0]) == 1.0


def test_apd_contraction_bound(rng):
    theta, done = 0.9, 0
    while done < 5:
        p = QuadraticSaddle.random(3, 2, rng)
        if max(theta_thresholds(p.profile)) > theta:
            continue
        done += 1
        spec = SolverSpec.apd(p.profile, theta)
        x0, y0 = rng.standard_normal(3), rng.standard_normal(2)
        vals = []
        run(p, spec, (x0, y0), 500, recorder=lambda k, x, y: vals.append(
            distance_potential(p.profile, theta, x, y, 0.0, 0.0)))
        d0 = initial_gap(p.profile, x0, y0, 0.0, 0.0)
        ks = np.arange(1, 501)
        assert np.all(np.array(vals) <= theta**ks * d0 * (1 + 1e-8))


def _noisy_run(seed, kind="sapd", n=200):
    p = QuadraticSaddle(1.0, 2.0, np.array([[0.5, -0.3]]), noise_sigma=0.3)
    spec = SolverSpec.sapd(p.profile, 0.9) if kind == "sapd" else SolverSpec.baseline(kind, p.profile)
    rec = Recorder((np.zeros(2), np.zeros(1)), (np.ones(2), np.ones(1)))
    rng = PathStreams.from_seed(seed, (0,), 4)
    return run(p, spec, (np.ones((4, 2)), np.ones((4, 1))), n, rng, rec)


@pytest.mark.parametrize("kind", ["sapd", "sgda", "smp", "sogda"])
def test_same_seed_bit_identical(kind):
    a, b = _noisy_run(7, kind), _noisy_run(7, kind)
    assert a.to_csv() == b.to_csv()
    assert not np.array_equal(a.rel_eds, _noisy_run(8, kind).rel_eds)


def test_record_length_and_csv_columns():
    rec = _noisy_run(1, n=37)
    assert len(rec.k) == 37 and rec.rel_eds.shape == (37, 4)
    head = rec.to_csv().splitlines()[0].split(",")
    assert head[0] == "k" and head[1].startswith("rel_eds")


def test_csv_snapshots():
    p = decoupled()
    rec = Recorder((np.zeros(1), np.zeros(1)), (ONE, ONE), snapshot_at=[2])
    out = run(p, SolverSpec("sgda", eta=0.5), (ONE, ONE), 3, recorder=rec).to_csv(with_snapshots=True)
    rows = [r.split(",") for r in out.splitlines()]
    assert rows[0] == ["k", "rel_eds", "z_0", "z_1"]
    assert rows[2][2:] == ["0.25", "0.25"] and rows[1][2:] == ["", ""]


@pytest.mark.parametrize("kind", ["sapd", "sogda"])
def test_markov_replay_from_serialized_state(kind):
    p = QuadraticSaddle(1.0, 2.0, np.array([[0.5, -0.3]]), noise_sigma=0.3)
    spec = SolverSpec.sapd(p.profile, 0.9) if kind == "sapd" else SolverSpec.baseline(kind, p.profile)
    rng = PathStreams.from_seed(3, (0,), 2)
    mid = run(p, spec, (np.ones((2, 2)), np.ones((2, 1))), 25, rng).final_state
    saved = json.dumps(mid.to_dict())
    rng_copy = copy.deepcopy(rng)
    a = continue_run(p, spec, mid, 30, rng)
    b = continue_run(p, spec, IterateState.from_dict(json.loads(saved)), 30, rng_copy)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)


def test_projected_iterates_feasible():
    data = synthetic_dataset(40, 4, np.random.default_rng(0))
    p = RegDroProblem(data, 0.1, 10.0, r=1.0, D_x=0.5, batch_size=5)
    for spec in (SolverSpec.sapd(p.profile, 0.95), SolverSpec.baseline("smp", p.profile)):
        rng = PathStreams.from_seed(0, (0,), 3)
        xs, ys = [], []
        run(p, spec, (np.full((3, 4), 2.0), np.full((3, 40), 1 / 40)), 100, rng,
            recorder=lambda k, x, y: (xs.append(x), ys.append(y)))
        assert all(p.constraint_x.contains(x, tol=1e-9) for x in xs)
        assert all(p.constraint_y.contains(y, tol=1e-9) for y in ys)


def test_relative_eds_examples():
    z0, zs = (np.array([2.0]), np.array([0.0])), (np.zeros(1), np.zeros(1))
    assert relative_eds(z0, zs, z0) == 1.0
    assert relative_eds(zs, zs, z0) == 0.0
    assert relative_eds((np.array([1.0]), np.zeros(1)), zs, z0) == pytest.approx(0.25)
    with pytest.raises(ZeroDivisionError):
        relative_eds(z0, zs, zs)


def test_baseline_step_rule():
    prof = CurvatureProfile(0.1, 10.0, 3.0, 20.0, 10.0)
    assert baseline_lipschitz(prof) == 20.0
    assert SolverSpec.baseline("sgda", prof).eta == pytest.approx(1 / 20)
    assert SolverSpec.baseline("sogda", prof).eta == pytest.approx(1 / 20)
    assert SolverSpec.baseline("smp", prof).eta == pytest.approx(1 / np.sqrt(20))


def test_spec_validation():
    with pytest.raises(ValueError):
        SolverSpec("sapd")
    with pytest.raises(ValueError):
        SolverSpec("sgda")
    with pytest.raises(ValueError):
        SolverSpec("newton", eta=1.0)
    assert SolverSpec.apd(CurvatureProfile(1, 1, 1), 0.9).noise is False


def test_run_rejects_zero_iterations():
    with pytest.raises(ValueError):
        run(decoupled(), SolverSpec("sgda", eta=0.1), (ONE, ONE), 0)
