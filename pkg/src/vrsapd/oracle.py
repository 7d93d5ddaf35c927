"""Saddle-point problems with exact and stochastic first-order oracles."""
from __future__ import annotations

import math

import numpy as np
from scipy.special import expit, gammaln

from .params import CurvatureProfile, params_from_theta, theta_thresholds


class ConvergenceError(RuntimeError):
    """An iterative solve hit its iteration cap; ``last`` holds the final iterate."""

    def __init__(self, msg, last=None):
        super().__init__(msg)
        self.last = last


class SaddleProblem:
    """Interface of a min-max problem ``min_x max_y f(x, y)``.

    Gradient methods act on the last axis, so ``x`` of shape ``(P, dim_x)``
    evaluates ``P`` points at once.  ``rng`` is anything exposing
    ``standard_normal(size)`` and ``integers(low, high, size)``.
    """

    dim_x: int
    dim_y: int
    profile: CurvatureProfile
    constraint_x = None
    constraint_y = None
    known_saddle = None

    def value(self, x, y):
        raise NotImplementedError

    def grad_x(self, x, y):
        raise NotImplementedError

    def grad_y(self, x, y):
        raise NotImplementedError

    def stochastic_grad_x(self, x, y, rng):
        raise NotImplementedError

    def stochastic_grad_y(self, x, y, rng):
        raise NotImplementedError

    def hessian(self, x, y):
        """Full Hessian at a single point, or ``None`` when not available."""
        return None

    def noise_bound(self, p: int):
        """``delta_(p)`` such that ``E|noise|^p <= delta_(p)^p``, if known."""
        return None

    def project_x(self, x):
        return x if self.constraint_x is None else self.constraint_x.project(x)

    def project_y(self, y):
        return y if self.constraint_y is None else self.constraint_y.project(y)

    @property
    def constrained(self) -> bool:
        return self.constraint_x is not None or self.constraint_y is not None


class _GaussianNoise:
    """Additive isotropic Gaussian gradient noise, fresh at every call."""

    noise_sigma: float = 0.0

    def stochastic_grad_x(self, x, y, rng):
        g = self.grad_x(x, y)
        if self.noise_sigma > 0:
            g = g + self.noise_sigma * rng.standard_normal(np.shape(g))
        return g

    def stochastic_grad_y(self, x, y, rng):
        g = self.grad_y(x, y)
        if self.noise_sigma > 0:
            g = g + self.noise_sigma * rng.standard_normal(np.shape(g))
        return g

    def noise_bound(self, p: int) -> float:
        # E|eps|^p for eps ~ N(0, s^2 I_d) is s^p 2^(p/2) Gamma((d+p)/2) / Gamma(d/2)
        s = self.noise_sigma
        if s == 0:
            return 0.0
        d = max(self.dim_x, self.dim_y)
        log_m = p * math.log(s) + 0.5 * p * math.log(2.0) + gammaln((d + p) / 2) - gammaln(d / 2)
        return math.exp(log_m / p)


class QuadraticSaddle(_GaussianNoise, SaddleProblem):
    """``f = mu_x/2 |x|^2 + y^T C x - mu_y/2 |y|^2`` with its saddle at the origin."""

    def __init__(self, mu_x, mu_y, coupling, noise_sigma=0.0):
        self.mu_x = float(mu_x)
        self.mu_y = float(mu_y)
        self.coupling = np.atleast_2d(np.asarray(coupling, dtype=float))
        self.noise_sigma = float(noise_sigma)
        self.dim_y, self.dim_x = self.coupling.shape
        self.profile = CurvatureProfile(
            mu_x=self.mu_x,
            mu_y=self.mu_y,
            L_xx=self.mu_x,
            L_yx=float(np.linalg.norm(self.coupling, 2)),
            L_yy=self.mu_y,
        )
        self.known_saddle = (np.zeros(self.dim_x), np.zeros(self.dim_y))

    @classmethod
    def random(cls, dim_x, dim_y, rng, mu_range=(0.2, 5.0), coupling_scale=1.0, noise_sigma=0.0):
        lo, hi = np.log(mu_range[0]), np.log(mu_range[1])
        mu_x, mu_y = np.exp(rng.uniform(lo, hi, size=2))
        C = coupling_scale * rng.standard_normal((dim_y, dim_x))
        return cls(mu_x, mu_y, C, noise_sigma)

    def value(self, x, y):
        x, y = np.asarray(x), np.asarray(y)
        return (
            0.5 * self.mu_x * np.sum(x * x, axis=-1)
            + np.sum(y * (x @ self.coupling.T), axis=-1)
            - 0.5 * self.mu_y * np.sum(y * y, axis=-1)
        )

    def grad_x(self, x, y):
        return self.mu_x * np.asarray(x) + np.asarray(y) @ self.coupling

    def grad_y(self, x, y):
        return np.asarray(x) @ self.coupling.T - self.mu_y * np.asarray(y)

    def hessian(self, x, y):
        C = self.coupling
        return np.block(
            [
                [self.mu_x * np.eye(self.dim_x), C.T],
                [C, -self.mu_y * np.eye(self.dim_y)],
            ]
        )


class LogisticPerturbedSaddle(_GaussianNoise, SaddleProblem):
    """Scalar problem ``mu_x/2 x^2 + log(1+e^x) + tilt*x + c*x*y - mu_y/2 y^2``.

    The softplus term gives a nonzero third derivative at the saddle, which is
    what produces an O(1 - theta) stationary bias.  ``tilt`` moves the saddle
    away from ``x = 0``, where that third derivative vanishes.
    """

    dim_x = 1
    dim_y = 1

    def __init__(self, mu_x=1.0, mu_y=1.0, coupling=1.0, noise_sigma=0.0, tilt=0.0):
        self.mu_x = float(mu_x)
        self.mu_y = float(mu_y)
        self.c = float(coupling)
        self.tilt = float(tilt)
        self.noise_sigma = float(noise_sigma)
        self.profile = CurvatureProfile(
            mu_x=self.mu_x,
            mu_y=self.mu_y,
            L_xx=self.mu_x + 0.25,
            L_yx=abs(self.c),
            L_yy=self.mu_y,
        )
        self.known_saddle = None

    def value(self, x, y):
        x, y = np.asarray(x)[..., 0], np.asarray(y)[..., 0]
        return (
            0.5 * self.mu_x * x**2
            + np.logaddexp(0.0, x)
            + self.tilt * x
            + self.c * x * y
            - 0.5 * self.mu_y * y**2
        )

    def grad_x(self, x, y):
        x, y = np.asarray(x), np.asarray(y)
        return self.mu_x * x + expit(x) + self.tilt + self.c * y

    def grad_y(self, x, y):
        return self.c * np.asarray(x) - self.mu_y * np.asarray(y)

    def hessian(self, x, y):
        s = expit(float(np.asarray(x).ravel()[0]))
        return np.array([[self.mu_x + s * (1.0 - s), self.c], [self.c, -self.mu_y]])

    def third_derivative(self, x) -> float:
        s = expit(float(np.asarray(x).ravel()[0]))
        return s * (1.0 - s) * (1.0 - 2.0 * s)


def sample_gradients(problem: SaddleProblem, x, y, rng):
    """One independent stochastic draw of each partial gradient at ``(x, y)``."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.shape[-1] != problem.dim_x or y.shape[-1] != problem.dim_y:
        raise ValueError(
            f"expected dims ({problem.dim_x}, {problem.dim_y}), got ({x.shape[-1]}, {y.shape[-1]})"
        )
    gy = problem.stochastic_grad_y(x, y, rng)
    gx = problem.stochastic_grad_x(x, y, rng)
    return gx, gy


def gradient_residual(problem: SaddleProblem, x, y) -> float:
    """Projected-gradient residual; the plain gradient norm when unconstrained."""
    rx = x - problem.project_x(x - problem.grad_x(x, y))
    ry = y - problem.project_y(y + problem.grad_y(x, y))
    return float(math.sqrt(np.sum(rx * rx) + np.sum(ry * ry)))


def _newton_polish(problem, x, y, steps):
    dx = problem.dim_x
    for _ in range(steps):
        F = np.concatenate([problem.grad_x(x, y), problem.grad_y(x, y)])
        H = problem.hessian(x, y)
        step = np.linalg.solve(H, F)
        norm0 = np.linalg.norm(F)
        t = 1.0
        while t > 1e-8:
            xn, yn = x - t * step[:dx], y - t * step[dx:]
            Fn = np.concatenate([problem.grad_x(xn, yn), problem.grad_y(xn, yn)])
            if np.linalg.norm(Fn) <= (1.0 - 1e-4 * t) * norm0 or norm0 == 0:
                break
            t *= 0.5
        else:
            break
        x, y = xn, yn
    return x, y


def reference_solution(
    problem: SaddleProblem,
    tol_rel: float = 1e-4,
    max_iter: int = 1_000_000,
    theta: float | None = None,
    residual_tol: float = 1e-6,
    newton_steps: int = 5,
    init=None,
):
    """Approximate the saddle point with deterministic (noise-free) SAPD.

    Problems that expose a Hessian stop once the change of ``f`` between
    iterations drops below ``tol_rel`` (relative, with unit floor) and are then
    polished by damped Newton steps.  Other problems stop on the
    projected-gradient residual ``residual_tol``.
    """
    from .solvers import IterateState, sapd_step

    th1, th2 = theta_thresholds(problem.profile)
    if theta is None:
        theta = max(th1, th2, 0.9)
    params = params_from_theta(problem.profile, theta)
    if init is None:
        x0, y0 = np.zeros(problem.dim_x), np.zeros(problem.dim_y)
        if problem.constraint_y is not None:
            y0 = problem.project_y(np.full(problem.dim_y, 1.0 / problem.dim_y))
    else:
        x0, y0 = (np.asarray(v, dtype=float) for v in init)
    state = IterateState.start(problem, x0, y0, rng=None)
    has_hessian = problem.hessian(x0, y0) is not None
    f_prev = float(problem.value(x0, y0))
    for k in range(1, max_iter + 1):
        state = sapd_step(problem, state, params, rng=None)
        x, y = state.x, state.y
        if has_hessian:
            f = float(problem.value(x, y))
            if abs(f - f_prev) <= tol_rel * max(abs(f_prev), 1.0):
                return _newton_polish(problem, x, y, newton_steps)
            f_prev = f
        elif k % 10 == 0 and gradient_residual(problem, x, y) <= residual_tol:
            return x, y
    raise ConvergenceError(f"reference solve did not converge in {max_iter} iterations", (state.x, state.y))
