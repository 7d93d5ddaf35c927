"""Parameter rules, admissibility certificate and bound constants for SAPD."""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np

EIG_TOL = 1e-10


class ThresholdWarning(UserWarning):
    """Momentum parameter below the admissibility threshold of the rule."""


@dataclass(frozen=True)
class CurvatureProfile:
    """Strong convexity/concavity moduli and block Lipschitz constants."""

    mu_x: float
    mu_y: float
    L_xx: float = 0.0
    L_yx: float = 0.0
    L_yy: float = 0.0

    def __post_init__(self):
        if not (self.mu_x > 0 and self.mu_y > 0):
            raise ValueError("mu_x and mu_y must be positive")
        if min(self.L_xx, self.L_yx, self.L_yy) < 0:
            raise ValueError("Lipschitz constants must be nonnegative")
        if self.L_xx < self.mu_x:
            warnings.warn(
                f"L_xx={self.L_xx} < mu_x={self.mu_x}; profile is not a valid "
                "smooth strongly convex description",
                stacklevel=3,
            )

    @property
    def kappa_x(self) -> float:
        return self.L_xx / self.mu_x

    @property
    def kappa_y(self) -> float:
        return self.L_yy / self.mu_y

    @property
    def kappa_yx(self) -> float:
        return self.L_yx / math.sqrt(self.mu_x * self.mu_y)


@dataclass(frozen=True)
class SapdParams:
    theta: float
    tau: float
    sigma: float
    alpha: float
    theta_hat_1: float = 0.0
    theta_hat_2: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.theta < 1.0:
            raise ValueError(f"theta must lie in (0, 1), got {self.theta}")
        if self.tau <= 0 or self.sigma <= 0:
            raise ValueError("tau and sigma must be positive")
        if self.alpha < 0 or not self.alpha * self.sigma < 1.0:
            raise ValueError("need 0 <= alpha * sigma < 1")

    @property
    def theta_hat(self) -> float:
        return max(self.theta_hat_1, self.theta_hat_2)

    @property
    def above_threshold(self) -> bool:
        return self.theta >= self.theta_hat


@dataclass(frozen=True)
class CertificateReport:
    scalar_ok: bool
    scalar_slack: float
    min_eig_full: float
    min_eig_g1: float
    min_eig_g2: float
    passed: bool

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pass"] = d.pop("passed")
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def theta_thresholds(profile: CurvatureProfile) -> tuple[float, float]:
    """Return the two lower bounds on theta that make the rule admissible.

    A vanishing ``kappa_y`` gives the continuous limit ``theta_hat_2 = 0``.
    """
    s = profile.kappa_x + 4.0 * profile.kappa_yx**2
    theta_hat_1 = s / (1.0 + s)  # == 1 / (1 + 1/s), finite at s = 0
    ky = profile.kappa_y
    if ky == 0.0:
        theta_hat_2 = 0.0
    else:
        # 2 / (sqrt((1+e)^2 + 4e) + 1 + e) with e = 1/(8 ky^2), scaled by u = 1/e
        # so that tiny and huge ky stay finite
        u = 8.0 * ky * ky
        theta_hat_2 = 2.0 * u / (math.hypot(u + 1.0, 2.0 * math.sqrt(u)) + u + 1.0)
    return theta_hat_1, theta_hat_2


def params_from_theta(profile: CurvatureProfile, theta: float) -> SapdParams:
    """Build ``tau, sigma, alpha`` from the momentum parameter ``theta``."""
    if not 0.0 < theta < 1.0:
        raise ValueError(f"theta must lie in (0, 1), got {theta}")
    th1, th2 = theta_thresholds(profile)
    ratio = (1.0 - theta) / theta
    sigma = ratio / profile.mu_y
    params = SapdParams(
        theta=theta,
        tau=ratio / profile.mu_x,
        sigma=sigma,
        alpha=(1.0 - theta) / (2.0 * sigma),
        theta_hat_1=th1,
        theta_hat_2=th2,
    )
    if not params.above_threshold:
        warnings.warn(
            f"theta={theta:.6g} is below the admissibility threshold "
            f"{params.theta_hat:.6g}",
            ThresholdWarning,
            stacklevel=2,
        )
    return params


def certificate_matrices(profile: CurvatureProfile, params: SapdParams):
    """Return the 3x3 certificate matrix and its two-block split ``(G1, G2)``."""
    p = profile
    a, th = params.alpha, params.theta
    full = np.array(
        [
            [1.0 / params.tau - p.L_xx, 0.0, -p.L_yx],
            [0.0, 1.0 / params.sigma - a, -p.L_yy],
            [-p.L_yx, -p.L_yy, a / th],
        ]
    )
    g1 = np.array(
        [
            [1.0 / params.tau - p.L_xx, 0.0, -p.L_yx],
            [0.0, 0.0, 0.0],
            [-p.L_yx, 0.0, a / (2.0 * th)],
        ]
    )
    g2 = full - g1
    return full, g1, g2


def check_admissibility(
    profile: CurvatureProfile, params: SapdParams, tol: float = EIG_TOL
) -> CertificateReport:
    """Evaluate the scalar step-size condition and the 3x3 PSD certificate.

    Never raises on failure; a failing certificate is reported with
    ``passed=False`` so that sweeps can tabulate the admissible region.
    """
    full, g1, g2 = certificate_matrices(profile, params)
    if not np.all(np.isfinite(full)):
        raise FloatingPointError("non-finite entry in the certificate matrix")
    eigs = [float(np.linalg.eigvalsh(m)[0]) for m in (full, g1, g2)]
    bound = (1.0 - params.theta) / params.theta
    slack = min(params.tau * profile.mu_x, params.sigma * profile.mu_y) - bound
    scalar_ok = slack >= -tol * max(1.0, bound)
    return CertificateReport(
        scalar_ok=bool(scalar_ok),
        scalar_slack=float(slack),
        min_eig_full=eigs[0],
        min_eig_g1=eigs[1],
        min_eig_g2=eigs[2],
        passed=bool(scalar_ok and eigs[0] >= -tol),
    )


def xi_tilde(profile: CurvatureProfile, theta: float) -> float:
    """Noise multiplier of the expected-distance bound under the rule."""
    return ((1.0 - theta) / theta) * (
        2.0 / profile.mu_x
        + (4.0 / profile.mu_y) * ((1.0 + theta) ** 2 + theta**2)
    )


def bound_constants(
    profile: CurvatureProfile, params: SapdParams, noise_var: float = 1.0
) -> tuple[float, float, float]:
    """Return ``(xi_tilde, zeta, K)`` for the rule-constructed ``params``.

    ``zeta`` and ``K`` are the contraction factor and additive constant of the
    Lyapunov drift inequality; ``K`` scales linearly with ``noise_var``, the
    second-moment bound of the gradient noise.
    """
    th = params.theta
    zeta = th / (1.0 - params.alpha * params.sigma)
    xi_tsth = params.tau + 2.0 * params.sigma * ((1.0 + th) ** 2 + th**2)
    return xi_tilde(profile, th), zeta, th * xi_tsth * noise_var


def drift_rate(theta: float) -> float:
    """Geometric rate ``2 theta / (1 + theta)`` of convergence to stationarity."""
    return 2.0 * theta / (1.0 + theta)


def distance_potential(profile, theta, x, y, x_star, y_star):
    """``mu_x |x - x*|^2 + mu_y (1 + theta)/2 |y - y*|^2``, row-wise for batches."""
    dx = np.asarray(x) - x_star
    dy = np.asarray(y) - y_star
    return profile.mu_x * np.sum(dx * dx, axis=-1) + 0.5 * profile.mu_y * (
        1.0 + theta
    ) * np.sum(dy * dy, axis=-1)


def initial_gap(profile, x0, y0, x_star, y_star) -> float:
    dx = np.asarray(x0) - x_star
    dy = np.asarray(y0) - y_star
    return float(profile.mu_x * dx @ dx + profile.mu_y * dy @ dy)


def lyapunov(profile, theta, x, y, x_prev, y_prev, x_star, y_star):
    """Lyapunov function of the two-step Markov state ``(z_k, z_{k-1})``."""

    def sq(a, b):
        d = np.asarray(a) - b
        return np.sum(d * d, axis=-1)

    return (theta / (1.0 - theta)) * (
        0.25 * profile.mu_x * (sq(x, x_star) + sq(x_prev, x_star))
        + 0.125 * profile.mu_y * (1.0 + theta) * (sq(y, y_star) + sq(y_prev, y_star))
    )
