"""IMU preintegration between keyframes and the inertial residual.

Tangent ordering of a keyframe state (used by every Jacobian and the solver)::

    [dp(0:3), dtheta(3:6), dv(6:9), dba(9:12), dbg(12:15)]

The preintegration covariance is kept in propagation order
``[dtheta, dbeta, dalpha, dba, dbg]``; :meth:`PreintDelta.residual_covariance`
permutes it into residual order.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConfigError, EmptyStreamError, OrderingError
from .manifold import (UnitQuat, boxminus, exp_matrix, right_jacobian,
                       right_jacobian_inv, skew, so3_exp, so3_log)

GRAVITY = np.array([0.0, 0.0, -9.81])

# propagation-order indices
TH, BE, AL, BA, BG = slice(0, 3), slice(3, 6), slice(6, 9), slice(9, 12), slice(12, 15)
# residual / tangent-order indices
P, R, V = slice(0, 3), slice(3, 6), slice(6, 9)

# residual row k takes propagation row _PERM[k]
_PERM = np.r_[6:9, 0:3, 3:6, 9:15]


@dataclass(frozen=True)
class ImuSample:
    t: float
    gyro: np.ndarray
    accel: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gyro, dtype=float).reshape(3)
        a = np.asarray(self.accel, dtype=float).reshape(3)
        if not (np.isfinite(self.t) and np.all(np.isfinite(g)) and np.all(np.isfinite(a))):
            raise ValueError("non-finite IMU sample")
        object.__setattr__(self, "gyro", g)
        object.__setattr__(self, "accel", a)


@dataclass(frozen=True)
class ImuState:
    p: np.ndarray
    v: np.ndarray
    q: UnitQuat
    ba: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bg: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for name in ("p", "v", "ba", "bg"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(3))

    @property
    def R(self) -> np.ndarray:
        return self.q.matrix()

    def boxplus(self, dx) -> "ImuState":
        dx = np.asarray(dx, dtype=float)
        return ImuState(self.p + dx[0:3], self.v + dx[6:9], self.q * so3_exp(dx[3:6]),
                        self.ba + dx[9:12], self.bg + dx[12:15])

    def boxminus(self, ref: "ImuState") -> np.ndarray:
        """Tangent ``d`` with ``ref.boxplus(d) == self``."""
        return np.concatenate([self.p - ref.p, boxminus(self.q, ref.q), self.v - ref.v,
                               self.ba - ref.ba, self.bg - ref.bg])

    def check_bounds(self, max_ba: float = 1.0, max_bg: float = 0.5) -> bool:
        return bool(np.linalg.norm(self.ba) < max_ba and np.linalg.norm(self.bg) < max_bg)


@dataclass(frozen=True)
class NoiseParams:
    sigma_g: float = 1.7e-4      # rad/s/sqrt(Hz)
    sigma_a: float = 2.0e-3      # m/s^2/sqrt(Hz)
    sigma_bg: float = 1.9e-5     # rad/s^2/sqrt(Hz)
    sigma_ba: float = 3.0e-3     # m/s^3/sqrt(Hz)
    gravity: np.ndarray = field(default_factory=lambda: GRAVITY.copy())
    allow_any_gravity: bool = False

    def __post_init__(self):
        object.__setattr__(self, "gravity", np.asarray(self.gravity, dtype=float).reshape(3))
        if min(self.sigma_g, self.sigma_a, self.sigma_bg, self.sigma_ba) <= 0:
            raise ConfigError("noise sigmas must be positive")
        g = np.linalg.norm(self.gravity)
        if not self.allow_any_gravity and not 9.5 <= g <= 10.1:
            raise ConfigError(f"|gravity| = {g} outside [9.5, 10.1]")


@dataclass(frozen=True, eq=False)
class PreintDelta:
    dt_total: float
    alpha: np.ndarray
    beta: np.ndarray
    gamma: UnitQuat
    J_ba: np.ndarray      # 9x3, rows [theta, beta, alpha]
    J_bg: np.ndarray      # 9x3, rows [theta, beta, alpha]
    cov: np.ndarray       # 15x15, [theta, beta, alpha, ba, bg]
    bias_lin: tuple
    samples: tuple = ()
    noise: NoiseParams | None = None

    def residual_covariance(self) -> np.ndarray:
        return self.cov[np.ix_(_PERM, _PERM)]

    @cached_property
    def _info(self):
        info = np.linalg.inv(self.residual_covariance())
        info = 0.5 * (info + info.T)
        return info, np.linalg.cholesky(info).T

    def information(self) -> np.ndarray:
        return self._info[0]

    def sqrt_information(self) -> np.ndarray:
        """Upper factor ``S`` with ``S.T @ S == information``."""
        return self._info[1]


def _check_stream(samples):
    if len(samples) < 2:
        raise EmptyStreamError(f"need at least 2 IMU samples, got {len(samples)}")
    for k in range(1, len(samples)):
        if not samples[k].t > samples[k - 1].t:
            raise OrderingError(f"IMU timestamps not increasing at index {k}")


def preintegrate(samples, bias_lin, noise: NoiseParams) -> PreintDelta:
    """Midpoint preintegration of ``samples`` at the bias linearization point.

    Gravity is not applied; it enters only through :func:`imu_residual`.
    """
    samples = tuple(samples)
    _check_stream(samples)
    ba0 = np.asarray(bias_lin[0], dtype=float).reshape(3)
    bg0 = np.asarray(bias_lin[1], dtype=float).reshape(3)

    alpha = np.zeros(3)
    beta = np.zeros(3)
    Rk = np.eye(3)
    gamma = UnitQuat.identity()
    jac = np.eye(15)
    cov = np.zeros((15, 15))
    I3 = np.eye(3)
    total = 0.0

    for s0, s1 in zip(samples[:-1], samples[1:]):
        dt = s1.t - s0.t
        total += dt
        w = 0.5 * (s0.gyro + s1.gyro) - bg0
        a0 = s0.accel - ba0
        a1 = s1.accel - ba0
        dq = so3_exp(w * dt)
        dR = exp_matrix(w * dt)
        R1 = Rk @ dR
        a_mid = 0.5 * (Rk @ a0 + R1 @ a1)

        Jr = right_jacobian(w * dt) * dt
        Ra1 = R1 @ skew(a1)
        F = np.eye(15)
        F[TH, TH] = dR.T
        F[TH, BG] = -Jr
        # d(a_mid)/d(theta, ba, bg)
        da_th = -0.5 * (Rk @ skew(a0) + Ra1 @ dR.T)
        da_ba = -0.5 * (Rk + R1)
        da_bg = 0.5 * Ra1 @ Jr
        F[BE, TH] = dt * da_th
        F[BE, BA] = dt * da_ba
        F[BE, BG] = dt * da_bg
        F[AL, TH] = 0.5 * dt * dt * da_th
        F[AL, BE] = dt * I3
        F[AL, BA] = 0.5 * dt * dt * da_ba
        F[AL, BG] = 0.5 * dt * dt * da_bg

        # noise inputs [n_g, n_a] with discrete variance sigma^2 / dt
        G = np.zeros((15, 6))
        G[TH, 0:3] = -Jr
        G[BE, 0:3] = dt * da_bg
        G[BE, 3:6] = dt * da_ba
        G[AL, 0:3] = 0.5 * dt * dt * da_bg
        G[AL, 3:6] = 0.5 * dt * dt * da_ba
        qn = np.r_[np.full(3, noise.sigma_g ** 2 / dt), np.full(3, noise.sigma_a ** 2 / dt)]

        cov = F @ cov @ F.T + (G * qn) @ G.T
        cov[BA, BA] += noise.sigma_ba ** 2 * dt * I3
        cov[BG, BG] += noise.sigma_bg ** 2 * dt * I3
        jac = F @ jac

        alpha = alpha + beta * dt + 0.5 * a_mid * dt * dt
        beta = beta + a_mid * dt
        gamma = gamma * dq
        Rk = gamma.matrix()

    cov = 0.5 * (cov + cov.T)
    return PreintDelta(
        dt_total=total, alpha=alpha, beta=beta, gamma=gamma,
        J_ba=jac[0:9, BA].copy(), J_bg=jac[0:9, BG].copy(), cov=cov,
        bias_lin=(ba0, bg0), samples=samples, noise=noise,
    )


def bias_correct(delta: PreintDelta, ba_new, bg_new):
    """First-order bias update of the deltas; returns ``(alpha, beta, gamma)``."""
    dba = np.asarray(ba_new, dtype=float) - delta.bias_lin[0]
    dbg = np.asarray(bg_new, dtype=float) - delta.bias_lin[1]
    alpha = delta.alpha + delta.J_ba[AL] @ dba + delta.J_bg[AL] @ dbg
    beta = delta.beta + delta.J_ba[BE] @ dba + delta.J_bg[BE] @ dbg
    gamma = delta.gamma * so3_exp(delta.J_bg[TH] @ dbg)
    return alpha, beta, gamma


def needs_repropagation(delta: PreintDelta, ba_new, bg_new,
                        ba_thresh: float = 1e-1, bg_thresh: float = 1e-2) -> bool:
    return bool(np.linalg.norm(np.asarray(ba_new) - delta.bias_lin[0]) > ba_thresh
                or np.linalg.norm(np.asarray(bg_new) - delta.bias_lin[1]) > bg_thresh)


def predict(xi: ImuState, delta: PreintDelta, gravity=GRAVITY) -> ImuState:
    """Propagate ``xi`` through ``delta`` (the state at which the residual vanishes)."""
    T = delta.dt_total
    alpha, beta, gamma = bias_correct(delta, xi.ba, xi.bg)
    Ri = xi.R
    return ImuState(
        p=xi.p + xi.v * T + 0.5 * gravity * T * T + Ri @ alpha,
        v=xi.v + gravity * T + Ri @ beta,
        q=xi.q * gamma,
        ba=xi.ba.copy(), bg=xi.bg.copy(),
    )


def imu_residual(delta: PreintDelta, xi: ImuState, xj: ImuState, gravity=GRAVITY):
    """Inertial residual ``[p, theta, v, ba, bg]`` and its Jacobians wrt both states."""
    gravity = np.asarray(gravity, dtype=float)
    T = delta.dt_total
    alpha, beta, gamma = bias_correct(delta, xi.ba, xi.bg)
    Ri = xi.R
    RiT = Ri.T
    dp = RiT @ (xj.p - xi.p - xi.v * T - 0.5 * gravity * T * T)
    dv = RiT @ (xj.v - xi.v - gravity * T)
    q_err = gamma.conj() * xi.q.conj() * xj.q
    r_th = so3_log(q_err)

    r = np.empty(15)
    r[P] = dp - alpha
    r[R] = r_th
    r[V] = dv - beta
    r[9:12] = xj.ba - xi.ba
    r[12:15] = xj.bg - xi.bg

    Jri = right_jacobian_inv(r_th)
    RE = q_err.matrix()
    phi = delta.J_bg[TH] @ (xi.bg - delta.bias_lin[1])

    Ji = np.zeros((15, 15))
    Jj = np.zeros((15, 15))
    I3 = np.eye(3)

    Ji[P, P] = -RiT
    Ji[P, R] = skew(dp)
    Ji[P, V] = -RiT * T
    Ji[P, 9:12] = -delta.J_ba[AL]
    Ji[P, 12:15] = -delta.J_bg[AL]
    Jj[P, P] = RiT

    Ji[R, R] = -Jri @ xj.R.T @ Ri
    Ji[R, 12:15] = -Jri @ RE.T @ right_jacobian(phi) @ delta.J_bg[TH]
    Jj[R, R] = Jri

    Ji[V, R] = skew(dv)
    Ji[V, V] = -RiT
    Ji[V, 9:12] = -delta.J_ba[BE]
    Ji[V, 12:15] = -delta.J_bg[BE]
    Jj[V, V] = RiT

    Ji[9:12, 9:12] = -I3
    Jj[9:12, 9:12] = I3
    Ji[12:15, 12:15] = -I3
    Jj[12:15, 12:15] = I3
    return r, Ji, Jj
