"""Analytic-vs-central-difference checks for every residual Jacobian.

Each suite draws random but well-posed configurations (positive depths,
non-degenerate baselines) and compares the analytic Jacobian with a central
difference taken through the state's ``boxplus``. The error metric is
``||J - J_fd||_F / max(||J_fd||_F, 1e-8)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imu import ImuSample, ImuState, NoiseParams, imu_residual, predict, preintegrate
from .manifold import UnitQuat, so3_exp
from .simulator import philox
from .visual import Extrinsics, epipolar_propagated, epipolar_residual, reprojection_residual

STEP = 1e-6
TOLERANCE = 1e-5


@dataclass
class SuiteResult:
    name: str
    trials: int
    max_error: float
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return self.trials > 0 and self.max_error < self.tolerance

    def __str__(self):
        status = "ok" if self.passed else "FAIL"
        return f"{self.name:<24} trials={self.trials:<4d} max_rel_err={self.max_error:.2e}  {status}"


def relative_error(J, J_fd) -> float:
    return float(np.linalg.norm(J - J_fd) / max(np.linalg.norm(J_fd), 1e-8))


def numeric_jacobian(f, x: ImuState, h: float = STEP) -> np.ndarray:
    """Central difference of ``f`` with respect to the 15-dof tangent of ``x``."""
    f0 = np.atleast_1d(f(x))
    J = np.zeros((f0.size, 15))
    for k in range(15):
        d = np.zeros(15)
        d[k] = h
        J[:, k] = (np.atleast_1d(f(x.boxplus(d))) - np.atleast_1d(f(x.boxplus(-d)))) / (2 * h)
    return J


def _rot(rng, scale=np.pi):
    return so3_exp(rng.uniform(-1, 1, 3) * scale / np.sqrt(3))


def random_state(rng, pos_scale=3.0) -> ImuState:
    return ImuState(rng.normal(0, pos_scale, 3), rng.normal(0, 1, 3), _rot(rng),
                    rng.normal(0, 0.05, 3), rng.normal(0, 0.01, 3))


def random_extrinsics(rng) -> Extrinsics:
    return Extrinsics(_rot(rng, 0.5) * UnitQuat.from_matrix(
        np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])), rng.normal(0, 0.05, 3))


def _camera(x: ImuState, ext: Extrinsics):
    R = x.R @ ext.R
    return R, x.p + x.R @ ext.p_ic


def _visual_config(rng):
    """Two states that both see a point at 2-15 m, with noisy bearings."""
    ext = random_extrinsics(rng)
    while True:
        xi = random_state(rng)
        xj = random_state(rng)
        Ri, ci = _camera(xi, ext)
        Rj, cj = _camera(xj, ext)
        if np.linalg.norm(ci - cj) < 0.1:
            continue
        P = ci + Ri @ np.array([*rng.uniform(-0.5, 0.5, 2), 1.0]) * rng.uniform(2, 15)
        pi, pj = Ri.T @ (P - ci), Rj.T @ (P - cj)
        if pi[2] < 0.5 or pj[2] < 0.5:
            continue
        zi = np.array([*(pi[:2] / pi[2] + rng.normal(0, 0.01, 2)), 1.0])
        zj = np.array([*(pj[:2] / pj[2] + rng.normal(0, 0.01, 2)), 1.0])
        return xi, xj, ext, zi, zj, 1.0 / pi[2]


def check_epipolar(trials: int = 100, seed: int = 0) -> SuiteResult:
    rng = philox(seed, 101)
    worst = 0.0
    for _ in range(trials):
        xi, xj, ext, zi, zj, _lam = _visual_config(rng)
        _, Ji, Jj = epipolar_residual(xi, xj, ext, zi, zj)
        Ni = numeric_jacobian(lambda x: epipolar_residual(x, xj, ext, zi, zj)[0], xi)
        Nj = numeric_jacobian(lambda x: epipolar_residual(xi, x, ext, zi, zj)[0], xj)
        worst = max(worst, relative_error(np.atleast_2d(Ji), Ni), relative_error(np.atleast_2d(Jj), Nj))
    return SuiteResult("epipolar_residual", trials, worst)


def check_epipolar_propagated(trials: int = 100, seed: int = 0) -> SuiteResult:
    rng = philox(seed, 103)
    worst = 0.0
    for _ in range(trials):
        xi, xj, ext, zi, zj, _lam = _visual_config(rng)
        # off the epipolar plane so the scale derivative is exercised
        zj = zj + np.array([*rng.normal(0, 0.02, 2), 0.0])
        _, Ji, Jj = epipolar_propagated(xi, xj, ext, zi, zj)
        Ni = numeric_jacobian(lambda x: epipolar_propagated(x, xj, ext, zi, zj)[0], xi)
        Nj = numeric_jacobian(lambda x: epipolar_propagated(xi, x, ext, zi, zj)[0], xj)
        worst = max(worst, relative_error(np.atleast_2d(Ji), Ni), relative_error(np.atleast_2d(Jj), Nj))
    return SuiteResult("epipolar_propagated", trials, worst)


def check_reprojection(trials: int = 100, seed: int = 0) -> SuiteResult:
    rng = philox(seed, 102)
    worst = 0.0
    for _ in range(trials):
        xi, xj, ext, zi, zj, lam = _visual_config(rng)
        lam *= rng.uniform(0.9, 1.1)
        _, Ji, Jj, Jl = reprojection_residual(xi, xj, ext, zi, zj, lam)
        Ni = numeric_jacobian(lambda x: reprojection_residual(x, xj, ext, zi, zj, lam)[0], xi)
        Nj = numeric_jacobian(lambda x: reprojection_residual(xi, x, ext, zi, zj, lam)[0], xj)
        h = STEP * lam
        Nl = (reprojection_residual(xi, xj, ext, zi, zj, lam + h)[0]
              - reprojection_residual(xi, xj, ext, zi, zj, lam - h)[0]) / (2 * h)
        worst = max(worst, relative_error(Ji, Ni), relative_error(Jj, Nj), relative_error(Jl, Nl))
    return SuiteResult("reprojection_residual", trials, worst)


def random_preintegration(rng, n: int = 40, rate: float = 200.0, noise: NoiseParams | None = None):
    noise = noise or NoiseParams()
    t = np.arange(n + 1) / rate
    gyro = rng.normal(0, 0.5, 3) + rng.normal(0, 0.2, (n + 1, 3))
    accel = np.array([0.0, 0.0, 9.81]) + rng.normal(0, 1.0, 3) + rng.normal(0, 0.5, (n + 1, 3))
    samples = [ImuSample(float(t[k]), gyro[k], accel[k]) for k in range(n + 1)]
    bias = (rng.normal(0, 0.05, 3), rng.normal(0, 0.01, 3))
    return preintegrate(samples, bias, noise)


def check_imu(trials: int = 100, seed: int = 0) -> SuiteResult:
    rng = philox(seed, 103)
    worst = 0.0
    for _ in range(trials):
        delta = random_preintegration(rng)
        xi = random_state(rng)
        guess = predict(xi, delta)
        xj = guess.boxplus(rng.normal(0, 0.05, 15))
        _, Ji, Jj = imu_residual(delta, xi, xj)
        Ni = numeric_jacobian(lambda x: imu_residual(delta, x, xj)[0], xi)
        Nj = numeric_jacobian(lambda x: imu_residual(delta, xi, x)[0], xj)
        worst = max(worst, relative_error(Ji, Ni), relative_error(Jj, Nj))
    return SuiteResult("imu_residual", trials, worst)


SUITES = (check_epipolar, check_epipolar_propagated, check_reprojection, check_imu)


def run_all(trials: int = 100, seed: int = 0) -> list:
    return [suite(trials, seed) for suite in SUITES]
