"""Rotation algebra shared by every factor.

Conventions (used everywhere in the package):

* Hamilton quaternions ``(w, x, y, z)``, passive, body-to-global: ``q.rotate(v_body)``
  gives the vector in the global frame.
* Canonical sign ``w >= 0`` so printed/written quaternions are deterministic.
* Tangent increments act on the right: ``q ⊞ dtheta = q ⊗ exp(dtheta)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SMALL_ANGLE = 1e-8


def skew(v) -> np.ndarray:
    """Cross-product matrix: ``skew(v) @ u == np.cross(v, u)``."""
    x, y, z = float(v[0]), float(v[1]), float(v[2])
    return np.array([[0.0, -z, y],
                     [z, 0.0, -x],
                     [-y, x, 0.0]])


def skew_batch(v: np.ndarray) -> np.ndarray:
    """Stack of cross-product matrices for an ``(n, 3)`` array."""
    n = v.shape[0]
    out = np.zeros((n, 3, 3))
    out[:, 0, 1] = -v[:, 2]
    out[:, 0, 2] = v[:, 1]
    out[:, 1, 0] = v[:, 2]
    out[:, 1, 2] = -v[:, 0]
    out[:, 2, 0] = -v[:, 1]
    out[:, 2, 1] = v[:, 0]
    return out


@dataclass(frozen=True)
class UnitQuat:
    w: float = 1.0
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    def __post_init__(self):
        w, x, y, z = float(self.w), float(self.x), float(self.y), float(self.z)
        n = math.sqrt(w * w + x * x + y * y + z * z)
        if not math.isfinite(n):
            raise ValueError(f"non-finite quaternion {(w, x, y, z)}")
        if n == 0.0:
            raise ValueError("zero quaternion")
        if w < 0.0:
            n = -n
        object.__setattr__(self, "w", w / n)
        object.__setattr__(self, "x", x / n)
        object.__setattr__(self, "y", y / n)
        object.__setattr__(self, "z", z / n)

    @classmethod
    def identity(cls) -> "UnitQuat":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_wxyz(cls, c) -> "UnitQuat":
        return cls(float(c[0]), float(c[1]), float(c[2]), float(c[3]))

    @classmethod
    def from_xyzw(cls, c) -> "UnitQuat":
        return cls(float(c[3]), float(c[0]), float(c[1]), float(c[2]))

    @classmethod
    def from_matrix(cls, R) -> "UnitQuat":
        R = np.asarray(R, dtype=float)
        tr = np.trace(R)
        if tr > 0.0:
            s = 2.0 * np.sqrt(tr + 1.0)
            return cls(0.25 * s, (R[2, 1] - R[1, 2]) / s,
                       (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s)
        i = int(np.argmax(np.diag(R)))
        if i == 0:
            s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
            return cls((R[2, 1] - R[1, 2]) / s, 0.25 * s,
                       (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s)
        if i == 1:
            s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
            return cls((R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s,
                       0.25 * s, (R[1, 2] + R[2, 1]) / s)
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        return cls((R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s,
                   (R[1, 2] + R[2, 1]) / s, 0.25 * s)

    @property
    def wxyz(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    @property
    def xyzw(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.w])

    @property
    def vec(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def conj(self) -> "UnitQuat":
        return UnitQuat(self.w, -self.x, -self.y, -self.z)

    def __mul__(self, other: "UnitQuat") -> "UnitQuat":
        w1, x1, y1, z1 = self.w, self.x, self.y, self.z
        w2, x2, y2, z2 = other.w, other.x, other.y, other.z
        return UnitQuat(
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        )

    def matrix(self) -> np.ndarray:
        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])

    def rotate(self, v) -> np.ndarray:
        return self.matrix() @ np.asarray(v, dtype=float)

    def __repr__(self):
        return f"UnitQuat(w={self.w:.12g}, x={self.x:.12g}, y={self.y:.12g}, z={self.z:.12g})"


def so3_exp(phi) -> UnitQuat:
    phi = np.asarray(phi, dtype=float)
    th2 = float(phi @ phi)
    th = np.sqrt(th2)
    if th < SMALL_ANGLE:
        # 4th-order series of cos(th/2) and sin(th/2)/th
        w = 1.0 - th2 / 8.0 + th2 * th2 / 384.0
        s = 0.5 - th2 / 48.0 + th2 * th2 / 3840.0
    else:
        w = np.cos(0.5 * th)
        s = np.sin(0.5 * th) / th
    return UnitQuat(w, s * phi[0], s * phi[1], s * phi[2])


def so3_log(q: UnitQuat) -> np.ndarray:
    """Rotation vector of ``q`` (angle in [0, pi])."""
    v = q.vec
    n = np.sqrt(float(v @ v))
    w = q.w
    if n < 0.5 * SMALL_ANGLE:
        # atan2(n, w) / n series, w ~ 1
        k = 2.0 / w * (1.0 - n * n / (3.0 * w * w))
    else:
        k = 2.0 * np.arctan2(n, w) / n
    return k * v


def boxplus(q: UnitQuat, dtheta) -> UnitQuat:
    return q * so3_exp(dtheta)


def boxminus(q: UnitQuat, q_ref: UnitQuat) -> np.ndarray:
    """Tangent vector ``d`` with ``q_ref ⊞ d == q``."""
    return so3_log(q_ref.conj() * q)


def exp_matrix(phi) -> np.ndarray:
    """Rodrigues rotation matrix, same as ``so3_exp(phi).matrix()``."""
    phi = np.asarray(phi, dtype=float)
    th2 = float(phi @ phi)
    K = skew(phi)
    if th2 < SMALL_ANGLE * SMALL_ANGLE:
        return np.eye(3) + K + 0.5 * K @ K
    th = np.sqrt(th2)
    return np.eye(3) + np.sin(th) / th * K + (1.0 - np.cos(th)) / th2 * K @ K


def right_jacobian(phi) -> np.ndarray:
    """``exp(phi + d) ≈ exp(phi) exp(Jr(phi) d)``."""
    phi = np.asarray(phi, dtype=float)
    th2 = float(phi @ phi)
    K = skew(phi)
    if th2 < 1e-10:
        return np.eye(3) - 0.5 * K + K @ K / 6.0
    th = np.sqrt(th2)
    return (np.eye(3) - (1.0 - np.cos(th)) / th2 * K
            + (th - np.sin(th)) / (th2 * th) * K @ K)


def right_jacobian_inv(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    th2 = float(phi @ phi)
    K = skew(phi)
    if th2 < 1e-10:
        return np.eye(3) + 0.5 * K + K @ K / 12.0
    th = np.sqrt(th2)
    c = 1.0 / th2 - (1.0 + np.cos(th)) / (2.0 * th * np.sin(th))
    return np.eye(3) + 0.5 * K + c * K @ K


def quats_to_matrices(qs) -> np.ndarray:
    """``(n, 3, 3)`` stack of rotation matrices for a sequence of UnitQuat."""
    return np.stack([q.matrix() for q in qs]) if len(qs) else np.zeros((0, 3, 3))
