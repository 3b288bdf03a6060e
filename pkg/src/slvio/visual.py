"""Visual factors: the structureless epipolar residual, the inverse-depth
reprojection residual used by the structure-based baseline, and the Huber kernel.

Jacobians returned by the batch functions cover only the ``[dp, dtheta]``
columns of each state (velocity and bias columns are identically zero);
the single-factor functions expand them to full 15-wide rows.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import CheiralityError, ConfigError, DegenerateBaseline
from .manifold import UnitQuat

BASELINE_GATE = 1e-6
MIN_DEPTH = 1e-2


@dataclass(frozen=True)
class Extrinsics:
    """Camera-to-IMU rotation ``R_ic`` and camera origin ``p_ic`` in the IMU frame."""
    R_ic: UnitQuat = field(default_factory=UnitQuat.identity)
    p_ic: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "p_ic", np.asarray(self.p_ic, dtype=float).reshape(3))

    @property
    def R(self) -> np.ndarray:
        return self.R_ic.matrix()


def bearing(x: float, y: float) -> np.ndarray:
    """Normalized image coordinate ``(x, y, 1)``."""
    if not (np.isfinite(x) and np.isfinite(y)) or abs(x) >= 5 or abs(y) >= 5:
        raise ValueError(f"bearing ({x}, {y}) outside field-of-view bound")
    return np.array([float(x), float(y), 1.0])


class PairPolicy(enum.Enum):
    ANCHOR = "anchor"
    ALL_PAIRS = "all-pairs"


@dataclass
class FeatureTrack:
    feature_id: int
    obs: list  # [(keyframe_index, bearing)], indices strictly increasing

    def __post_init__(self):
        idx = [k for k, _ in self.obs]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError(f"track {self.feature_id}: keyframe indices not increasing")

    @property
    def frames(self) -> list:
        return [k for k, _ in self.obs]


def epipolar_pairs(track: FeatureTrack, policy: PairPolicy = PairPolicy.ANCHOR) -> list:
    idx = track.frames
    if len(idx) < 2:
        return []
    if policy is PairPolicy.ANCHOR:
        return [(idx[0], j) for j in idx[1:]]
    return [(idx[a], idx[b]) for a in range(len(idx)) for b in range(a + 1, len(idx))]


def epipolar_batch(Ri, pi, Rj, pj, R_ic, p_ic, zi, zj):
    """Vectorized epipolar residuals for ``n`` keyframe pairs.

    Returns ``(r, Ji, Jj, baseline)`` with ``Ji, Jj`` of shape ``(n, 6)`` over
    ``[dp, dtheta]``. Callers gate on ``baseline``.
    """
    bi = zi @ R_ic.T
    bj = zj @ R_ic.T
    ai = np.einsum("nij,nj->ni", Ri, bi)
    aj = np.einsum("nij,nj->ni", Rj, bj)
    t = pi + Ri @ p_ic - pj - Rj @ p_ic
    nt = np.linalg.norm(t, axis=1)
    safe = np.where(nt > 0, nt, 1.0)
    u = t / safe[:, None]
    w = np.cross(ai, aj)
    r = np.einsum("ni,ni->n", u, w)
    gt = (w - u * r[:, None]) / safe[:, None]
    dai = np.cross(aj, u)
    daj = np.cross(u, ai)
    RiT_gt = np.einsum("nji,nj->ni", Ri, gt)
    RjT_gt = np.einsum("nji,nj->ni", Rj, gt)
    RiT_dai = np.einsum("nji,nj->ni", Ri, dai)
    RjT_daj = np.einsum("nji,nj->ni", Rj, daj)
    Ji = np.empty((len(r), 6))
    Jj = np.empty((len(r), 6))
    Ji[:, 0:3] = gt
    Ji[:, 3:6] = np.cross(p_ic, RiT_gt) + np.cross(bi, RiT_dai)
    Jj[:, 0:3] = -gt
    Jj[:, 3:6] = -np.cross(p_ic, RjT_gt) + np.cross(bj, RjT_daj)
    return r, Ji, Jj, nt


SCALE_FLOOR = 1e-4


def epipolar_propagated_batch(Ri, pi, Rj, pj, R_ic, p_ic, zi, zj):
    """Epipolar residuals divided by their first-order noise scale.

    Isotropic noise of std ``sigma`` on both normalized image planes gives the
    triple product a std of ``sigma * sqrt(s)`` with
    ``s = |P Mi'(aj x u)|^2 + |P Mj'(u x ai)|^2`` (``M = R R_ic``, ``P`` keeps the
    two image axes). Returns ``(r / sqrt(s + floor), Ji, Jj, baseline)``; the
    Jacobians include the derivative of the scale, without which the expected
    cost keeps a noise term that pulls ``t`` towards the bearings.
    """
    bi = zi @ R_ic.T
    bj = zj @ R_ic.T
    k = R_ic[:, 2]
    ai = np.einsum("nij,nj->ni", Ri, bi)
    aj = np.einsum("nij,nj->ni", Rj, bj)
    mi = Ri @ k
    mj = Rj @ k
    t = pi + Ri @ p_ic - pj - Rj @ p_ic
    nt = np.linalg.norm(t, axis=1)
    safe = np.where(nt > 0, nt, 1.0)
    u = t / safe[:, None]
    dot = lambda x, y: np.einsum("ni,ni->n", x, y)[:, None]

    A = np.cross(aj, u)                   # dr/dai
    B = np.cross(u, ai)                   # dr/daj
    w = np.cross(ai, aj)                  # dr/du
    r = dot(u, w)
    mA, mB = dot(mi, A), dot(mj, B)
    QA, QB = A - mA * mi, B - mB * mj
    s = dot(A, QA) + dot(B, QB)
    f = 1.0 / np.sqrt(s + SCALE_FLOOR)
    c = -0.5 * r * f ** 3

    e_u = f * w + c * 2.0 * (np.cross(ai, QB) - np.cross(aj, QA))
    e_ai = f * A - c * 2.0 * np.cross(u, QB)
    e_aj = f * B + c * 2.0 * np.cross(u, QA)
    e_mi = -c * 2.0 * mA * A
    e_mj = -c * 2.0 * mB * B
    gt = (e_u - u * dot(u, e_u)) / safe[:, None]

    RiT = lambda v: np.einsum("nji,nj->ni", Ri, v)
    RjT = lambda v: np.einsum("nji,nj->ni", Rj, v)
    Ji = np.empty((len(r), 6))
    Jj = np.empty((len(r), 6))
    Ji[:, 0:3] = gt
    Ji[:, 3:6] = np.cross(p_ic, RiT(gt)) + np.cross(bi, RiT(e_ai)) + np.cross(k, RiT(e_mi))
    Jj[:, 0:3] = -gt
    Jj[:, 3:6] = -np.cross(p_ic, RjT(gt)) + np.cross(bj, RjT(e_aj)) + np.cross(k, RjT(e_mj))
    return (r * f)[:, 0], Ji, Jj, nt


def _expand(J6):
    J = np.zeros(J6.shape[:-1] + (15,))
    J[..., 0:6] = J6
    return J


def epipolar_residual(xi, xj, ext: Extrinsics, zi, zj, baseline_gate: float = BASELINE_GATE):
    """Coplanarity residual of two bearings with the normalized camera baseline.

    Raises :class:`DegenerateBaseline` when the camera centers are closer than
    ``baseline_gate``; the caller drops the factor.
    """
    r, Ji, Jj, nt = epipolar_batch(
        xi.R[None], xi.p[None], xj.R[None], xj.p[None], ext.R, ext.p_ic,
        np.asarray(zi, dtype=float)[None], np.asarray(zj, dtype=float)[None])
    if nt[0] < baseline_gate:
        raise DegenerateBaseline(f"baseline {nt[0]:.3g} m below gate {baseline_gate:g} m")
    return float(r[0]), _expand(Ji[0]), _expand(Jj[0])


def epipolar_propagated(xi, xj, ext: Extrinsics, zi, zj, baseline_gate: float = BASELINE_GATE):
    """Single-factor form of :func:`epipolar_propagated_batch` (15-wide Jacobians)."""
    e, Ji, Jj, nt = epipolar_propagated_batch(
        xi.R[None], xi.p[None], xj.R[None], xj.p[None], ext.R, ext.p_ic,
        np.asarray(zi, dtype=float)[None], np.asarray(zj, dtype=float)[None])
    if nt[0] < baseline_gate:
        raise DegenerateBaseline(f"baseline {nt[0]:.3g} m below gate {baseline_gate:g} m")
    return float(e[0]), _expand(Ji[0]), _expand(Jj[0])


def reprojection_batch(Ri, pi, Rj, pj, R_ic, p_ic, zi, zj, lam):
    """Vectorized inverse-depth reprojection residuals.

    The feature is anchored in frame ``i`` at depth ``1/lam``. Returns
    ``(r (n,2), Ji (n,2,6), Jj (n,2,6), Jl (n,2), depth_j)``.
    """
    lam = np.asarray(lam, dtype=float)
    Pci = zi / lam[:, None]
    Pbi = Pci @ R_ic.T + p_ic
    Pw = np.einsum("nij,nj->ni", Ri, Pbi) + pi
    Pbj = np.einsum("nji,nj->ni", Rj, Pw - pj)
    Pcj = (Pbj - p_ic) @ R_ic
    z = Pcj[:, 2]
    zs = np.where(np.abs(z) > 1e-12, z, 1e-12)
    r = zj[:, :2] - Pcj[:, :2] / zs[:, None]
    n = len(lam)
    A = np.zeros((n, 2, 3))
    A[:, 0, 0] = -1.0 / zs
    A[:, 1, 1] = -1.0 / zs
    A[:, 0, 2] = Pcj[:, 0] / zs ** 2
    A[:, 1, 2] = Pcj[:, 1] / zs ** 2
    AR = A @ R_ic.T                        # d r / d Pbj
    M = np.einsum("nak,nlk->nal", AR, Rj)  # d r / d Pw
    Ji = np.empty((n, 2, 6))
    Jj = np.empty((n, 2, 6))
    Ji[:, :, 0:3] = M
    Ji[:, :, 3:6] = np.cross(Pbi[:, None, :], M @ Ri)
    Jj[:, :, 0:3] = -M
    Jj[:, :, 3:6] = np.cross(AR, Pbj[:, None, :])
    dPw_dl = np.einsum("nij,nj->ni", Ri, (-zi / lam[:, None] ** 2) @ R_ic.T)
    Jl = np.einsum("nak,nk->na", M, dPw_dl)
    return r, Ji, Jj, Jl, z


def reprojection_residual(xi, xj, ext: Extrinsics, zi, zj, lam: float, min_depth: float = MIN_DEPTH):
    """Returns ``(r (2,), J_xi (2,15), J_xj (2,15), J_lambda (2,))``."""
    if not lam > 0:
        raise ValueError("inverse depth must be positive")
    r, Ji, Jj, Jl, z = reprojection_batch(
        xi.R[None], xi.p[None], xj.R[None], xj.p[None], ext.R, ext.p_ic,
        np.asarray(zi, dtype=float)[None], np.asarray(zj, dtype=float)[None], np.array([lam]))
    if z[0] <= min_depth:
        raise CheiralityError(f"predicted depth {z[0]:.3g} m in frame j")
    return r[0], _expand(Ji[0]), _expand(Jj[0]), Jl[0]


@dataclass(frozen=True)
class HuberParams:
    delta: float = 1.0

    def __post_init__(self):
        if not self.delta > 0:
            raise ConfigError("Huber delta must be positive")


def huber_weight(squared_whitened_norm, params: HuberParams = HuberParams()):
    """Huber cost ``rho`` and IRLS weight for a squared whitened residual norm.

    Works elementwise on arrays.
    """
    s2 = np.asarray(squared_whitened_norm, dtype=float)
    s = np.sqrt(s2)
    d = params.delta
    inlier = s <= d
    rho = np.where(inlier, s2, 2.0 * d * s - d * d)
    weight = np.where(inlier, 1.0, d / np.where(inlier, 1.0, s))
    if rho.ndim == 0:
        return float(rho), float(weight)
    return rho, weight
