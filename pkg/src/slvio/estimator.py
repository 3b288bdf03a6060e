"""Sliding-window visual-inertial bundle adjustment.

Two modes share everything except the visual term:

* ``structureless``: states are the keyframe IMU states only; every co-visible
  keyframe pair of a track contributes one scalar epipolar residual.
* ``structure-based``: each track additionally carries an inverse depth anchored
  at its first keyframe in the window, and every later observation contributes
  a 2-D reprojection residual. Inverse depths are eliminated by a per-landmark
  Schur complement before the pose system is factorized.

Window slot ``s`` owns tangent columns ``[15 s, 15 s + 15)`` ordered
``[dp, dtheta, dv, dba, dbg]``.
"""
from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .errors import ConfigError, DataGapError, SolverDivergedError, UnderdeterminedError
from .imu import (GRAVITY, ImuSample, ImuState, NoiseParams, PreintDelta, imu_residual,
                  needs_repropagation, predict, preintegrate)
from .manifold import UnitQuat
from .visual import (BASELINE_GATE, MIN_DEPTH, Extrinsics, FeatureTrack, HuberParams,
                     PairPolicy, epipolar_batch, epipolar_pairs, epipolar_propagated_batch, huber_weight,
                     reprojection_batch)

DOF = 15
VIS = 6            # visual Jacobians touch [dp, dtheta] only
LAMBDA_MIN, LAMBDA_MAX = 1e-3, 20.0
MAX_IMU_GAP = 0.5


class Mode(enum.Enum):
    STRUCTURELESS = "structureless"
    STRUCTURE_BASED = "structure-based"

    @classmethod
    def parse(cls, s) -> "Mode":
        if isinstance(s, cls):
            return s
        return cls(str(s).replace("_", "-"))


@dataclass(frozen=True)
class LMParams:
    initial_damping: float = 1e-4
    max_iterations: int = 10
    cost_tolerance: float = 1e-4
    step_tolerance: float = 1e-8
    gradient_tolerance: float = 1e-12

    def __post_init__(self):
        if min(self.initial_damping, self.cost_tolerance, self.step_tolerance) <= 0:
            raise ConfigError("LM tolerances must be positive")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")


@dataclass(frozen=True)
class KeyframeParams:
    min_parallax: float = 10.0 / 460.0
    min_tracked: int = 20


@dataclass(frozen=True)
class WindowConfig:
    window_size: int = 11
    mode: Mode = Mode.STRUCTURELESS
    pair_policy: PairPolicy = PairPolicy.ANCHOR
    huber: HuberParams = HuberParams(1.0)
    lm: LMParams = LMParams()
    baseline_gate: float = BASELINE_GATE
    keyframe: KeyframeParams = KeyframeParams()
    pixel_sigma: float = 1.5
    focal_length: float = 460.0
    max_tracks: int = 150
    outlier_threshold: float = 3.0
    reject_outliers: bool = True
    gate_threshold: float = 3.0        # pre-solve gate at the predicted state; <= 0 disables
    epipolar_noise: str = "constant"   # constant | propagated (per-factor first-order std)
    repropagate_ba: float = 1e-1
    repropagate_bg: float = 1e-2

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode.parse(self.mode))
        if not isinstance(self.pair_policy, PairPolicy):
            object.__setattr__(self, "pair_policy", PairPolicy(self.pair_policy))
        if self.epipolar_noise not in ("constant", "propagated"):
            raise ConfigError(f"unknown epipolar_noise {self.epipolar_noise!r}")
        if self.window_size < 3:
            raise ConfigError("window_size must be >= 3")
        if self.baseline_gate <= 0 or self.pixel_sigma <= 0 or self.focal_length <= 0:
            raise ConfigError("baseline_gate, pixel_sigma and focal_length must be positive")

    @property
    def sigma_n(self) -> float:
        """Visual noise std on the normalized image plane."""
        return self.pixel_sigma / self.focal_length


@dataclass
class MarginalPrior:
    """Quadratic prior ``dx' H dx + 2 b' dx + b' H^+ b`` with ``dx = x ⊟ lin_point``."""
    H: np.ndarray
    b: np.ndarray
    lin_states: list
    index_map: list          # window slots covered, in block order
    const: float = 0.0

    def __post_init__(self):
        n = DOF * len(self.index_map)
        if self.H.shape != (n, n) or self.b.shape != (n,) or len(self.lin_states) != len(self.index_map):
            raise ValueError("prior dimensions inconsistent with index_map")

    def shifted(self, offset: int) -> "MarginalPrior":
        return replace(self, index_map=[s + offset for s in self.index_map])

    def delta(self, states) -> np.ndarray:
        return np.concatenate([states[s].boxminus(x0)
                               for s, x0 in zip(self.index_map, self.lin_states)])

    def cost(self, states) -> float:
        dx = self.delta(states)
        return float(dx @ self.H @ dx + 2.0 * self.b @ dx + self.const)


def gauge_prior(state: ImuState, position_info: float = 1e6, yaw_info: float = 1e6,
                tilt_info: float = 1e4, velocity_info: float = 1e2,
                ba_info: float = 1e2, bg_info: float = 1e4) -> MarginalPrior:
    """Initial prior on slot 0 anchoring position and yaw (plus soft terms)."""
    H = np.zeros((DOF, DOF))
    H[0:3, 0:3] = position_info * np.eye(3)
    a = state.R.T @ np.array([0.0, 0.0, 1.0])
    H[3:6, 3:6] = yaw_info * np.outer(a, a) + tilt_info * (np.eye(3) - np.outer(a, a))
    H[6:9, 6:9] = velocity_info * np.eye(3)
    H[9:12, 9:12] = ba_info * np.eye(3)
    H[12:15, 12:15] = bg_info * np.eye(3)
    return MarginalPrior(H, np.zeros(DOF), [state], [0], 0.0)


@dataclass
class WindowProblem:
    states: list
    preints: list
    tracks: list                       # FeatureTrack with window-slot indices
    ext: Extrinsics
    mode: Mode = Mode.STRUCTURELESS
    prior: MarginalPrior | None = None
    inv_depth: dict = field(default_factory=dict)   # feature_id -> lambda at first obs
    gravity: np.ndarray = field(default_factory=lambda: GRAVITY.copy())

    def __post_init__(self):
        self.mode = Mode.parse(self.mode)
        if len(self.preints) != len(self.states) - 1:
            raise ValueError("need exactly one preintegration per consecutive state pair")
        n = len(self.states)
        for tr in self.tracks:
            if tr.obs and tr.obs[-1][0] >= n:
                raise ValueError(f"track {tr.feature_id} references slot beyond window")

    def landmark_tracks(self) -> list:
        if self.mode is not Mode.STRUCTURE_BASED:
            return []
        return [tr for tr in self.tracks if tr.feature_id in self.inv_depth and len(tr.obs) >= 2]


@dataclass
class NormalEquations:
    H: np.ndarray              # pose block
    g: np.ndarray              # half-gradient J' W r
    cost: float
    H_pl: np.ndarray | None = None
    H_ll: np.ndarray | None = None
    g_l: np.ndarray | None = None
    landmark_ids: list = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.H.shape[0] + (0 if self.H_ll is None else len(self.H_ll))

    def full(self):
        """Dense ``(H, g)`` including inverse-depth columns."""
        if self.H_ll is None:
            return self.H, self.g
        n = self.H.shape[0]
        H = np.zeros((self.dim, self.dim))
        H[:n, :n] = self.H
        H[:n, n:] = self.H_pl
        H[n:, :n] = self.H_pl.T
        H[n:, n:] = np.diag(self.H_ll)
        return H, np.concatenate([self.g, self.g_l])


# -- factor indexing -------------------------------------------------------------

@dataclass
class _VisualIndex:
    slot_i: np.ndarray
    slot_j: np.ndarray
    zi: np.ndarray
    zj: np.ndarray
    feature: np.ndarray
    landmark: np.ndarray | None = None    # column of the inverse depth

    def __len__(self):
        return len(self.slot_i)

    def subset(self, mask) -> "_VisualIndex":
        return _VisualIndex(self.slot_i[mask], self.slot_j[mask], self.zi[mask], self.zj[mask],
                            self.feature[mask], None if self.landmark is None else self.landmark[mask])


def _visual_index(window: WindowProblem, cfg: WindowConfig) -> _VisualIndex:
    si, sj, zi, zj, fid, lm = [], [], [], [], [], []
    if window.mode is Mode.STRUCTURELESS:
        for tr in window.tracks:
            obs = dict(tr.obs)
            for i, j in epipolar_pairs(tr, cfg.pair_policy):
                si.append(i), sj.append(j), zi.append(obs[i]), zj.append(obs[j]), fid.append(tr.feature_id)
    else:
        for l, tr in enumerate(window.landmark_tracks()):
            i, z0 = tr.obs[0]
            for j, z in tr.obs[1:]:
                si.append(i), sj.append(j), zi.append(z0), zj.append(z), fid.append(tr.feature_id)
                lm.append(l)
    as2 = lambda a: np.array(a, dtype=float).reshape(-1, 3)
    return _VisualIndex(np.array(si, dtype=int), np.array(sj, dtype=int), as2(zi), as2(zj),
                        np.array(fid, dtype=int),
                        np.array(lm, dtype=int) if window.mode is Mode.STRUCTURE_BASED else None)


def _pose_arrays(states):
    R = np.stack([x.R for x in states])
    p = np.stack([x.p for x in states])
    return R, p


def _lambda_vector(window: WindowProblem) -> np.ndarray:
    return np.array([window.inv_depth[tr.feature_id] for tr in window.landmark_tracks()], dtype=float)


def _visual_terms(window, cfg, vidx: _VisualIndex, R, p, lam, with_jac: bool):
    """Whitened visual residuals, Huber costs/weights and Jacobians."""
    ext = window.ext
    sig = cfg.sigma_n
    si, sj = vidx.slot_i, vidx.slot_j
    if window.mode is Mode.STRUCTURELESS:
        batch = epipolar_propagated_batch if cfg.epipolar_noise == "propagated" else epipolar_batch
        r, Ji, Jj, nt = batch(R[si], p[si], R[sj], p[sj], ext.R, ext.p_ic, vidx.zi, vidx.zj)
        valid = nt >= cfg.baseline_gate
        e = (r / sig)[:, None]
        Ji, Jj, Jl = Ji[:, None, :] / sig, Jj[:, None, :] / sig, None
    else:
        r, Ji, Jj, Jl, depth = reprojection_batch(R[si], p[si], R[sj], p[sj], ext.R, ext.p_ic,
                                                  vidx.zi, vidx.zj, lam[vidx.landmark])
        valid = depth > MIN_DEPTH
        e = r / sig
        Ji, Jj, Jl = Ji / sig, Jj / sig, Jl / sig
    s2 = np.einsum("na,na->n", e, e)
    rho, w = huber_weight(s2, cfg.huber)
    rho = np.where(valid, rho, 0.0)
    w = np.where(valid, w, 0.0)
    return e, Ji, Jj, Jl, rho, w, valid


def _active_imu(window, cfg):
    """Re-propagate (in place) intervals whose bias estimate left the linear regime."""
    for k, d in enumerate(window.preints):
        xi = window.states[k]
        if d.samples and needs_repropagation(d, xi.ba, xi.bg, cfg.repropagate_ba, cfg.repropagate_bg):
            window.preints[k] = preintegrate(d.samples, (xi.ba, xi.bg), d.noise)
    return window.preints


def _assemble(window: WindowProblem, cfg: WindowConfig, states, lam, vidx: _VisualIndex,
              imu_pairs, preints, use_prior: bool = True, with_jac: bool = True):
    n = len(states)
    D = DOF * n
    cost = 0.0
    H = np.zeros((D, D)) if with_jac else None
    g = np.zeros(D) if with_jac else None
    grav = window.gravity

    # prior
    if use_prior and window.prior is not None:
        pr = window.prior
        dx = pr.delta(states)
        cost += float(dx @ pr.H @ dx + 2.0 * pr.b @ dx + pr.const)
        if with_jac:
            cols = np.concatenate([np.arange(DOF * s, DOF * s + DOF) for s in pr.index_map])
            H[np.ix_(cols, cols)] += pr.H
            g[cols] += pr.H @ dx + pr.b

    # inertial
    for k in imu_pairs:
        d = preints[k]
        r, Ji, Jj = imu_residual(d, states[k], states[k + 1], grav)
        L = d.sqrt_information()
        e = L @ r
        cost += float(e @ e)
        if with_jac:
            J = np.hstack([L @ Ji, L @ Jj])
            a = slice(DOF * k, DOF * k + 2 * DOF)
            H[a, a] += J.T @ J
            g[a] += J.T @ e

    # visual
    H_pl = H_ll = g_l = None
    M = len(lam) if lam is not None else 0
    if len(vidx):
        R, p = _pose_arrays(states)
        e, Ji, Jj, Jl, rho, w, valid = _visual_terms(window, cfg, vidx, R, p, lam, with_jac)
        cost += float(rho.sum())
        if with_jac:
            m, dim = e.shape
            # compact Jacobian over the [dp, dtheta] columns of every slot
            Jc = np.zeros((m, dim, VIS * n))
            ci = VIS * vidx.slot_i
            cj = VIS * vidx.slot_j
            rows = np.arange(m)
            for c in range(VIS):
                Jc[rows, :, ci + c] = Ji[:, :, c]
                Jc[rows, :, cj + c] = Jj[:, :, c]
            sw = np.sqrt(w)
            Jw = (Jc * sw[:, None, None]).reshape(m * dim, VIS * n)
            ew = (e * sw[:, None]).reshape(m * dim)
            Hc = Jw.T @ Jw
            gc = Jw.T @ ew
            full_cols = (DOF * np.arange(n)[:, None] + np.arange(VIS)[None, :]).reshape(-1)
            H[np.ix_(full_cols, full_cols)] += Hc
            g[full_cols] += gc
            if window.mode is Mode.STRUCTURE_BASED:
                Jlw = Jl * sw[:, None]
                ewl = e * sw[:, None]
                H_ll = np.bincount(vidx.landmark, weights=np.einsum("na,na->n", Jlw, Jlw), minlength=M)
                g_l = np.bincount(vidx.landmark, weights=np.einsum("na,na->n", Jlw, ewl), minlength=M)
                cross_i = np.einsum("nac,na->nc", Ji * sw[:, None, None], Jlw)
                cross_j = np.einsum("nac,na->nc", Jj * sw[:, None, None], Jlw)
                H_pl = np.zeros((D, M))
                ri = DOF * vidx.slot_i[:, None] + np.arange(VIS)[None, :]
                rj = DOF * vidx.slot_j[:, None] + np.arange(VIS)[None, :]
                np.add.at(H_pl, (ri, vidx.landmark[:, None]), cross_i)
                np.add.at(H_pl, (rj, vidx.landmark[:, None]), cross_j)
    if with_jac and window.mode is Mode.STRUCTURE_BASED and H_ll is None:
        H_pl, H_ll, g_l = np.zeros((D, M)), np.zeros(M), np.zeros(M)
    if not with_jac:
        return cost
    ids = [tr.feature_id for tr in window.landmark_tracks()]
    return NormalEquations(H, g, cost, H_pl, H_ll, g_l, ids)


def build_problem(window: WindowProblem, cfg: WindowConfig | None = None) -> NormalEquations:
    """Gauss-Newton normal equations ``H dx = -g`` of the full window cost.

    Cost = prior + sum of whitened inertial residuals + sum of Huber-robust
    visual terms; visual rows are IRLS-weighted.
    """
    cfg = cfg or WindowConfig(mode=window.mode)
    if len(window.states) < 2:
        raise UnderdeterminedError("window needs at least 2 states")
    preints = _active_imu(window, cfg)
    vidx = _visual_index(window, cfg)
    lam = _lambda_vector(window) if window.mode is Mode.STRUCTURE_BASED else None
    return _assemble(window, cfg, window.states, lam, vidx, range(len(preints)), preints)


# -- Levenberg-Marquardt -----------------------------------------------------------

@dataclass
class SolveReport:
    iterations: int
    initial_cost: float
    final_cost: float
    solve_time: float
    cost_history: list
    converged: bool = True


def _gauge_penalty(states, prior, big=1e10):
    """Damping-matrix term freezing position and yaw of slot 0 when no prior exists."""
    if prior is not None:
        return None
    P = np.zeros((DOF, DOF))
    P[0:3, 0:3] = big * np.eye(3)
    a = states[0].R.T @ np.array([0.0, 0.0, 1.0])
    P[3:6, 3:6] = big * np.outer(a, a)
    return P


def _solve_damped(ne: NormalEquations, mu: float, gauge):
    H = ne.H + mu * np.eye(ne.H.shape[0])
    if gauge is not None:
        H[:DOF, :DOF] += gauge
    g = ne.g
    if ne.H_ll is not None and len(ne.H_ll):
        Hll = ne.H_ll + mu
        W = ne.H_pl / Hll
        H = H - W @ ne.H_pl.T
        g = g - W @ ne.g_l
    c = scipy.linalg.cho_factor(H, lower=False, check_finite=False)
    dx = scipy.linalg.cho_solve(c, -g, check_finite=False)
    if not np.all(np.isfinite(dx)):
        raise np.linalg.LinAlgError("non-finite step")
    dl = None
    if ne.H_ll is not None:
        dl = -(ne.g_l + ne.H_pl.T @ dx) / (ne.H_ll + mu) if len(ne.H_ll) else np.zeros(0)
    return dx, dl


def _apply(states, lam, dx, dl):
    new = [x.boxplus(dx[DOF * s:DOF * s + DOF]) for s, x in enumerate(states)]
    new_lam = None if lam is None else np.clip(lam + dl, LAMBDA_MIN, LAMBDA_MAX)
    return new, new_lam


def solve_window(window: WindowProblem, cfg: WindowConfig | None = None):
    """Levenberg-Marquardt on the manifold; returns ``(states, inv_depth, report)``.

    Steps are accepted only if the cost decreases, so the accepted-cost sequence
    is non-increasing.
    """
    cfg = cfg or WindowConfig(mode=window.mode)
    t0 = time.perf_counter()
    if len(window.states) < 2:
        raise UnderdeterminedError("window needs at least 2 states")
    lm = cfg.lm
    preints = _active_imu(window, cfg)
    vidx = _visual_index(window, cfg)
    sb = window.mode is Mode.STRUCTURE_BASED
    lam = _lambda_vector(window) if sb else None
    imu_pairs = range(len(preints))
    states = list(window.states)

    ne = _assemble(window, cfg, states, lam, vidx, imu_pairs, preints)
    cost = ne.cost
    history = [cost]
    mu = lm.initial_damping
    iterations = 0
    gauge = _gauge_penalty(states, window.prior)
    while iterations < lm.max_iterations:
        grad = np.max(np.abs(ne.g)) if ne.g.size else 0.0
        if sb and ne.g_l is not None and ne.g_l.size:
            grad = max(grad, np.max(np.abs(ne.g_l)))
        if grad < lm.gradient_tolerance:
            break
        accepted = False
        while not accepted:
            try:
                dx, dl = _solve_damped(ne, mu, gauge)
            except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
                mu *= 10.0
                if mu > 1e16:
                    raise SolverDivergedError(
                        f"factorization failed up to damping {mu:g}; last cost {cost:g}") from exc
                continue
            new_states, new_lam = _apply(states, lam, dx, dl)
            new_cost = _assemble(window, cfg, new_states, new_lam, vidx, imu_pairs, preints,
                                 with_jac=False)
            if new_cost < cost:
                accepted = True
            else:
                mu *= 10.0
                if mu > 1e16:
                    break
        if not accepted:
            break
        iterations += 1
        rel = (cost - new_cost) / max(cost, 1e-300)
        step = np.linalg.norm(dx) if dl is None else np.sqrt(dx @ dx + dl @ dl)
        states, lam, cost = new_states, new_lam, new_cost
        assert cost <= history[-1]
        history.append(cost)
        mu = max(mu / 10.0, 1e-12)
        if rel < lm.cost_tolerance or step < lm.step_tolerance:
            break
        ne = _assemble(window, cfg, states, lam, vidx, imu_pairs, preints)

    inv_depth = dict(window.inv_depth)
    if sb:
        for tr, l in zip(window.landmark_tracks(), lam):
            inv_depth[tr.feature_id] = float(l)
    report = SolveReport(iterations, history[0], cost, time.perf_counter() - t0, history)
    return states, inv_depth, report


def visual_outliers(window: WindowProblem, cfg: WindowConfig, threshold: float | None = None) -> list:
    """``(feature_id, slot)`` observations whose whitened residual exceeds ``threshold``.

    A flagged factor blames its non-anchor observation, unless at least half of
    a track's factors (and two or more) are flagged, which blames the anchor.
    """
    threshold = cfg.outlier_threshold if threshold is None else threshold
    vidx = _visual_index(window, cfg)
    if not len(vidx):
        return []
    R, p = _pose_arrays(window.states)
    lam = _lambda_vector(window) if window.mode is Mode.STRUCTURE_BASED else None
    e, *_, valid = _visual_terms(window, cfg, vidx, R, p, lam, with_jac=False)
    bad = valid & (np.linalg.norm(e, axis=1) > threshold)
    out = []
    for f in np.unique(vidx.feature):
        m = vidx.feature == f
        nb = int(np.sum(bad[m]))
        if nb == 0:
            continue
        if nb >= 2 and 2 * nb >= int(np.sum(m)):
            out.append((int(f), int(vidx.slot_i[m][0])))
        else:
            out.extend((int(f), int(s)) for s in vidx.slot_j[m][bad[m]])
    return out


# -- marginalization ---------------------------------------------------------------

def schur_marginalize(H, b, marg, keep, rel_eps: float = 1e-12):
    """Eliminate ``marg`` columns from the quadratic ``(H, b)``; returns ``(H', b')``.

    The eliminated block is inverted through its eigendecomposition (directions
    with eigenvalue below ``rel_eps * max`` are treated as unconstrained) and the
    result is clamped to be positive semidefinite.
    """
    marg, keep = np.asarray(marg, dtype=int), np.asarray(keep, dtype=int)
    Hmm = H[np.ix_(marg, marg)]
    Hmm = 0.5 * (Hmm + Hmm.T)
    ev, V = np.linalg.eigh(Hmm)
    tol = rel_eps * max(ev.max(initial=0.0), 1e-300)
    inv = np.where(ev > tol, 1.0 / np.where(ev > tol, ev, 1.0), 0.0)
    Hmm_inv = (V * inv) @ V.T
    Hrm = H[np.ix_(keep, marg)]
    Hs = H[np.ix_(keep, keep)] - Hrm @ Hmm_inv @ Hrm.T
    bs = b[keep] - Hrm @ Hmm_inv @ b[marg]
    Hs = 0.5 * (Hs + Hs.T)
    ev, V = np.linalg.eigh(Hs)
    Hs = (V * np.maximum(ev, 0.0)) @ V.T
    return 0.5 * (Hs + Hs.T), bs


def _prior_const(H, b) -> float:
    return float(b @ np.linalg.pinv(H, rcond=1e-12, hermitian=True) @ b) if len(b) else 0.0


def marginalize_oldest(window: WindowProblem, cfg: WindowConfig | None = None,
                       return_schur_input: bool = False):
    """Marginal prior over the slots that share a factor with slot 0.

    The returned prior's ``index_map`` uses the current slot numbering; shift it
    by -1 after dropping slot 0.
    """
    cfg = cfg or WindowConfig(mode=window.mode)
    preints = _active_imu(window, cfg)
    vidx_all = _visual_index(window, cfg)
    sb = window.mode is Mode.STRUCTURE_BASED
    lam = _lambda_vector(window) if sb else None
    vidx = vidx_all.subset((vidx_all.slot_i == 0) | (vidx_all.slot_j == 0))
    use_prior = window.prior is not None
    ne = _assemble(window, cfg, window.states, lam, vidx, [0], preints, use_prior=use_prior)
    H, b = ne.full()
    n = len(window.states)
    touched = {1} | set(int(s) for s in vidx.slot_i) | set(int(s) for s in vidx.slot_j)
    if use_prior:
        touched |= set(window.prior.index_map)
    touched.discard(0)
    kept = sorted(touched)
    marg = list(range(DOF))
    if sb:
        marg += [DOF * n + int(l) for l in np.unique(vidx.landmark)]
    keep = [DOF * s + c for s in kept for c in range(DOF)]
    Hs, bs = schur_marginalize(H, b, marg, keep)
    prior = MarginalPrior(Hs, bs, [window.states[s] for s in kept], kept, _prior_const(Hs, bs))
    if return_schur_input:
        return prior, (H, b, marg, keep)
    return prior


# -- streaming estimator ---------------------------------------------------------

def _prior_without_slot(prior: MarginalPrior | None, slot: int) -> MarginalPrior | None:
    """Remove window slot ``slot`` from a prior (eliminating it if covered) and renumber."""
    if prior is None:
        return None
    imap = list(prior.index_map)
    if slot in imap:
        k = imap.index(slot)
        marg = list(range(DOF * k, DOF * k + DOF))
        keep = [c for c in range(len(prior.b)) if c not in set(marg)]
        H, b = schur_marginalize(prior.H, prior.b, marg, keep)
        lin = [x for i, x in enumerate(prior.lin_states) if i != k]
        del imap[k]
        prior = MarginalPrior(H, b, lin, imap, _prior_const(H, b))
    return replace(prior, index_map=[s - 1 if s > slot else s for s in prior.index_map])


@dataclass
class _Frame:
    uid: int
    t: float
    obs: dict                 # feature_id -> bearing


def triangulate_midpoint(Rwc_a, pwc_a, za, Rwc_b, pwc_b, zb):
    """Midpoint of the closest points of two rays; returns depth along ray ``a`` or None."""
    da = Rwc_a @ za
    db = Rwc_b @ zb
    A = np.stack([da, -db], axis=1)
    rhs = pwc_b - pwc_a
    AtA = A.T @ A
    if np.linalg.det(AtA) < 1e-12:
        return None
    s, u = np.linalg.solve(AtA, A.T @ rhs)
    if s <= 0 or u <= 0:
        return None
    X = 0.5 * ((pwc_a + s * da) + (pwc_b + u * db))
    depth = (Rwc_a.T @ (X - pwc_a))[2]
    return depth if depth > 0 else None


@dataclass
class FrameResult:
    t: float
    state: ImuState
    solve_time: float
    marg_time: float
    iterations: int
    keyframe_count: int
    num_tracks: int


class Estimator:
    """Streaming sliding-window estimator.

    The window always holds keyframes plus the newest frame. On each new frame
    the previous newest frame is kept as a keyframe if its parallax against the
    keyframe before it is large enough (or tracking is thin); otherwise it is
    dropped and its inertial interval merged into the new frame's.
    """

    def __init__(self, cfg: WindowConfig, noise: NoiseParams, ext: Extrinsics,
                 init_state: ImuState, t0: float, obs0: dict, imu0: ImuSample | None = None,
                 prior: MarginalPrior | None = None):
        self.cfg = cfg
        self.noise = noise
        self.ext = ext
        self.states = [init_state]
        self.preints: list[PreintDelta] = []
        self.frames = [_Frame(0, t0, dict(obs0))]
        self.prior = prior if prior is not None else gauge_prior(init_state)
        self.inv_depth: dict = {}
        self.rejected: set = set()
        self._strikes: dict = {}
        self._uid = 1
        self._tail = imu0
        self.history: list[FrameResult] = []

    # -- bookkeeping
    @property
    def t(self) -> float:
        return self.frames[-1].t

    def _imu_chunk(self, t, samples):
        samples = [s for s in samples if s.t <= t + 1e-12]
        tail = self._tail
        if tail is None:
            if not samples:
                raise DataGapError("no IMU samples")
            tail = samples[0]
        if tail.t < self.t - 1e-12 or tail.t > self.t + 1e-12:
            tail = ImuSample(self.t, tail.gyro, tail.accel)
        chunk = [tail] + [s for s in samples if s.t > self.t + 1e-12]
        last = chunk[-1]
        if last.t < t - 1e-12:
            if t - last.t > MAX_IMU_GAP:
                raise DataGapError(f"IMU gap of {t - last.t:.3f} s before frame at {t:.6f}")
            chunk.append(ImuSample(t, last.gyro, last.accel))
        gaps = np.diff([s.t for s in chunk])
        if len(gaps) and gaps.max() > MAX_IMU_GAP:
            raise DataGapError(f"IMU gap of {gaps.max():.3f} s")
        self._tail = chunk[-1]
        return chunk

    def _tracks(self):
        """Window tracks (slot indices), longest first, capped at ``max_tracks``."""
        per = {}
        for s, fr in enumerate(self.frames):
            for f, z in fr.obs.items():
                if (f, fr.uid) in self.rejected:
                    continue
                per.setdefault(f, []).append((s, z))
        tracks = [FeatureTrack(f, obs) for f, obs in per.items() if len(obs) >= 2]
        tracks.sort(key=lambda tr: (-len(tr.obs), tr.feature_id))
        return tracks[: self.cfg.max_tracks]

    def _camera(self, s):
        x = self.states[s]
        R = x.R
        return R @ self.ext.R, x.p + R @ self.ext.p_ic

    def _init_depths(self, tracks):
        keep = set()
        for tr in tracks:
            f = tr.feature_id
            keep.add(f)
            if f in self.inv_depth:
                continue
            (sa, za), (sb, zb) = tr.obs[0], tr.obs[-1]
            d = triangulate_midpoint(*self._camera(sa), za, *self._camera(sb), zb)
            if d is not None and d > 0.1:
                self.inv_depth[f] = float(np.clip(1.0 / d, LAMBDA_MIN, LAMBDA_MAX))
        for f in list(self.inv_depth):
            if f not in keep:
                del self.inv_depth[f]

    def window(self) -> WindowProblem:
        tracks = self._tracks()
        if self.cfg.mode is Mode.STRUCTURE_BASED:
            self._init_depths(tracks)
        return WindowProblem(list(self.states), list(self.preints), tracks, self.ext,
                             self.cfg.mode, self.prior, dict(self.inv_depth), self.noise.gravity)

    def _anchor_slot(self, f):
        for s, fr in enumerate(self.frames):
            if f in fr.obs and (f, fr.uid) not in self.rejected:
                return s
        return None

    def _reanchor(self, drop_slot):
        """Move inverse depths anchored at ``drop_slot`` to the track's next observation."""
        for f in list(self.inv_depth):
            if self._anchor_slot(f) != drop_slot:
                continue
            fr = self.frames[drop_slot]
            Rc, pc = self._camera(drop_slot)
            X = pc + Rc @ (fr.obs[f] / self.inv_depth[f])
            nxt = None
            for s in range(drop_slot + 1, len(self.frames)):
                if f in self.frames[s].obs and (f, self.frames[s].uid) not in self.rejected:
                    nxt = s
                    break
            del self.inv_depth[f]
            if nxt is not None:
                Rn, pn = self._camera(nxt)
                d = (Rn.T @ (X - pn))[2]
                if d > 0.1:
                    self.inv_depth[f] = float(np.clip(1.0 / d, LAMBDA_MIN, LAMBDA_MAX))

    def _parallax(self, a: _Frame, b: _Frame):
        common = [f for f in b.obs if f in a.obs]
        if not common:
            return 0.0, 0
        d = [np.linalg.norm(a.obs[f][:2] - b.obs[f][:2]) for f in common]
        return float(np.mean(d)), len(common)

    def _drop_second_newest(self):
        """Remove the frame before the newest, merging its inertial interval."""
        k = len(self.frames) - 2
        d0, d1 = self.preints[k - 1], self.preints[k]
        samples = d0.samples + d1.samples[1:]
        xi = self.states[k - 1]
        self.preints[k - 1] = preintegrate(samples, (xi.ba, xi.bg), self.noise)
        self.prior = _prior_without_slot(self.prior, k)
        del self.preints[k]
        del self.states[k]
        del self.frames[k]

    def _marginalize(self):
        w = self.window()
        prior = marginalize_oldest(w, self.cfg)
        self.preints = w.preints
        if self.cfg.mode is Mode.STRUCTURE_BASED:
            self._reanchor(0)
        self.prior = prior.shifted(-1)
        del self.states[0]
        del self.preints[0]
        del self.frames[0]

    def _reject(self, bad):
        """Drop flagged observations; an anchor blamed twice by its track is dropped too."""
        for f, s in bad:
            anchor = self._anchor_slot(f)
            if anchor is None:
                continue
            if s != anchor:
                key = (f, self.frames[anchor].uid)
                self._strikes[key] = self._strikes.get(key, 0) + 1
                if self._strikes[key] >= 2:
                    self.rejected.add(key)
                    self.inv_depth.pop(f, None)
            else:
                self.inv_depth.pop(f, None)
            self.rejected.add((f, self.frames[s].uid))

    def _gate(self, threshold, max_passes: int = 5):
        """Reject until the (capped) window has no factor above ``threshold``."""
        for _ in range(max_passes):
            bad = visual_outliers(self.window(), self.cfg, threshold)
            if not bad:
                return
            self._reject(bad)

    def process_keyframe(self, t: float, obs: dict, imu_since_last) -> ImuState:
        if t <= self.t:
            raise ValueError("frames must arrive in increasing time order")
        chunk = self._imu_chunk(t, list(imu_since_last))

        # keyframe decision for the current newest frame, made before the new one is
        # inserted so the marginal prior only sees solved states and gated factors
        keep_newest, marg_time = True, 0.0
        if len(self.frames) >= 2:
            par, tracked = self._parallax(self.frames[-2], self.frames[-1])
            keep_newest = par >= self.cfg.keyframe.min_parallax or tracked < self.cfg.keyframe.min_tracked
            if keep_newest and len(self.frames) + 1 > self.cfg.window_size:
                tm = time.perf_counter()
                self._marginalize()
                marg_time = time.perf_counter() - tm

        xi = self.states[-1]
        delta = preintegrate(chunk, (xi.ba, xi.bg), self.noise)
        self.states.append(predict(xi, delta, self.noise.gravity))
        self.preints.append(delta)
        self.frames.append(_Frame(self._uid, t, dict(obs)))
        self._uid += 1
        if not keep_newest:
            self._drop_second_newest()

        if self.cfg.reject_outliers and self.cfg.gate_threshold > 0:
            self._gate(self.cfg.gate_threshold)
        w = self.window()
        states, inv, rep = solve_window(w, self.cfg)
        solve_time, iters = rep.solve_time, rep.iterations
        self.states, self.inv_depth, self.preints = states, inv, w.preints
        if self.cfg.reject_outliers:
            bad = visual_outliers(self.window(), self.cfg)
            if bad:
                self._reject(bad)
                # tracks promoted past the max_tracks cap have not been checked yet
                self._gate(self.cfg.outlier_threshold)
                w = self.window()
                states, inv, rep2 = solve_window(w, self.cfg)
                self.states, self.inv_depth, self.preints = states, inv, w.preints
                solve_time += rep2.solve_time
                iters += rep2.iterations
        n_tracks = len(w.tracks)
        self.history.append(FrameResult(t, self.states[-1], solve_time, marg_time, iters,
                                        len(self.frames), n_tracks))
        return self.states[-1]
