"""Synthetic ground truth, IMU streams and feature tracks.

Randomness comes from numpy's Philox4x64-10 counter-based generator keyed by
``(seed, stream)``; stream 1 drives IMU noise, stream 2 landmark placement and
stream 3 pixel noise/outliers, so each output is reproducible on its own.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .imu import GRAVITY, ImuSample, ImuState, NoiseParams
from .manifold import UnitQuat
from .visual import Extrinsics, FeatureTrack

NS = 1_000_000_000

STREAM_IMU, STREAM_LANDMARKS, STREAM_PIXELS = 1, 2, 3


def philox(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[int(seed) & (2**64 - 1), stream]))


@dataclass(frozen=True)
class TrajectorySpec:
    kind: str = "circle"          # circle | lissajous | corridor
    duration: float = 60.0
    imu_rate: float = 200.0
    frame_rate: float = 10.0
    radius: float = 5.0           # circle radius / lissajous amplitude, m
    omega: float = 0.5            # circle angular rate / lissajous base rate, rad/s
    height_amp: float = 0.3       # m
    height_omega: float = 0.9     # rad/s
    roll_amp: float = 0.1         # rad
    roll_omega: float = 0.7       # rad/s
    speed: float = 1.0            # corridor forward speed, m/s
    lateral_amp: float = 0.3      # corridor weaving, m
    lateral_omega: float = 0.8    # rad/s

    def __post_init__(self):
        if self.kind not in ("circle", "lissajous", "corridor"):
            raise ConfigError(f"unknown trajectory kind {self.kind!r}")
        if self.duration <= 0 or self.imu_rate <= 0 or self.frame_rate <= 0:
            raise ConfigError("duration and rates must be positive")

    @property
    def length(self) -> float:
        """Approximate path length (m), used to normalize ATE."""
        t = np.linspace(0.0, self.duration, 20001)
        _, v, _ = kinematics(self, t)
        speed = np.linalg.norm(v, axis=1)
        return float(np.sum(0.5 * (speed[1:] + speed[:-1]) * np.diff(t)))


@dataclass(frozen=True)
class SceneSpec:
    landmark_count: int = 3000
    placement: str = "shell"      # shell | walls
    depth_range: tuple = (6.0, 10.0)
    pixel_sigma: float = 1.0
    outlier_fraction: float = 0.0
    intrinsics: tuple = (460.0, 460.0, 376.0, 240.0)
    seed: int = 0
    corridor_half_width: float = 2.0
    corridor_length: float = 80.0

    def __post_init__(self):
        if self.placement not in ("shell", "walls"):
            raise ConfigError(f"unknown placement {self.placement!r}")
        if not 0 < self.depth_range[0] < self.depth_range[1]:
            raise ConfigError("depth range must be positive and increasing")
        if not 0 <= self.outlier_fraction < 0.5:
            raise ConfigError("outlier_fraction must lie in [0, 0.5)")

    @property
    def image_size(self):
        fx, fy, cx, cy = self.intrinsics
        return 2.0 * cx, 2.0 * cy


def kinematics(spec: TrajectorySpec, t):
    """Analytic position, velocity and acceleration at times ``t``."""
    t = np.asarray(t, dtype=float)
    z = np.zeros_like(t)
    hz, wz = spec.height_amp, spec.height_omega
    zp, zv, za = hz * np.sin(wz * t), hz * wz * np.cos(wz * t), -hz * wz * wz * np.sin(wz * t)
    if spec.kind == "circle":
        R, w = spec.radius, spec.omega
        c, s = np.cos(w * t), np.sin(w * t)
        p = np.stack([R * c, R * s, zp], axis=1)
        v = np.stack([-R * w * s, R * w * c, zv], axis=1)
        a = np.stack([-R * w * w * c, -R * w * w * s, za], axis=1)
    elif spec.kind == "lissajous":
        A, w = spec.radius, spec.omega
        # phase keeps the initial speed away from zero
        p = np.stack([A * np.sin(w * t + 0.5), 0.5 * A * np.sin(2 * w * t), zp], axis=1)
        v = np.stack([A * w * np.cos(w * t + 0.5), A * w * np.cos(2 * w * t), zv], axis=1)
        a = np.stack([-A * w * w * np.sin(w * t + 0.5), -2 * A * w * w * np.sin(2 * w * t), za], axis=1)
    else:
        L, wl = spec.lateral_amp, spec.lateral_omega
        p = np.stack([spec.speed * t, L * np.sin(wl * t), zp], axis=1)
        v = np.stack([spec.speed + z, L * wl * np.cos(wl * t), zv], axis=1)
        a = np.stack([z, -L * wl * wl * np.sin(wl * t), za], axis=1)
    return p, v, a


def _attitude(spec: TrajectorySpec, t, v, a):
    """ZYX Euler angles (heading follows velocity, smooth roll) and body rates."""
    vx, vy, vz = v[:, 0], v[:, 1], v[:, 2]
    ax, ay, az = a[:, 0], a[:, 1], a[:, 2]
    h2 = vx * vx + vy * vy
    h = np.sqrt(h2)
    yaw = np.arctan2(vy, vx)
    pitch = np.arctan2(-vz, h)
    roll = spec.roll_amp * np.sin(spec.roll_omega * t)
    dyaw = (vx * ay - vy * ax) / h2
    dh = (vx * ax + vy * ay) / h
    dpitch = (-h * az + vz * dh) / (h2 + vz * vz)
    droll = spec.roll_amp * spec.roll_omega * np.cos(spec.roll_omega * t)
    sr, cr = np.sin(roll), np.cos(roll)
    sp, cp = np.sin(pitch), np.cos(pitch)
    omega = np.stack([
        droll - dyaw * sp,
        dpitch * cr + dyaw * cp * sr,
        -dpitch * sr + dyaw * cp * cr,
    ], axis=1)
    return yaw, pitch, roll, omega


def _euler_to_matrices(yaw, pitch, roll):
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cr, sr = np.cos(roll), np.sin(roll)
    R = np.empty((len(yaw), 3, 3))
    R[:, 0, 0] = cy * cp
    R[:, 0, 1] = cy * sp * sr - sy * cr
    R[:, 0, 2] = cy * sp * cr + sy * sr
    R[:, 1, 0] = sy * cp
    R[:, 1, 1] = sy * sp * sr + cy * cr
    R[:, 1, 2] = sy * sp * cr - cy * sr
    R[:, 2, 0] = -sp
    R[:, 2, 1] = cp * sr
    R[:, 2, 2] = cp * cr
    return R


@dataclass
class Truth:
    """Ground truth sampled at the IMU rate (plus analytic evaluation)."""
    spec: TrajectorySpec
    t_ns: np.ndarray
    p: np.ndarray
    v: np.ndarray
    a: np.ndarray
    R: np.ndarray
    omega: np.ndarray

    @property
    def t(self) -> np.ndarray:
        return self.t_ns / NS

    def __len__(self):
        return len(self.t_ns)

    def frame_indices(self) -> np.ndarray:
        """IMU-sample indices that coincide with camera frames."""
        step = self.spec.imu_rate / self.spec.frame_rate
        k = int(round(step))
        if abs(step - k) > 1e-9:
            raise ConfigError("imu_rate must be an integer multiple of frame_rate")
        return np.arange(0, len(self), k)

    def state(self, k: int, ba=np.zeros(3), bg=np.zeros(3)) -> ImuState:
        return ImuState(self.p[k].copy(), self.v[k].copy(), UnitQuat.from_matrix(self.R[k]),
                        np.array(ba, dtype=float), np.array(bg, dtype=float))


def evaluate(spec: TrajectorySpec, t):
    """Analytic ``(p, v, a, R, omega_body)`` at arbitrary times."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    p, v, a = kinematics(spec, t)
    yaw, pitch, roll, omega = _attitude(spec, t, v, a)
    return p, v, a, _euler_to_matrices(yaw, pitch, roll), omega


def generate_truth(spec: TrajectorySpec) -> Truth:
    dt_ns = NS / spec.imu_rate
    n = int(round(spec.duration * spec.imu_rate)) + 1
    t_ns = np.round(np.arange(n) * dt_ns).astype(np.int64)
    p, v, a, R, omega = evaluate(spec, t_ns / NS)
    return Truth(spec, t_ns, p, v, a, R, omega)


def synthesize_imu(truth: Truth, noise: NoiseParams, bias_truth=(np.zeros(3), np.zeros(3)),
                   seed: int = 0, noisy: bool = True) -> list:
    """Gyro = body rate + bg + noise; accel = body specific force + ba + noise."""
    ba, bg = (np.asarray(b, dtype=float) for b in bias_truth)
    n = len(truth)
    f_world = truth.a - noise.gravity
    accel = np.einsum("nji,nj->ni", truth.R, f_world) + ba
    gyro = truth.omega + bg
    if noisy:
        rng = philox(seed, STREAM_IMU)
        sq = np.sqrt(truth.spec.imu_rate)
        gyro = gyro + rng.standard_normal((n, 3)) * noise.sigma_g * sq
        accel = accel + rng.standard_normal((n, 3)) * noise.sigma_a * sq
    t = truth.t
    return [ImuSample(float(t[k]), gyro[k], accel[k]) for k in range(n)]


def place_landmarks(scene: SceneSpec, traj: TrajectorySpec) -> np.ndarray:
    rng = philox(scene.seed, STREAM_LANDMARKS)
    n = scene.landmark_count
    if scene.placement == "shell":
        r0, r1 = scene.depth_range
        # uniform in the annulus area, z band around the trajectory height
        rad = np.sqrt(rng.uniform(r0 * r0, r1 * r1, n))
        ang = rng.uniform(-np.pi, np.pi, n)
        z = rng.uniform(-2.0, 2.0, n)
        return np.stack([rad * np.cos(ang), rad * np.sin(ang), z], axis=1)
    w = scene.corridor_half_width
    x = rng.uniform(-5.0, scene.corridor_length, n)
    side = rng.integers(0, 4, n)
    pts = np.empty((n, 3))
    pts[:, 0] = x
    # two walls, floor, ceiling
    lat = rng.uniform(-w, w, n)
    vert = rng.uniform(-1.2, 1.5, n)
    pts[:, 1] = np.where(side == 0, w, np.where(side == 1, -w, lat))
    pts[:, 2] = np.where(side == 2, -1.2, np.where(side == 3, 1.5, vert))
    return pts


@dataclass
class TrackData:
    """Observation table plus the same data grouped into tracks."""
    feature_id: np.ndarray
    frame_id: np.ndarray
    t_ns: np.ndarray
    u: np.ndarray
    v: np.ndarray
    frame_t_ns: np.ndarray
    depth: np.ndarray = field(default=None)
    outlier: np.ndarray = field(default=None)
    clean_uv: np.ndarray = field(default=None)


def synthesize_tracks(truth: Truth, scene: SceneSpec, ext: Extrinsics,
                      landmarks: np.ndarray | None = None) -> TrackData:
    """Project landmarks through every camera frame (pinhole, no distortion)."""
    if landmarks is None:
        landmarks = place_landmarks(scene, truth.spec)
    fx, fy, cx, cy = scene.intrinsics
    W, H = scene.image_size
    rng = philox(scene.seed, STREAM_PIXELS)
    R_ic, p_ic = ext.R, ext.p_ic
    fids, frames, tns, us, vs, depths, clean = [], [], [], [], [], [], []
    idx = truth.frame_indices()
    max_depth = scene.depth_range[1] if scene.placement == "walls" else np.inf
    for f, k in enumerate(idx):
        Rwc = truth.R[k] @ R_ic
        pwc = truth.p[k] + truth.R[k] @ p_ic
        Pc = (landmarks - pwc) @ Rwc
        d = Pc[:, 2]
        front = (d > 0.1) & (d < max_depth)
        x = np.where(front, Pc[:, 0] / np.where(front, d, 1.0), 0.0)
        y = np.where(front, Pc[:, 1] / np.where(front, d, 1.0), 0.0)
        u = fx * x + cx
        v = fy * y + cy
        vis = front & (u >= 0) & (u < W) & (v >= 0) & (v < H)
        ids = np.nonzero(vis)[0]
        fids.append(ids)
        frames.append(np.full(len(ids), f))
        tns.append(np.full(len(ids), truth.t_ns[k]))
        us.append(u[ids])
        vs.append(v[ids])
        depths.append(d[ids])
    fid = np.concatenate(fids).astype(np.int64)
    frm = np.concatenate(frames).astype(np.int64)
    t_ns = np.concatenate(tns).astype(np.int64)
    u = np.concatenate(us)
    v = np.concatenate(vs)
    clean_uv = np.stack([u, v], axis=1)
    n = len(fid)
    u = u + rng.standard_normal(n) * scene.pixel_sigma
    v = v + rng.standard_normal(n) * scene.pixel_sigma
    out = rng.uniform(size=n) < scene.outlier_fraction
    u = np.where(out, rng.uniform(0.0, W, n), u)
    v = np.where(out, rng.uniform(0.0, H, n), v)
    return TrackData(fid, frm, t_ns, u, v, truth.t_ns[idx].copy(),
                     np.concatenate(depths), out, clean_uv)


def tracks_from_table(feature_id, frame_id, u, v, intrinsics) -> list:
    """Group pixel observations into :class:`FeatureTrack` objects (sorted by id)."""
    fx, fy, cx, cy = intrinsics
    order = np.lexsort((frame_id, feature_id))
    tracks = []
    cur, obs = None, []
    for i in order:
        f = int(feature_id[i])
        if f != cur:
            if obs:
                tracks.append(FeatureTrack(cur, obs))
            cur, obs = f, []
        obs.append((int(frame_id[i]), np.array([(u[i] - cx) / fx, (v[i] - cy) / fy, 1.0])))
    if obs:
        tracks.append(FeatureTrack(cur, obs))
    return tracks


def default_extrinsics() -> Extrinsics:
    """Forward-looking camera: optical axis along body x, image x along body -y."""
    R_ic = np.array([[0.0, 0.0, 1.0],
                     [-1.0, 0.0, 0.0],
                     [0.0, -1.0, 0.0]])
    return Extrinsics(UnitQuat.from_matrix(R_ic), np.array([0.05, 0.02, -0.01]))
