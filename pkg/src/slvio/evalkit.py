"""File formats, trajectory alignment / ATE, and the estimator runner.

Formats
-------
``imu.csv``     EuRoC ASL style: one header line, then
                ``timestamp[ns],gx,gy,gz[rad/s],ax,ay,az[m/s^2]``.
``tracks.csv``  one header line, then ``feature_id,frame_id,timestamp[ns],u[px],v[px]``.
``*.txt`` poses TUM: ``t px py pz qx qy qz qw`` per line, ``#`` comments.
``init.txt``    ``key = value`` lines: ``t``, ``p``, ``v``, ``q`` (w x y z), ``ba``, ``bg``.
"""
from __future__ import annotations

import bisect
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import AssociationError, DuplicateObservationError, OrderingError, ParseError
from .imu import ImuSample, ImuState
from .manifold import UnitQuat
from .visual import FeatureTrack

NS = 1_000_000_000
IMU_HEADER = ("#timestamp [ns],w_RS_S_x [rad s^-1],w_RS_S_y [rad s^-1],w_RS_S_z [rad s^-1],"
              "a_RS_S_x [m s^-2],a_RS_S_y [m s^-2],a_RS_S_z [m s^-2]")
TRACKS_HEADER = "feature_id,frame_id,timestamp [ns],u [px],v [px]"


def ns_to_sec(ns: int) -> float:
    ns = int(ns)
    return ns // NS + (ns % NS) / NS


def sec_to_ns(t: float) -> int:
    return int(round(t * NS))


def _data_lines(path):
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            yield lineno, s


# -- IMU ---------------------------------------------------------------------------

def load_imu_csv(path) -> list:
    samples = []
    first = True
    prev = None
    for lineno, s in _data_lines(path):
        cols = s.split(",")
        if first:
            first = False
            try:
                int(cols[0])
            except ValueError:
                continue  # header without '#'
        if len(cols) != 7:
            raise ParseError(f"{path}:{lineno}: expected 7 columns, got {len(cols)}")
        try:
            ns = int(cols[0])
            vals = [float(c) for c in cols[1:]]
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from None
        if prev is not None and ns <= prev:
            raise OrderingError(f"{path}:{lineno}: timestamp {ns} not after {prev}")
        prev = ns
        samples.append(ImuSample(ns_to_sec(ns), vals[0:3], vals[3:6]))
    return samples


def write_imu_csv(path, samples):
    with open(path, "w") as fh:
        fh.write(IMU_HEADER + "\n")
        for s in samples:
            vals = ",".join(repr(float(c)) for c in (*s.gyro, *s.accel))
            fh.write(f"{sec_to_ns(s.t)},{vals}\n")


# -- tracks ------------------------------------------------------------------------

@dataclass
class TrackRows:
    feature_id: np.ndarray
    frame_id: np.ndarray
    t_ns: np.ndarray
    u: np.ndarray
    v: np.ndarray


def read_tracks_rows(path) -> TrackRows:
    fid, frm, tns, us, vs = [], [], [], [], []
    seen = set()
    first = True
    for lineno, s in _data_lines(path):
        cols = s.split(",")
        if first:
            first = False
            try:
                int(cols[0])
            except ValueError:
                continue
        if len(cols) != 5:
            raise ParseError(f"{path}:{lineno}: expected 5 columns, got {len(cols)}")
        try:
            f, fr, t = int(cols[0]), int(cols[1]), int(cols[2])
            u, v = float(cols[3]), float(cols[4])
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from None
        if (f, fr) in seen:
            raise DuplicateObservationError(f"{path}:{lineno}: feature {f} seen twice in frame {fr}")
        seen.add((f, fr))
        fid.append(f), frm.append(fr), tns.append(t), us.append(u), vs.append(v)
    return TrackRows(np.array(fid, dtype=np.int64), np.array(frm, dtype=np.int64),
                     np.array(tns, dtype=np.int64), np.array(us, dtype=float), np.array(vs, dtype=float))


def write_tracks_csv(path, feature_id, frame_id, t_ns, u, v):
    order = np.lexsort((feature_id, frame_id))
    with open(path, "w") as fh:
        fh.write(TRACKS_HEADER + "\n")
        for i in order:
            fh.write(f"{int(feature_id[i])},{int(frame_id[i])},{int(t_ns[i])},{float(u[i])!r},{float(v[i])!r}\n")


def _normalize(u, v, intrinsics):
    fx, fy, cx, cy = intrinsics
    return np.array([(u - cx) / fx, (v - cy) / fy, 1.0])


def load_tracks_csv(path, intrinsics) -> list:
    """Tracks grouped by feature id; observation indices are frame ids."""
    rows = read_tracks_rows(path)
    order = np.lexsort((rows.frame_id, rows.feature_id))
    tracks, cur, obs = [], None, []
    for i in order:
        f = int(rows.feature_id[i])
        if f != cur:
            if obs:
                tracks.append(FeatureTrack(cur, obs))
            cur, obs = f, []
        obs.append((int(rows.frame_id[i]), _normalize(rows.u[i], rows.v[i], intrinsics)))
    if obs:
        tracks.append(FeatureTrack(cur, obs))
    return tracks


@dataclass
class FrameObs:
    frame_id: int
    t_ns: int
    obs: dict   # feature_id -> bearing

    @property
    def t(self) -> float:
        return ns_to_sec(self.t_ns)


def load_frames_csv(path, intrinsics) -> list:
    """Per-frame observation dictionaries, ordered by frame id."""
    rows = read_tracks_rows(path)
    frames = {}
    for f, fr, t, u, v in zip(rows.feature_id, rows.frame_id, rows.t_ns, rows.u, rows.v):
        fo = frames.get(int(fr))
        if fo is None:
            fo = frames[int(fr)] = FrameObs(int(fr), int(t), {})
        elif fo.t_ns != int(t):
            raise ParseError(f"frame {fr} has inconsistent timestamps")
        fo.obs[int(f)] = _normalize(u, v, intrinsics)
    out = [frames[k] for k in sorted(frames)]
    for a, b in zip(out, out[1:]):
        if b.t_ns <= a.t_ns:
            raise OrderingError(f"frame {b.frame_id} not after frame {a.frame_id}")
    return out


# -- trajectories ------------------------------------------------------------------

@dataclass
class TrajectoryFile:
    t: np.ndarray          # (n,) s
    p: np.ndarray          # (n, 3) m
    q: np.ndarray          # (n, 4) x y z w

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float).reshape(-1)
        self.p = np.asarray(self.p, dtype=float).reshape(-1, 3)
        self.q = np.asarray(self.q, dtype=float).reshape(-1, 4)
        if np.any(np.diff(self.t) <= 0):
            raise OrderingError("trajectory timestamps must be strictly increasing")
        if len(self.q) and np.max(np.abs(np.linalg.norm(self.q, axis=1) - 1.0)) > 1e-6:
            raise ValueError("trajectory quaternions must be unit")

    def __len__(self):
        return len(self.t)

    @classmethod
    def from_states(cls, times, states) -> "TrajectoryFile":
        return cls(np.array(times), np.array([x.p for x in states]),
                   np.array([x.q.xyzw for x in states]))


def read_trajectory(path) -> TrajectoryFile:
    rows = []
    for lineno, s in _data_lines(path):
        cols = s.replace(",", " ").split()
        if len(cols) != 8:
            raise ParseError(f"{path}:{lineno}: expected 8 columns, got {len(cols)}")
        try:
            rows.append([float(c) for c in cols])
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from None
    a = np.array(rows, dtype=float).reshape(-1, 8)
    return TrajectoryFile(a[:, 0], a[:, 1:4], a[:, 4:8])


def write_trajectory(path, traj: TrajectoryFile, header: str | None = None):
    with open(path, "w") as fh:
        fh.write("# " + (header or "timestamp tx ty tz qx qy qz qw") + "\n")
        for t, p, q in zip(traj.t, traj.p, traj.q):
            fh.write(f"{t:.9f} {p[0]:.9f} {p[1]:.9f} {p[2]:.9f} "
                     f"{q[0]:.9f} {q[1]:.9f} {q[2]:.9f} {q[3]:.9f}\n")


def associate(est: TrajectoryFile, truth: TrajectoryFile, max_dt: float = 0.01):
    """Nearest-neighbour timestamp matches; returns index arrays into ``est`` and ``truth``."""
    ie, it = [], []
    tt = truth.t
    for k, t in enumerate(est.t):
        j = bisect.bisect_left(tt, t)
        best = None
        for c in (j - 1, j):
            if 0 <= c < len(tt) and (best is None or abs(tt[c] - t) < abs(tt[best] - t)):
                best = c
        if best is not None and abs(tt[best] - t) <= max_dt:
            ie.append(k)
            it.append(best)
    if len(ie) < 3:
        raise AssociationError(f"only {len(ie)} poses associated within {max_dt} s (need 3)")
    return np.array(ie), np.array(it)


def align_se3(est_p, truth_p):
    """Rotation ``R`` and translation ``t`` minimizing ``sum |R est + t - truth|^2``."""
    me, mt = est_p.mean(axis=0), truth_p.mean(axis=0)
    C = (truth_p - mt).T @ (est_p - me)
    U, _, Vt = np.linalg.svd(C)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    return R, mt - R @ me


def align_posyaw(est_p, truth_p):
    """Same as :func:`align_se3` restricted to a rotation about global z."""
    me, mt = est_p.mean(axis=0), truth_p.mean(axis=0)
    e, g = est_p - me, truth_p - mt
    num = np.sum(e[:, 0] * g[:, 1] - e[:, 1] * g[:, 0])
    den = np.sum(e[:, 0] * g[:, 0] + e[:, 1] * g[:, 1])
    yaw = math.atan2(num, den)
    c, s = math.cos(yaw), math.sin(yaw)
    R = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return R, mt - R @ me


def compute_ate(est: TrajectoryFile, truth: TrajectoryFile, alignment: str = "posyaw",
                max_dt: float = 0.01) -> float:
    """Position RMSE after aligning ``est`` onto ``truth``."""
    ie, it = associate(est, truth, max_dt)
    pe, pt = est.p[ie], truth.p[it]
    if alignment == "se3":
        R, t = align_se3(pe, pt)
    elif alignment == "posyaw":
        R, t = align_posyaw(pe, pt)
    else:
        raise ValueError(f"unknown alignment {alignment!r}")
    err = pe @ R.T + t - pt
    return float(np.sqrt(np.mean(np.sum(err * err, axis=1))))


# -- initial state -----------------------------------------------------------------

def write_init(path, t: float, x: ImuState):
    vec = lambda a: " ".join(repr(float(c)) for c in a)
    with open(path, "w") as fh:
        fh.write(f"t = {sec_to_ns(t)}\n")
        fh.write(f"p = {vec(x.p)}\nv = {vec(x.v)}\nq = {vec(x.q.wxyz)}\n")
        fh.write(f"ba = {vec(x.ba)}\nbg = {vec(x.bg)}\n")


def read_init(path):
    """Returns ``(t_seconds, ImuState)``."""
    kv = {}
    for lineno, s in _data_lines(path):
        if "=" not in s:
            raise ParseError(f"{path}:{lineno}: expected key = value")
        k, v = (x.strip() for x in s.split("=", 1))
        kv[k] = v
    try:
        t = ns_to_sec(int(kv["t"]))
        f = lambda k: np.array([float(c) for c in kv[k].split()])
        x = ImuState(f("p"), f("v"), UnitQuat.from_wxyz(f("q")), f("ba"), f("bg"))
    except (KeyError, ValueError) as exc:
        raise ParseError(f"{path}: bad init file ({exc})") from None
    return t, x


# -- bench reports -----------------------------------------------------------------

@dataclass
class BenchReport:
    mode: str
    solve_times_ms: list
    marg_times_ms: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    tracks: list = field(default_factory=list)
    ate: float | None = None
    alignment: str = "posyaw"

    @property
    def mean_ms(self) -> float:
        return float(np.mean(self.solve_times_ms)) if self.solve_times_ms else float("nan")

    @property
    def median_ms(self) -> float:
        return float(np.median(self.solve_times_ms)) if self.solve_times_ms else float("nan")

    @property
    def p95_ms(self) -> float:
        return float(np.percentile(self.solve_times_ms, 95)) if self.solve_times_ms else float("nan")

    @property
    def mean_marg_ms(self) -> float:
        return float(np.mean(self.marg_times_ms)) if self.marg_times_ms else 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(mean_ms=self.mean_ms, median_ms=self.median_ms, p95_ms=self.p95_ms,
                 mean_marg_ms=self.mean_marg_ms,
                 mean_iterations=float(np.mean(self.iterations)) if self.iterations else 0.0)
        return d

    def write(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def read(cls, path) -> "BenchReport":
        d = json.loads(Path(path).read_text())
        keys = {"mode", "solve_times_ms", "marg_times_ms", "iterations", "tracks", "ate", "alignment"}
        return cls(**{k: v for k, v in d.items() if k in keys})


def comparison_table(reports) -> str:
    lines = [f"{'mode':<16} {'ATE (m)':>10} {'avg solve (ms)':>15} {'median (ms)':>12} "
             f"{'p95 (ms)':>10} {'avg marg (ms)':>14} {'avg iters':>10}"]
    for r in reports:
        ate = "n/a" if r.ate is None else f"{r.ate:.6f}"
        lines.append(f"{r.mode:<16} {ate:>10} {r.mean_ms:>15.3f} {r.median_ms:>12.3f} "
                     f"{r.p95_ms:>10.3f} {r.mean_marg_ms:>14.3f} "
                     f"{np.mean(r.iterations) if r.iterations else 0:>10.2f}")
    if len(reports) == 2 and reports[1].mean_ms > 0:
        lines.append(f"solve-time ratio {reports[0].mode}/{reports[1].mode}: "
                     f"{reports[0].mean_ms / reports[1].mean_ms:.3f}")
    return "\n".join(lines)
