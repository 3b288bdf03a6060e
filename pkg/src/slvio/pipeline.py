"""Glue between data directories, the simulator and the estimator.

A data directory holds ``imu.csv``, ``tracks.csv``, ``truth.txt`` and
``init.txt`` (the initial state at the first frame).
"""
from __future__ import annotations

import time
from pathlib import Path

import numpy as np

from .config import Config
from .errors import EmptyStreamError
from .estimator import Estimator, Mode
from .evalkit import (BenchReport, TrajectoryFile, compute_ate, load_frames_csv, load_imu_csv,
                      read_init, read_trajectory, write_imu_csv, write_init, write_tracks_csv,
                      write_trajectory)
from .simulator import generate_truth, synthesize_imu, synthesize_tracks


def simulate(cfg: Config, out) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    truth = generate_truth(cfg.trajectory)
    bias = (np.asarray(cfg.bias_a, float), np.asarray(cfg.bias_g, float))
    imu = synthesize_imu(truth, cfg.noise, bias, seed=cfg.seed, noisy=cfg.imu_noise)
    td = synthesize_tracks(truth, cfg.scene, cfg.ext)
    write_imu_csv(out / "imu.csv", imu)
    write_tracks_csv(out / "tracks.csv", td.feature_id, td.frame_id, td.t_ns, td.u, td.v)
    quats = [truth.state(k).q.xyzw for k in range(len(truth))]
    write_trajectory(out / "truth.txt", TrajectoryFile(truth.t, truth.p, np.array(quats)),
                     header="timestamp tx ty tz qx qy qz qw")
    k0 = int(truth.frame_indices()[0])
    write_init(out / "init.txt", float(truth.t[k0]), truth.state(k0, *bias))
    return out


def run(cfg: Config, data, mode=None, log=None):
    """Runs the estimator over a data directory; returns ``(trajectory, report)``."""
    data = Path(data)
    wcfg = cfg.window if mode is None else cfg.with_mode(mode).window
    imu = load_imu_csv(data / "imu.csv")
    frames = load_frames_csv(data / "tracks.csv", cfg.intrinsics)
    if not imu or not frames:
        raise EmptyStreamError("data directory has no IMU samples or no frames")
    t0, x0 = read_init(data / "init.txt")
    frames = [f for f in frames if f.t >= t0 - 1e-9]
    if not frames:
        raise EmptyStreamError("no frames at or after the initial state")
    imu_t = np.array([s.t for s in imu])
    start = int(np.searchsorted(imu_t, frames[0].t - 1e-9))
    est = Estimator(wcfg, cfg.noise, cfg.ext, x0, frames[0].t, frames[0].obs,
                    imu[start] if start < len(imu) else None)
    times, states = [frames[0].t], [x0]
    clock = time.perf_counter()
    for n, fr in enumerate(frames[1:], 1):
        hi = int(np.searchsorted(imu_t, fr.t + 1e-9))
        x = est.process_keyframe(fr.t, fr.obs, imu[start:hi])
        start = hi
        times.append(fr.t)
        states.append(x)
        if log is not None and n % 50 == 0:
            log(f"frame {n}/{len(frames) - 1}  {time.perf_counter() - clock:.1f} s")
    traj = TrajectoryFile.from_states(times, states)
    h = est.history
    report = BenchReport(
        mode=Mode.parse(wcfg.mode).value,
        solve_times_ms=[1000.0 * r.solve_time for r in h],
        marg_times_ms=[1000.0 * r.marg_time for r in h],
        iterations=[int(r.iterations) for r in h],
        tracks=[int(r.num_tracks) for r in h],
    )
    truth_path = data / "truth.txt"
    if truth_path.is_file():
        report.ate = compute_ate(traj, read_trajectory(truth_path), report.alignment)
    return traj, report


def run_to_files(cfg: Config, data, out, report_path=None, mode=None, log=None):
    traj, report = run(cfg, data, mode, log)
    write_trajectory(out, traj, header="timestamp tx ty tz qx qy qz qw")
    if report_path is not None:
        report.write(report_path)
    return traj, report
