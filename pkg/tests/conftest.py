from dataclasses import dataclass, field

import numpy as np
import pytest

from slvio.estimator import Mode, WindowConfig, WindowProblem, gauge_prior
from slvio.imu import NoiseParams, predict, preintegrate
from slvio.simulator import (SceneSpec, TrajectorySpec, default_extrinsics, generate_truth,
                             place_landmarks, synthesize_imu, synthesize_tracks)
from slvio.visual import FeatureTrack

BIAS = (np.array([0.05, -0.03, 0.02]), np.array([0.002, -0.001, 0.003]))


@dataclass
class SynthWindow:
    window: WindowProblem
    truth_states: list
    truth_lambda: dict = field(default_factory=dict)


def make_window(mode=Mode.STRUCTURELESS, n_kf=4, stride=3, n_tracks=40, seed=0,
                pixel_sigma=0.0, imu_noise=False, kind="circle", with_prior=True,
                consistent=True) -> SynthWindow:
    """A window of ``n_kf`` keyframes, ``stride`` camera frames apart.

    With ``consistent`` (and no noise) the states are chained through the
    preintegrated IMU and bearings re-projected through those states, so every
    residual is zero up to rounding; otherwise states are the sampled truth.
    """
    spec = TrajectorySpec(kind=kind, duration=(n_kf - 1) * stride / 10.0 + 0.2)
    placement = "walls" if kind == "corridor" else "shell"
    depth = (0.5, 50.0) if kind == "corridor" else (6.0, 10.0)
    scene = SceneSpec(landmark_count=400, placement=placement, depth_range=depth,
                      pixel_sigma=pixel_sigma, seed=seed)
    ext = default_extrinsics()
    noise = NoiseParams()
    truth = generate_truth(spec)
    imu = synthesize_imu(truth, noise, BIAS, seed=seed, noisy=imu_noise)
    td = synthesize_tracks(truth, scene, ext)
    fidx = truth.frame_indices()
    kf_frames = [s * stride for s in range(n_kf)]
    kf_imu = [int(fidx[f]) for f in kf_frames]
    states = [truth.state(k, *BIAS) for k in kf_imu]
    preints = [preintegrate(imu[a:b + 1], BIAS, noise) for a, b in zip(kf_imu, kf_imu[1:])]
    if consistent:
        for k, d in enumerate(preints):
            states[k + 1] = predict(states[k], d)
    landmarks = place_landmarks(scene, spec)

    fx, fy, cx, cy = scene.intrinsics
    slot_of = {f: s for s, f in enumerate(kf_frames)}
    per, depth_at = {}, {}
    for i in range(len(td.feature_id)):
        s = slot_of.get(int(td.frame_id[i]))
        if s is None:
            continue
        f = int(td.feature_id[i])
        if consistent and pixel_sigma == 0.0:
            x = states[s]
            Pc = (x.R @ ext.R).T @ (landmarks[f] - x.p - x.R @ ext.p_ic)
            z, d = Pc / Pc[2], float(Pc[2])
        else:
            z = np.array([(td.u[i] - cx) / fx, (td.v[i] - cy) / fy, 1.0])
            d = float(td.depth[i])
        per.setdefault(f, []).append((s, z))
        depth_at[(f, s)] = d
    tracks = [FeatureTrack(f, sorted(obs, key=lambda o: o[0]))
              for f, obs in sorted(per.items()) if len(obs) >= 2]
    tracks.sort(key=lambda tr: (-len(tr.obs), tr.feature_id))
    tracks = tracks[:n_tracks]
    lam = {tr.feature_id: 1.0 / depth_at[(tr.feature_id, tr.obs[0][0])] for tr in tracks}
    prior = gauge_prior(states[0]) if with_prior else None
    window = WindowProblem(list(states), preints, tracks, ext, Mode.parse(mode), prior,
                           dict(lam) if Mode.parse(mode) is Mode.STRUCTURE_BASED else {})
    return SynthWindow(window, list(states), lam)


@pytest.fixture
def cfg_structureless():
    return WindowConfig(mode=Mode.STRUCTURELESS)


@pytest.fixture
def cfg_structure_based():
    return WindowConfig(mode=Mode.STRUCTURE_BASED)


# -- acceptance summary ------------------------------------------------------------

ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    """``record(key, passed, detail)``; lines are printed in the terminal summary."""
    def record(key, passed, detail):
        ACCEPTANCE[key] = (bool(passed), detail)
        print(f"{key} {'PASS' if passed else 'FAIL'}  {detail}")
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(k[1:].split()[0].split("-")[0]), k)):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{key:<12} {'PASS' if ok else 'FAIL'}  {detail}")
