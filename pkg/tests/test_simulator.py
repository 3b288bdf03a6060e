import numpy as np
import pytest

from slvio.errors import ConfigError
from slvio.imu import NoiseParams, predict, preintegrate
from slvio.simulator import (SceneSpec, TrajectorySpec, default_extrinsics, evaluate, generate_truth,
                             philox, place_landmarks, synthesize_imu, synthesize_tracks,
                             tracks_from_table)
from slvio.visual import epipolar_residual, reprojection_residual

NOISE = NoiseParams()


def test_circle_speed_is_constant():
    spec = TrajectorySpec(kind="circle", radius=4.0, omega=0.7, height_amp=0.0, duration=10.0)
    truth = generate_truth(spec)
    np.testing.assert_allclose(np.linalg.norm(truth.v, axis=1), 4.0 * 0.7, atol=1e-12)


def test_sample_count():
    assert len(generate_truth(TrajectorySpec(duration=60.0, imu_rate=200.0))) == 12001


@pytest.mark.parametrize("kind", ["circle", "lissajous", "corridor"])
def test_velocity_is_derivative_of_position(kind):
    spec = TrajectorySpec(kind=kind, duration=5.0)
    t = np.linspace(0.5, 4.5, 50)
    errs = []
    for h in (1e-2, 5e-3):
        p_plus, _, _, _, _ = evaluate(spec, t + h)
        p_minus, _, _, _, _ = evaluate(spec, t - h)
        _, v, _, _, _ = evaluate(spec, t)
        errs.append(np.abs((p_plus - p_minus) / (2 * h) - v).max())
    assert errs[1] < errs[0]
    assert 3.0 < errs[0] / errs[1] < 5.0


@pytest.mark.parametrize("kind", ["circle", "lissajous", "corridor"])
def test_body_rate_matches_attitude_derivative(kind):
    spec = TrajectorySpec(kind=kind, duration=5.0)
    t = np.linspace(0.5, 4.5, 20)
    h = 1e-5
    _, _, _, Rm, _ = evaluate(spec, t - h)
    _, _, _, Rp, _ = evaluate(spec, t + h)
    _, _, _, R, w = evaluate(spec, t)
    for k in range(len(t)):
        W = R[k].T @ (Rp[k] - Rm[k]) / (2 * h)
        np.testing.assert_allclose([W[2, 1], W[0, 2], W[1, 0]], w[k], atol=1e-8)


@pytest.mark.parametrize("kind", ["circle", "lissajous", "corridor"])
def test_attitude_follows_velocity(kind):
    truth = generate_truth(TrajectorySpec(kind=kind, duration=5.0))
    fwd = np.einsum("nij,j->ni", truth.R, [1.0, 0.0, 0.0])
    cos = np.einsum("ni,ni->n", fwd, truth.v) / np.linalg.norm(truth.v, axis=1)
    assert cos.min() > 1 - 1e-9


def test_stationary_specific_force():
    truth = generate_truth(TrajectorySpec(duration=1.0))
    truth.a[:] = 0.0
    truth.omega[:] = 0.0
    truth.R[:] = np.eye(3)
    imu = synthesize_imu(truth, NOISE, noisy=False)
    np.testing.assert_allclose(imu[0].accel, [0, 0, 9.81], atol=1e-15)
    np.testing.assert_allclose(imu[0].gyro, 0.0, atol=0)


def _closure(kind, rate):
    truth = generate_truth(TrajectorySpec(kind=kind, duration=10.0, imu_rate=rate))
    imu = synthesize_imu(truth, NOISE, noisy=False)
    d = preintegrate(imu, (np.zeros(3), np.zeros(3)), NOISE)
    return np.linalg.norm(predict(truth.state(0), d).p - truth.p[-1])


def test_noiseless_imu_closes_loop():
    assert _closure("circle", 200.0) < 1e-4


@pytest.mark.parametrize("kind", ["lissajous", "corridor"])
def test_closure_error_is_second_order(kind):
    # aggressive profiles exceed 1e-4 at 200 Hz; the error is pure midpoint discretization
    e1, e2 = _closure(kind, 200.0), _closure(kind, 400.0)
    assert 3.8 < e1 / e2 < 4.2
    assert e1 < 2e-3


def test_biases_are_added():
    truth = generate_truth(TrajectorySpec(duration=0.1))
    ba, bg = np.array([0.1, 0.2, 0.3]), np.array([0.01, 0.02, 0.03])
    a = synthesize_imu(truth, NOISE, noisy=False)
    b = synthesize_imu(truth, NOISE, (ba, bg), noisy=False)
    np.testing.assert_allclose(b[5].accel - a[5].accel, ba, atol=1e-14)
    np.testing.assert_allclose(b[5].gyro - a[5].gyro, bg, atol=1e-15)


def test_imu_noise_statistics_and_determinism():
    truth = generate_truth(TrajectorySpec(duration=20.0))
    clean = synthesize_imu(truth, NOISE, noisy=False)
    a = synthesize_imu(truth, NOISE, seed=3)
    b = synthesize_imu(truth, NOISE, seed=3)
    c = synthesize_imu(truth, NOISE, seed=4)
    ga = np.array([s.gyro for s in a]) - np.array([s.gyro for s in clean])
    assert np.array_equal(ga, np.array([s.gyro for s in b]) - np.array([s.gyro for s in clean]))
    assert not np.array_equal([s.gyro for s in a], [s.gyro for s in c])
    assert ga.std() == pytest.approx(NOISE.sigma_g * np.sqrt(200.0), rel=0.05)


def test_philox_streams_are_independent_and_reproducible():
    assert np.array_equal(philox(1, 2).random(5), philox(1, 2).random(5))
    assert not np.array_equal(philox(1, 2).random(5), philox(1, 3).random(5))
    assert not np.array_equal(philox(1, 2).random(5), philox(2, 2).random(5))


def _clean_scene(kind="circle"):
    placement = "walls" if kind == "corridor" else "shell"
    depth = (0.5, 50.0) if kind == "corridor" else (6.0, 10.0)
    return SceneSpec(landmark_count=300, placement=placement, depth_range=depth, pixel_sigma=0.0)


@pytest.mark.parametrize("kind", ["circle", "corridor"])
def test_noiseless_tracks_satisfy_both_residuals(kind):
    truth = generate_truth(TrajectorySpec(kind=kind, duration=2.0))
    scene = _clean_scene(kind)
    ext = default_extrinsics()
    td = synthesize_tracks(truth, scene, ext)
    tracks = tracks_from_table(td.feature_id, td.frame_id, td.u, td.v, scene.intrinsics)
    depth = {(f, fr): d for f, fr, d in zip(td.feature_id, td.frame_id, td.depth)}
    fidx = truth.frame_indices()
    worst_e = worst_r = 0.0
    for tr in tracks[:80]:
        (fi, zi) = tr.obs[0]
        xi = truth.state(fidx[fi])
        lam = 1.0 / depth[(tr.feature_id, fi)]
        for fj, zj in tr.obs[1:]:
            xj = truth.state(fidx[fj])
            worst_e = max(worst_e, abs(epipolar_residual(xi, xj, ext, zi, zj)[0]))
            worst_r = max(worst_r, np.abs(reprojection_residual(xi, xj, ext, zi, zj, lam)[0]).max())
    assert worst_e < 1e-12
    assert worst_r < 1e-12


def test_landmark_behind_camera_is_not_observed():
    spec = TrajectorySpec(kind="corridor", duration=20.0, lateral_amp=0.0)
    truth = generate_truth(spec)
    ext = default_extrinsics()
    scene = _clean_scene("corridor")
    landmarks = np.array([[5.0, 1.0, 0.0]])       # passed at x = 5 m after 5 s
    td = synthesize_tracks(truth, scene, ext, landmarks=landmarks)
    frames_seen = set(td.frame_id.tolist())
    before = [f for f, k in enumerate(truth.frame_indices()) if truth.p[k, 0] < 4.0]
    after = [f for f, k in enumerate(truth.frame_indices()) if truth.p[k, 0] > 5.5]
    assert frames_seen & set(before)
    assert not frames_seen & set(after)


def test_observations_inside_image():
    truth = generate_truth(TrajectorySpec(duration=3.0))
    scene = SceneSpec(landmark_count=500, pixel_sigma=0.0)
    td = synthesize_tracks(truth, scene, default_extrinsics())
    W, H = scene.image_size
    assert td.u.min() >= 0 and td.u.max() < W
    assert td.v.min() >= 0 and td.v.max() < H


def test_pixel_noise_std_within_ten_percent():
    truth = generate_truth(TrajectorySpec(duration=10.0))
    scene = SceneSpec(landmark_count=500, pixel_sigma=1.0)
    td = synthesize_tracks(truth, scene, default_extrinsics())
    err = np.concatenate([td.u - td.clean_uv[:, 0], td.v - td.clean_uv[:, 1]])
    assert len(err) >= 10_000
    assert abs(err.std() - 1.0) < 0.1


def test_outlier_fraction():
    truth = generate_truth(TrajectorySpec(duration=10.0))
    td = synthesize_tracks(truth, SceneSpec(landmark_count=500, outlier_fraction=0.05), default_extrinsics())
    assert td.outlier.mean() == pytest.approx(0.05, abs=0.01)


def test_corridor_is_deeper_than_circle():
    circle = synthesize_tracks(generate_truth(TrajectorySpec(kind="circle", duration=20.0)),
                               SceneSpec(landmark_count=1000), default_extrinsics())
    corridor = synthesize_tracks(generate_truth(TrajectorySpec(kind="corridor", duration=20.0)),
                                 SceneSpec(landmark_count=600, placement="walls", depth_range=(0.5, 50.0)),
                                 default_extrinsics())
    assert corridor.depth.mean() >= 3.0 * circle.depth.mean()


def test_tracks_are_deterministic():
    truth = generate_truth(TrajectorySpec(duration=2.0))
    scene = SceneSpec(landmark_count=200, outlier_fraction=0.05, seed=5)
    a = synthesize_tracks(truth, scene, default_extrinsics())
    b = synthesize_tracks(truth, scene, default_extrinsics())
    assert np.array_equal(a.u, b.u) and np.array_equal(a.feature_id, b.feature_id)


def test_landmark_placement_bounds():
    pts = place_landmarks(SceneSpec(landmark_count=1000), TrajectorySpec())
    r = np.linalg.norm(pts[:, :2], axis=1)
    assert r.min() >= 6.0 and r.max() <= 10.0


def test_spec_validation():
    with pytest.raises(ConfigError):
        TrajectorySpec(kind="spiral")
    with pytest.raises(ConfigError):
        SceneSpec(placement="sky")
    with pytest.raises(ConfigError):
        SceneSpec(outlier_fraction=0.9)
