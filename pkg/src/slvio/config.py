"""``key = value`` configuration files shared by the estimator, simulator and CLI.

Blank lines and ``#`` comments are ignored; vectors are whitespace separated.
Unknown keys are rejected. See ``configs/*.cfg`` and the README for the full
key list.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .estimator import KeyframeParams, LMParams, Mode, WindowConfig
from .imu import GRAVITY, NoiseParams
from .manifold import UnitQuat
from .simulator import SceneSpec, TrajectorySpec, default_extrinsics
from .visual import Extrinsics, HuberParams, PairPolicy


@dataclass
class Config:
    window: WindowConfig = field(default_factory=WindowConfig)
    noise: NoiseParams = field(default_factory=NoiseParams)
    ext: Extrinsics = field(default_factory=default_extrinsics)
    intrinsics: tuple = (460.0, 460.0, 376.0, 240.0)
    trajectory: TrajectorySpec = field(default_factory=TrajectorySpec)
    scene: SceneSpec = field(default_factory=SceneSpec)
    bias_a: np.ndarray = field(default_factory=lambda: np.array([0.05, -0.03, 0.02]))
    bias_g: np.ndarray = field(default_factory=lambda: np.array([0.002, -0.001, 0.003]))
    imu_noise: bool = True
    seed: int = 0

    def with_mode(self, mode) -> "Config":
        return replace(self, window=replace(self.window, mode=Mode.parse(mode)))

    def with_seed(self, seed: int) -> "Config":
        return replace(self, seed=seed, scene=replace(self.scene, seed=seed))


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _vec(n):
    def parse(s):
        a = np.array([float(c) for c in s.split()])
        if a.shape != (n,):
            raise ValueError(f"expected {n} numbers, got {len(a)}")
        return a
    return parse


# key -> (section, field, parser)
_SCHEMA = {
    "window_size": ("window", "window_size", int),
    "mode": ("window", "mode", Mode.parse),
    "pair_policy": ("window", "pair_policy", PairPolicy),
    "huber_delta": ("window", "huber", lambda s: HuberParams(float(s))),
    "baseline_gate": ("window", "baseline_gate", float),
    "pixel_sigma": ("window", "pixel_sigma", float),
    "max_tracks": ("window", "max_tracks", int),
    "outlier_threshold": ("window", "outlier_threshold", float),
    "gate_threshold": ("window", "gate_threshold", float),
    "epipolar_noise": ("window", "epipolar_noise", str),
    "reject_outliers": ("window", "reject_outliers", _bool),
    "lm.initial_damping": ("lm", "initial_damping", float),
    "lm.max_iterations": ("lm", "max_iterations", int),
    "lm.cost_tolerance": ("lm", "cost_tolerance", float),
    "lm.step_tolerance": ("lm", "step_tolerance", float),
    "keyframe.min_parallax": ("keyframe", "min_parallax", float),
    "keyframe.min_tracked": ("keyframe", "min_tracked", int),
    "noise.sigma_g": ("noise", "sigma_g", float),
    "noise.sigma_a": ("noise", "sigma_a", float),
    "noise.sigma_bg": ("noise", "sigma_bg", float),
    "noise.sigma_ba": ("noise", "sigma_ba", float),
    "gravity": ("noise", "gravity", _vec(3)),
    "intrinsics": ("top", "intrinsics", lambda s: tuple(float(x) for x in _vec(4)(s))),
    "extrinsics.q_ic": ("ext", "R_ic", lambda s: UnitQuat.from_wxyz(_vec(4)(s))),
    "extrinsics.p_ic": ("ext", "p_ic", _vec(3)),
    "sim.kind": ("trajectory", "kind", str),
    "sim.duration": ("trajectory", "duration", float),
    "sim.imu_rate": ("trajectory", "imu_rate", float),
    "sim.frame_rate": ("trajectory", "frame_rate", float),
    "sim.radius": ("trajectory", "radius", float),
    "sim.omega": ("trajectory", "omega", float),
    "sim.height_amp": ("trajectory", "height_amp", float),
    "sim.height_omega": ("trajectory", "height_omega", float),
    "sim.roll_amp": ("trajectory", "roll_amp", float),
    "sim.roll_omega": ("trajectory", "roll_omega", float),
    "sim.speed": ("trajectory", "speed", float),
    "sim.lateral_amp": ("trajectory", "lateral_amp", float),
    "sim.lateral_omega": ("trajectory", "lateral_omega", float),
    "sim.landmark_count": ("scene", "landmark_count", int),
    "sim.placement": ("scene", "placement", str),
    "sim.depth_range": ("scene", "depth_range", lambda s: tuple(float(x) for x in _vec(2)(s))),
    "sim.pixel_sigma": ("scene", "pixel_sigma", float),
    "sim.outlier_fraction": ("scene", "outlier_fraction", float),
    "sim.corridor_half_width": ("scene", "corridor_half_width", float),
    "sim.corridor_length": ("scene", "corridor_length", float),
    "sim.bias_a": ("top", "bias_a", _vec(3)),
    "sim.bias_g": ("top", "bias_g", _vec(3)),
    "sim.imu_noise": ("top", "imu_noise", _bool),
    "seed": ("top", "seed", int),
}

KEYS = tuple(_SCHEMA)


def parse_config(text: str, source: str = "<config>") -> Config:
    sections = {k: {} for k in ("window", "lm", "keyframe", "noise", "ext", "top", "trajectory", "scene")}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        sec, name, parse = _SCHEMA[key]
        try:
            sections[sec][name] = parse(val)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    try:
        base = Config()
        top = sections["top"]
        intr = top.get("intrinsics", base.intrinsics)
        win = dict(sections["window"])
        win["lm"] = replace(base.window.lm, **sections["lm"])
        win["keyframe"] = replace(base.window.keyframe, **sections["keyframe"])
        win.setdefault("focal_length", 0.5 * (intr[0] + intr[1]))
        window = replace(base.window, **win)
        noise = replace(base.noise, **sections["noise"])
        ext = replace(base.ext, **sections["ext"])
        traj = replace(base.trajectory, **sections["trajectory"])
        scene_kw = dict(sections["scene"])
        scene_kw.setdefault("intrinsics", intr)
        if "seed" in top:
            scene_kw.setdefault("seed", top["seed"])
        if scene_kw.get("placement") == "walls" and "depth_range" not in scene_kw:
            scene_kw["depth_range"] = (0.5, 50.0)
        scene = replace(base.scene, **scene_kw)
        return Config(window=window, noise=noise, ext=ext, intrinsics=intr, trajectory=traj,
                      scene=scene, bias_a=top.get("bias_a", base.bias_a),
                      bias_g=top.get("bias_g", base.bias_g),
                      imu_noise=top.get("imu_noise", base.imu_noise), seed=top.get("seed", base.seed))
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path) -> Config:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(p.read_text(), str(path))


def dump_config(cfg: Config) -> str:
    """Render every key; ``parse_config(dump_config(c))`` reproduces ``c``."""
    vec = lambda a: " ".join(repr(float(x)) for x in a)
    w, n, t, s = cfg.window, cfg.noise, cfg.trajectory, cfg.scene
    lines = [
        f"window_size = {w.window_size}", f"mode = {w.mode.value}",
        f"pair_policy = {w.pair_policy.value}", f"huber_delta = {w.huber.delta!r}",
        f"baseline_gate = {w.baseline_gate!r}", f"pixel_sigma = {w.pixel_sigma!r}",
        f"max_tracks = {w.max_tracks}", f"outlier_threshold = {w.outlier_threshold!r}",
        f"gate_threshold = {w.gate_threshold!r}",
        f"epipolar_noise = {w.epipolar_noise}",
        f"reject_outliers = {str(w.reject_outliers).lower()}",
        f"lm.initial_damping = {w.lm.initial_damping!r}", f"lm.max_iterations = {w.lm.max_iterations}",
        f"lm.cost_tolerance = {w.lm.cost_tolerance!r}", f"lm.step_tolerance = {w.lm.step_tolerance!r}",
        f"keyframe.min_parallax = {w.keyframe.min_parallax!r}",
        f"keyframe.min_tracked = {w.keyframe.min_tracked}",
        f"noise.sigma_g = {n.sigma_g!r}", f"noise.sigma_a = {n.sigma_a!r}",
        f"noise.sigma_bg = {n.sigma_bg!r}", f"noise.sigma_ba = {n.sigma_ba!r}",
        f"gravity = {vec(n.gravity)}", f"intrinsics = {vec(cfg.intrinsics)}",
        f"extrinsics.q_ic = {vec(cfg.ext.R_ic.wxyz)}", f"extrinsics.p_ic = {vec(cfg.ext.p_ic)}",
    ]
    for f_ in fields(TrajectorySpec):
        lines.append(f"sim.{f_.name} = {getattr(t, f_.name)}")
    lines += [
        f"sim.landmark_count = {s.landmark_count}", f"sim.placement = {s.placement}",
        f"sim.depth_range = {vec(s.depth_range)}", f"sim.pixel_sigma = {s.pixel_sigma!r}",
        f"sim.outlier_fraction = {s.outlier_fraction!r}",
        f"sim.corridor_half_width = {s.corridor_half_width!r}",
        f"sim.corridor_length = {s.corridor_length!r}",
        f"sim.bias_a = {vec(cfg.bias_a)}", f"sim.bias_g = {vec(cfg.bias_g)}",
        f"sim.imu_noise = {str(cfg.imu_noise).lower()}", f"seed = {cfg.seed}",
    ]
    return "\n".join(lines) + "\n"
