"""Structureless visual-inertial odometry with an inverse-depth baseline."""
from .errors import SlvioError
from .estimator import Estimator, LMParams, Mode, WindowConfig, solve_window
from .imu import ImuSample, ImuState, NoiseParams, PreintDelta, imu_residual, preintegrate
from .manifold import UnitQuat, boxminus, boxplus, so3_exp, so3_log
from .visual import Extrinsics, FeatureTrack, HuberParams, PairPolicy, epipolar_residual, reprojection_residual

__version__ = "0.1.0"

__all__ = [
    "Estimator", "Extrinsics", "FeatureTrack", "HuberParams", "ImuSample", "ImuState", "LMParams",
    "Mode", "NoiseParams", "PairPolicy", "PreintDelta", "SlvioError", "UnitQuat", "WindowConfig",
    "boxminus", "boxplus", "epipolar_residual", "imu_residual", "preintegrate",
    "reprojection_residual", "so3_exp", "so3_log", "solve_window",
]
