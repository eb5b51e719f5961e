"""Keyframe-factorized video reconstruction for robot episodes.

Pick keyframes from the pose trajectory, generate only those, then fill the
gaps by interpolation. A synthetic planar arm provides ground truth.
"""

__version__ = "0.1.0"

from .core import (
    ConfigError,
    DomainError,
    Episode,
    Frame,
    KeyFrameSet,
    KeyRangeError,
    ShapeError,
    StateError,
    Trajectory,
)
from .simplify import SimplifyParams, rdp_simplify, select_keyframes_by_count
from .metrics import cost_model, psnr, ssim, trajectory_complexity
from .pipeline import PipelineConfig, compare, run_episode

__all__ = [
    "ConfigError",
    "DomainError",
    "Episode",
    "Frame",
    "KeyFrameSet",
    "KeyRangeError",
    "PipelineConfig",
    "ShapeError",
    "SimplifyParams",
    "StateError",
    "Trajectory",
    "compare",
    "cost_model",
    "psnr",
    "rdp_simplify",
    "run_episode",
    "select_keyframes_by_count",
    "ssim",
    "trajectory_complexity",
]
