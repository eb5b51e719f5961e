"""Fill the frames between keyframes and stitch the full video back together."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import ConfigError, Frame, ShapeError
from .synthworld import ArmSpec, ObjectState, TaskScript, initial_objects, lerp_pose, render_sequence, step_objects

KINDS = ("pixel_linear", "pose_rerender")


@dataclass(frozen=True)
class Interpolator:
    kind: str = "pixel_linear"
    spec: ArmSpec | None = None
    script: TaskScript | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown interpolator kind {self.kind!r}")
        if self.kind == "pose_rerender" and (self.spec is None or self.script is None):
            raise ConfigError("pose_rerender needs an arm spec and task script")


@dataclass(frozen=True)
class Reconstruction:
    frames: list[Frame]
    keyframe_positions: list[int]
    # Full pose sequence when endpoint poses were supplied, else None.
    poses: np.ndarray | None = None


def _blend(xa: np.ndarray, xb: np.ndarray, t: int, g: int) -> Frame:
    alpha = t / (g + 1)
    v = (1.0 - alpha) * xa + alpha * xb
    return Frame(np.floor(np.clip(v, 0.0, 255.0) + 0.5).astype(np.uint8))


def _rerender(
    interp: Interpolator,
    shape: tuple[int, ...],
    pose_a: np.ndarray,
    pose_b: np.ndarray,
    g: int,
    objects: Sequence[ObjectState],
) -> tuple[list[Frame], np.ndarray, tuple[ObjectState, ...]]:
    poses = np.asarray([lerp_pose(pose_a, pose_b, t, g + 1) for t in range(1, g + 1)]).reshape(g, -1)
    h, w = shape[0], shape[1]
    frames, state = render_sequence(poses, interp.script, interp.spec, w, h, objects)
    return frames, poses, state


def interpolate(
    interp: Interpolator,
    xa: Frame,
    xb: Frame,
    g: int,
    pose_a=None,
    pose_b=None,
    objects: Sequence[ObjectState] | None = None,
) -> list[Frame]:
    """``g`` frames strictly between ``xa`` and ``xb`` at alpha = t / (g + 1).

    ``objects`` is the grasp state at ``xa`` for ``pose_rerender``; it defaults
    to the script's initial placement stepped once at ``pose_a``.
    """
    if g < 0:
        raise ShapeError("gap must be >= 0")
    if xa.pixels.shape != xb.pixels.shape:
        raise ShapeError(f"frame shapes differ: {xa.pixels.shape} vs {xb.pixels.shape}")
    if g == 0:
        return []
    if interp.kind == "pixel_linear":
        a = xa.pixels.astype(np.float64)
        b = xb.pixels.astype(np.float64)
        return [_blend(a, b, t, g) for t in range(1, g + 1)]
    if pose_a is None or pose_b is None:
        raise ConfigError("pose_rerender needs both endpoint poses")
    pa = np.asarray(pose_a, dtype=np.float64)
    pb = np.asarray(pose_b, dtype=np.float64)
    if objects is None:
        objects = step_objects(initial_objects(interp.script), pa, interp.spec)
    frames, _, _ = _rerender(interp, xa.pixels.shape, pa, pb, g, objects)
    return frames


def reconstruct_video(
    keyframes: Sequence[Frame],
    gaps: Sequence[int],
    interp: Interpolator,
    poses: Sequence | None = None,
) -> Reconstruction:
    """Interleave keyframes with interpolated runs: k0, g0 frames, k1, ..., k_last.

    ``poses`` holds one pose per keyframe; with ``pose_rerender`` the grasp
    state is threaded through the whole sequence in order.
    """
    keyframes = list(keyframes)
    gaps = [int(g) for g in gaps]
    if len(keyframes) < 2 or len(gaps) != len(keyframes) - 1:
        raise ShapeError(f"{len(keyframes)} keyframes need {len(keyframes) - 1} gaps, got {len(gaps)}")
    if any(g < 0 for g in gaps):
        raise ShapeError("gaps must be >= 0")
    if poses is not None and len(poses) != len(keyframes):
        raise ShapeError("need one pose per keyframe")
    shape = keyframes[0].pixels.shape
    if any(k.pixels.shape != shape for k in keyframes):
        raise ShapeError("keyframes differ in shape")
    if interp.kind == "pose_rerender" and poses is None:
        raise ConfigError("pose_rerender needs keyframe poses")

    kposes = None if poses is None else [np.asarray(p, dtype=np.float64) for p in poses]
    out: list[Frame] = [keyframes[0]]
    positions = [0]
    pose_rows = [kposes[0]] if kposes is not None else None
    state = None
    if interp.kind == "pose_rerender":
        state = step_objects(initial_objects(interp.script), kposes[0], interp.spec)
    for i, g in enumerate(gaps):
        xa, xb = keyframes[i], keyframes[i + 1]
        if interp.kind == "pixel_linear":
            out.extend(interpolate(interp, xa, xb, g))
            if kposes is not None:
                pose_rows.extend(lerp_pose(kposes[i], kposes[i + 1], t, g + 1) for t in range(1, g + 1))
        else:
            frames, seg_poses, state = _rerender(interp, shape, kposes[i], kposes[i + 1], g, state)
            out.extend(frames)
            pose_rows.extend(seg_poses)
            state = step_objects(state, kposes[i + 1], interp.spec)
        positions.append(len(out))
        out.append(xb)
        if kposes is not None:
            pose_rows.append(kposes[i + 1])
    pose_arr = None if pose_rows is None else np.vstack(pose_rows)
    return Reconstruction(out, positions, pose_arr)
