"""Domain types shared across the pipeline, episode validation and keyframe slicing."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

DEFAULT_FPS = 16.0
DEFAULT_EPISODE_FRAMES = 81


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


class ConfigError(ValueError):
    pass


class StateError(RuntimeError):
    pass


class KeyRangeError(IndexError):
    pass


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def as_pose(values: Sequence[float] | np.ndarray) -> np.ndarray:
    """Coerce to a read-only 1-D float64 pose vector, rejecting non-finite entries."""
    pose = np.array(values, dtype=np.float64).reshape(-1)
    if pose.size == 0:
        raise ShapeError("pose must have at least one dimension")
    if not np.all(np.isfinite(pose)):
        raise DomainError("pose contains non-finite values")
    return _frozen(pose)


@dataclass(frozen=True)
class Trajectory:
    """Time-ordered pose vectors, stored as an (N+1, D) array."""

    states: np.ndarray
    timestamps: np.ndarray

    def __post_init__(self) -> None:
        states = np.array(self.states, dtype=np.float64)
        if states.ndim == 1:
            states = states[:, None]
        if states.ndim != 2:
            raise ShapeError(f"states must be 2-D, got shape {states.shape}")
        ts = np.array(self.timestamps, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "states", _frozen(states))
        object.__setattr__(self, "timestamps", _frozen(ts))

    @classmethod
    def from_states(cls, states, fps: float = DEFAULT_FPS) -> "Trajectory":
        states = np.asarray(states, dtype=np.float64)
        n = states.shape[0]
        ts = np.arange(n, dtype=np.float64) / fps if fps > 0 else np.zeros(n)
        return cls(states, ts)

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def subset(self, indices: Sequence[int]) -> "Trajectory":
        idx = np.asarray(indices, dtype=np.int64)
        return Trajectory(self.states[idx], self.timestamps[idx])


@dataclass(frozen=True)
class Frame:
    """8-bit raster, (H, W) for grayscale or (H, W, 3) for RGB."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels)
        if px.dtype != np.uint8:
            if np.any(px < 0) or np.any(px > 255):
                raise DomainError("pixel intensities must lie in [0, 255]")
            px = px.astype(np.uint8)
        if px.ndim == 3 and px.shape[2] == 1:
            px = px[:, :, 0]
        if px.ndim not in (2, 3) or (px.ndim == 3 and px.shape[2] != 3):
            raise ShapeError(f"unsupported frame shape {px.shape}")
        object.__setattr__(self, "pixels", _frozen(np.ascontiguousarray(px)))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.pixels.ndim == 2 else 3

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Frame):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(
            np.array_equal(self.pixels, other.pixels)
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class Episode:
    id: str
    description: str
    frames: tuple[Frame, ...]
    trajectory: Trajectory
    fps: float = DEFAULT_FPS
    # Free-form provenance (script name, seed, segment boundaries, ...).
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "frames", tuple(self.frames))

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def last_index(self) -> int:
        return len(self.frames) - 1


@dataclass(frozen=True)
class KeyFrameSet:
    indices: tuple[int, ...]
    epsilon: float
    source_length: int

    def __post_init__(self) -> None:
        idx = tuple(int(i) for i in self.indices)
        object.__setattr__(self, "indices", idx)
        if self.epsilon < 0:
            raise DomainError("epsilon must be >= 0")
        if len(idx) < 2:
            raise DomainError("a keyframe set needs at least two indices")
        if idx[0] != 0 or idx[-1] != self.source_length - 1:
            raise DomainError(
                f"keyframes must start at 0 and end at {self.source_length - 1}, got {idx[0]}..{idx[-1]}"
            )
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise DomainError("keyframe indices must be strictly increasing")

    def __len__(self) -> int:
        return len(self.indices)

    def true_gaps(self) -> np.ndarray:
        """Number of frames strictly between consecutive keyframes."""
        return np.diff(np.asarray(self.indices)) - 1


def validate_episode(episode: Episode) -> list[str]:
    """Return a list of human-readable violations; empty when the episode is well formed."""
    violations: list[str] = []
    traj = episode.trajectory
    n_frames = len(episode.frames)
    if n_frames != len(traj):
        violations.append(
            f"length mismatch: frames has {n_frames} entries, trajectory has {len(traj)}"
        )
    if len(traj) < 2:
        violations.append("trajectory: length must be >= 2")
    if not episode.description or not episode.description.strip():
        violations.append("description empty")
    if not np.all(np.isfinite(traj.states)):
        violations.append("trajectory: non-finite pose values")
    if traj.timestamps.shape[0] != len(traj):
        violations.append("trajectory: timestamp count differs from state count")
    elif episode.fps > 0 and len(traj) > 1 and np.any(np.diff(traj.timestamps) <= 0):
        violations.append("trajectory: timestamps not strictly increasing")
    elif np.any(np.diff(traj.timestamps) < 0):
        violations.append("trajectory: timestamps decreasing")
    if n_frames:
        shape0 = episode.frames[0].pixels.shape
        bad = [i for i, f in enumerate(episode.frames) if f.pixels.shape != shape0]
        if bad:
            violations.append(f"frames: dimensions differ from frame 0 at indices {bad[:5]}")
    if episode.fps < 0 or not np.isfinite(episode.fps):
        violations.append("fps: must be a finite non-negative number")
    return violations


def slice_keyframes(episode: Episode, keys: KeyFrameSet) -> list[tuple[int, Frame, np.ndarray]]:
    """Pick out (index, frame, pose) at each key index, in order."""
    n = len(episode.frames)
    if keys.source_length != n:
        raise KeyRangeError(
            f"keyframe set built for length {keys.source_length}, episode has {n} frames"
        )
    out = []
    for i in keys.indices:
        if not 0 <= i < n:
            raise KeyRangeError(f"key index {i} outside 0..{n - 1}")
        out.append((i, episode.frames[i], episode.trajectory.states[i]))
    return out


def density_to_count(density: float, n_frames: int) -> int:
    """Keyframe count for a density over an ``n_frames`` episode.

    Density is taken over the N intervals, plus the closing endpoint, so 0.2 of
    an 81-frame episode gives 17 keys and 1.0 gives every frame.
    """
    if not 0 < density <= 1:
        raise DomainError(f"density must lie in (0, 1], got {density}")
    count = int(np.floor(density * (n_frames - 1) + 0.5)) + 1
    return max(2, min(n_frames, count))
