"""A planar kinematic arm that plays scripted piecewise-linear tasks and renders them.

Pose layout is ``[theta_1, ..., theta_L, gripper]`` with joint angles in radians
(each relative to the previous link) and gripper aperture in [0, 1], where 1 is
fully open. Objects are grasped when the gripper is closed past 0.5 while
overlapping them, and snap to the end effector until it reopens.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .core import DEFAULT_FPS, DomainError, Episode, Frame, ShapeError, Trajectory

BACKGROUND = 16
LINK_INTENSITY = 235
JOINT_INTENSITY = 200
OBJECT_INTENSITY = {"disk": 150, "square": 110}
LINK_RADIUS_PX = 1
GRASP_APERTURE = 0.5


@dataclass(frozen=True)
class ArmSpec:
    link_lengths: tuple[float, ...] = (1.0, 0.8, 0.6)
    base: tuple[float, float] = (0.0, 0.0)
    gripper_radius: float = 0.18

    def __post_init__(self) -> None:
        object.__setattr__(self, "link_lengths", tuple(float(v) for v in self.link_lengths))
        object.__setattr__(self, "base", tuple(float(v) for v in self.base))
        if not self.link_lengths:
            raise DomainError("arm needs at least one link")
        if any(v <= 0 for v in self.link_lengths):
            raise DomainError("link lengths must be positive")
        if self.gripper_radius <= 0:
            raise DomainError("gripper radius must be positive")

    @property
    def n_links(self) -> int:
        return len(self.link_lengths)

    @property
    def pose_dim(self) -> int:
        return self.n_links + 1

    @property
    def reach(self) -> float:
        return sum(self.link_lengths)

    def workspace(self) -> tuple[float, float, float, float]:
        """World bounds (xmin, xmax, ymin, ymax) mapped onto the image."""
        r = 1.1 * (self.reach + self.gripper_radius)
        bx, by = self.base
        return bx - r, bx + r, by - r, by + r


@dataclass(frozen=True)
class SceneObject:
    shape: str
    position: tuple[float, float]
    radius: float

    def __post_init__(self) -> None:
        if self.shape not in OBJECT_INTENSITY:
            raise DomainError(f"unknown object shape {self.shape!r}")
        object.__setattr__(self, "position", (float(self.position[0]), float(self.position[1])))


@dataclass(frozen=True)
class TaskScript:
    """Condition text plus a list of (target pose, duration in frames) segments."""

    description: str
    segments: tuple[tuple[tuple[float, ...], int], ...]
    objects: tuple[SceneObject, ...] = ()
    start: tuple[float, ...] | None = None
    name: str = ""

    def __post_init__(self) -> None:
        segs = tuple((tuple(float(v) for v in t), int(d)) for t, d in self.segments)
        object.__setattr__(self, "segments", segs)
        object.__setattr__(self, "objects", tuple(self.objects))
        if self.start is not None:
            object.__setattr__(self, "start", tuple(float(v) for v in self.start))
        if not segs:
            raise DomainError("task script needs at least one segment")
        if any(d < 1 for _, d in segs):
            raise DomainError("segment durations must be >= 1 frame")

    @property
    def n_intervals(self) -> int:
        return sum(d for _, d in self.segments)

    def start_pose(self, spec: ArmSpec) -> np.ndarray:
        if self.start is not None:
            return np.asarray(self.start, dtype=np.float64)
        pose = np.zeros(spec.pose_dim)
        pose[-1] = 1.0
        return pose

    def breakpoints(self) -> list[int]:
        """Frame indices of segment boundaries, including 0 and N."""
        out = [0]
        for _, d in self.segments:
            out.append(out[-1] + d)
        return out

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "start": list(self.start) if self.start is not None else None,
            "segments": [{"target": list(t), "duration": d} for t, d in self.segments],
            "objects": [
                {"shape": o.shape, "position": list(o.position), "radius": o.radius}
                for o in self.objects
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TaskScript":
        return cls(
            description=obj["description"],
            segments=tuple((tuple(s["target"]), int(s["duration"])) for s in obj["segments"]),
            objects=tuple(
                SceneObject(o["shape"], tuple(o["position"]), float(o["radius"]))
                for o in obj.get("objects", [])
            ),
            start=tuple(obj["start"]) if obj.get("start") is not None else None,
            name=obj.get("name", ""),
        )


@dataclass(frozen=True)
class ObjectState:
    shape: str
    position: tuple[float, float]
    radius: float
    held: bool = False


def initial_objects(script: TaskScript) -> tuple[ObjectState, ...]:
    return tuple(ObjectState(o.shape, o.position, o.radius) for o in script.objects)


def forward_kinematics(pose, spec: ArmSpec) -> np.ndarray:
    """Joint positions from base to end effector, shape (L+1, 2).

    ``pose`` may carry a trailing gripper value, which is ignored.
    """
    pose = np.asarray(pose, dtype=np.float64).reshape(-1)
    if pose.size == spec.n_links + 1:
        angles = pose[:-1]
    elif pose.size == spec.n_links:
        angles = pose
    else:
        raise ShapeError(f"pose has {pose.size} values for an arm with {spec.n_links} links")
    cum = np.cumsum(angles)
    lengths = np.asarray(spec.link_lengths)
    steps = np.stack([lengths * np.cos(cum), lengths * np.sin(cum)], axis=1)
    pts = np.vstack([np.zeros((1, 2)), np.cumsum(steps, axis=0)])
    return pts + np.asarray(spec.base)


def step_objects(
    objects: Sequence[ObjectState], pose, spec: ArmSpec
) -> tuple[ObjectState, ...]:
    """Advance the grasp state by one frame at ``pose``."""
    pose = np.asarray(pose, dtype=np.float64)
    closed = pose[-1] < GRASP_APERTURE
    ee = forward_kinematics(pose, spec)[-1]
    ee_t = (float(ee[0]), float(ee[1]))
    out = []
    holding = any(o.held for o in objects)
    for o in objects:
        if o.held:
            out.append(replace(o, position=ee_t) if closed else replace(o, held=False))
            continue
        if closed and not holding:
            dist = math.hypot(o.position[0] - ee_t[0], o.position[1] - ee_t[1])
            if dist <= spec.gripper_radius + o.radius:
                out.append(ObjectState(o.shape, ee_t, o.radius, held=True))
                holding = True
                continue
        out.append(o)
    return tuple(out)


class _PixelMap:
    def __init__(self, spec: ArmSpec, width: int, height: int):
        xmin, xmax, ymin, ymax = spec.workspace()
        self.xmin, self.ymax = xmin, ymax
        self.sx = (width - 1) / (xmax - xmin)
        self.sy = (height - 1) / (ymax - ymin)
        self.width, self.height = width, height

    def __call__(self, xy) -> tuple[int, int]:
        col = (xy[0] - self.xmin) * self.sx
        row = (self.ymax - xy[1]) * self.sy
        return int(math.floor(col + 0.5)), int(math.floor(row + 0.5))

    def radius(self, r: float) -> float:
        return r * self.sx


def _bresenham(x0: int, y0: int, x1: int, y1: int) -> np.ndarray:
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    pts = []
    while True:
        pts.append((x0, y0))
        if x0 == x1 and y0 == y1:
            break
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy
    return np.asarray(pts, dtype=np.int64)


def _disk_offsets(radius: float) -> np.ndarray:
    r = int(math.ceil(radius))
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    mask = xx * xx + yy * yy <= radius * radius + 1e-9
    return np.stack([xx[mask], yy[mask]], axis=1)


def _stamp(img: np.ndarray, centers: np.ndarray, offsets: np.ndarray, value: int) -> None:
    pts = (centers[:, None, :] + offsets[None, :, :]).reshape(-1, 2)
    h, w = img.shape
    ok = (pts[:, 0] >= 0) & (pts[:, 0] < w) & (pts[:, 1] >= 0) & (pts[:, 1] < h)
    pts = pts[ok]
    img[pts[:, 1], pts[:, 0]] = value


def _fill_square(img: np.ndarray, cx: int, cy: int, half: float, value: int) -> None:
    h, w = img.shape
    k = int(math.floor(half + 0.5))
    r0, r1 = max(cy - k, 0), min(cy + k + 1, h)
    c0, c1 = max(cx - k, 0), min(cx + k + 1, w)
    if r0 < r1 and c0 < c1:
        img[r0:r1, c0:c1] = value


def gripper_intensity(aperture: float) -> int:
    a = min(max(float(aperture), 0.0), 1.0)
    return int(math.floor(60.0 + 140.0 * a + 0.5))


def render_frame(
    pose,
    script: TaskScript,
    spec: ArmSpec,
    width: int = 64,
    height: int = 64,
    objects: Sequence[ObjectState] | None = None,
) -> Frame:
    """Rasterize the scene at ``pose`` into a grayscale frame.

    ``objects`` overrides the script's initial object placement (used while an
    object is being carried). Anything outside the workspace is clipped.
    """
    if width < 16 or height < 16:
        raise DomainError("frames must be at least 16x16")
    pose = np.asarray(pose, dtype=np.float64)
    if objects is None:
        objects = initial_objects(script)
    pm = _PixelMap(spec, width, height)
    img = np.full((height, width), BACKGROUND, dtype=np.uint8)

    for o in objects:
        if o.held:
            continue
        _draw_object(img, pm, o)

    joints = forward_kinematics(pose, spec)
    px = [pm(p) for p in joints]
    link_off = _disk_offsets(LINK_RADIUS_PX)
    for (x0, y0), (x1, y1) in zip(px, px[1:]):
        _stamp(img, _bresenham(x0, y0, x1, y1), link_off, LINK_INTENSITY)
    _stamp(img, np.asarray(px[:-1]), _disk_offsets(LINK_RADIUS_PX + 1), JOINT_INTENSITY)

    # Held objects are drawn over the arm so they stay visible in the gripper.
    for o in objects:
        if o.held:
            _draw_object(img, pm, o)

    r_grip = max(pm.radius(spec.gripper_radius), 1.0)
    ring = _disk_offsets(r_grip)
    inner = _disk_offsets(max(r_grip - 1.0, 0.0))
    inner_set = {tuple(v) for v in inner.tolist()}
    ring = np.asarray([v for v in ring.tolist() if tuple(v) not in inner_set] or [[0, 0]])
    _stamp(img, np.asarray([px[-1]]), ring, gripper_intensity(pose[-1]))
    return Frame(img)


def _draw_object(img: np.ndarray, pm: _PixelMap, o: ObjectState) -> None:
    cx, cy = pm(o.position)
    r = pm.radius(o.radius)
    if o.shape == "square":
        _fill_square(img, cx, cy, r, OBJECT_INTENSITY["square"])
    else:
        _stamp(img, np.asarray([[cx, cy]]), _disk_offsets(r), OBJECT_INTENSITY["disk"])


def lerp_pose(a: np.ndarray, b: np.ndarray, step: int, n_steps: int) -> np.ndarray:
    """Pose ``step/n_steps`` of the way from ``a`` to ``b``.

    Shared by the simulator and the re-rendering interpolator so both produce
    bit-identical poses for identical endpoints.
    """
    if step == 0:
        return a.copy()
    if step == n_steps:
        return b.copy()
    return a + (step / n_steps) * (b - a)


def script_poses(script: TaskScript, spec: ArmSpec) -> np.ndarray:
    """The constant-velocity pose trajectory of a script, shape (N+1, L+1)."""
    cur = script.start_pose(spec)
    if cur.size != spec.pose_dim:
        raise ShapeError(f"start pose has {cur.size} values, arm expects {spec.pose_dim}")
    rows = [cur]
    for target, duration in script.segments:
        tgt = np.asarray(target, dtype=np.float64)
        if tgt.size != spec.pose_dim:
            raise ShapeError(f"segment target has {tgt.size} values, arm expects {spec.pose_dim}")
        if not np.all(np.isfinite(tgt)):
            raise DomainError("segment target is not finite")
        ee = forward_kinematics(tgt, spec)[-1]
        if np.linalg.norm(ee - np.asarray(spec.base)) > spec.reach + 1e-9:
            raise DomainError(f"target end effector {ee} is out of reach")
        if not 0.0 <= tgt[-1] <= 1.0:
            raise DomainError(f"gripper aperture {tgt[-1]} outside [0, 1]")
        for t in range(1, duration + 1):
            rows.append(lerp_pose(cur, tgt, t, duration))
        cur = tgt
    return np.vstack(rows)


def render_sequence(
    poses: np.ndarray,
    script: TaskScript,
    spec: ArmSpec,
    width: int = 64,
    height: int = 64,
    objects: Sequence[ObjectState] | None = None,
) -> tuple[list[Frame], tuple[ObjectState, ...]]:
    """Render consecutive poses while carrying grasp state forward.

    Returns the frames and the object state after the last pose.
    """
    state = tuple(objects) if objects is not None else initial_objects(script)
    frames = []
    for pose in poses:
        state = step_objects(state, pose, spec)
        frames.append(render_frame(pose, script, spec, width, height, state))
    return frames, state


def simulate_task(
    script: TaskScript,
    spec: ArmSpec | None = None,
    fps: float = DEFAULT_FPS,
    seed: int = 0,
    width: int = 64,
    height: int = 64,
    episode_id: str | None = None,
) -> Episode:
    """Play ``script`` and return the ground-truth episode.

    The seed only names the episode; the motion itself is fully scripted.
    """
    spec = spec or ArmSpec()
    poses = script_poses(script, spec)
    frames, _ = render_sequence(poses, script, spec, width, height)
    traj = Trajectory.from_states(poses, fps)
    eid = episode_id or f"{script.name or 'task'}-{seed:06d}"
    return Episode(
        id=eid,
        description=script.description,
        frames=tuple(frames),
        trajectory=traj,
        fps=fps,
        meta={
            "script": script.name,
            "seed": seed,
            "breakpoints": script.breakpoints(),
            "width": width,
            "height": height,
            "script_json": script.to_json(),
            "arm": {
                "link_lengths": list(spec.link_lengths),
                "base": list(spec.base),
                "gripper_radius": spec.gripper_radius,
            },
        },
    )


# ---------------------------------------------------------------------------
# Built-in task suites


def _speed_duration(a: np.ndarray, b: np.ndarray, speed: float, min_frames: int = 2) -> int:
    return max(min_frames, int(round(float(np.abs(b - a).sum()) / speed)))


def _fit_durations(durations: list[int], total: int) -> list[int]:
    """Rescale durations to sum to ``total`` keeping each >= 2 (largest remainder)."""
    from .gapnet import largest_remainder

    raw = np.asarray(durations, dtype=np.float64)
    k = len(durations)
    spare = total - 2 * k
    if spare < 0:
        raise DomainError(f"cannot fit {k} segments into {total} frames")
    extra = largest_remainder(raw / raw.sum() * spare, spare) if spare else np.zeros(k, int)
    return [int(2 + e) for e in extra]


def _random_turn_targets(
    rng: np.random.Generator, cur: np.ndarray, n_seg: int, amp: float, grip_prob: float = 0.3
) -> list[np.ndarray]:
    """Targets whose consecutive motions never continue in a straight line."""
    targets = []
    prev_dir = None
    for _ in range(n_seg):
        for _attempt in range(100):
            delta = rng.uniform(-amp, amp, size=cur.size)
            delta[-1] = 0.0
            if rng.random() < grip_prob:
                delta[-1] = (0.0 if cur[-1] > 0.5 else 1.0) - cur[-1]
            if np.abs(delta).sum() < 0.25 * amp:
                continue
            if prev_dir is not None:
                cos = float(delta @ prev_dir) / (np.linalg.norm(delta) * np.linalg.norm(prev_dir))
                if cos > 0.9:
                    continue
            break
        nxt = cur + delta
        nxt[:-1] = np.clip(nxt[:-1], -math.pi, math.pi)
        nxt[-1] = min(max(nxt[-1], 0.0), 1.0)
        prev_dir = nxt - cur
        targets.append(nxt)
        cur = nxt
    return targets


def random_script(
    rng: np.random.Generator,
    spec: ArmSpec,
    n_segments: int,
    n_intervals: int = 80,
    amplitude: float = 0.8,
    name: str = "random",
    speed: float | None = None,
    grip_prob: float = 0.3,
) -> TaskScript:
    """A random multi-segment task.

    With ``speed`` set, each segment's duration is its L1 pose displacement
    over ``speed`` (constant-velocity episodes, so the episode length varies);
    otherwise durations are random and rescaled to ``n_intervals``.
    """
    start = np.concatenate([rng.uniform(-0.6, 0.6, spec.n_links), [1.0]])
    targets = _random_turn_targets(rng, start.copy(), n_segments, amplitude, grip_prob)
    if speed is not None:
        durs, cur = [], start
        for t in targets:
            durs.append(_speed_duration(cur, t, speed))
            cur = t
    else:
        durs = _fit_durations(list(rng.uniform(1.0, 3.0, n_segments)), n_intervals)
    obj_pos = forward_kinematics(targets[0], spec)[-1]
    objects = (SceneObject("disk", (float(obj_pos[0]), float(obj_pos[1])), 0.15),)
    return TaskScript(
        description=f"{name}: follow {n_segments} waypoints",
        segments=tuple((tuple(t), d) for t, d in zip(targets, durs)),
        objects=objects,
        start=tuple(start),
        name=name,
    )


def pick_place_script(rng: np.random.Generator, spec: ArmSpec, n_intervals: int = 80) -> TaskScript:
    """Reach an object, grasp it, carry it sideways and release it."""
    start = np.concatenate([rng.uniform(-0.4, 0.4, spec.n_links), [1.0]])
    reach = start.copy()
    reach[:-1] += rng.uniform(-0.9, 0.9, spec.n_links)
    grasp = reach.copy()
    grasp[-1] = 0.0
    carry = grasp.copy()
    carry[0] += rng.choice([-1.0, 1.0]) * rng.uniform(0.6, 1.1)
    carry[1:-1] += rng.uniform(-0.4, 0.4, spec.n_links - 1)
    release = carry.copy()
    release[-1] = 1.0
    retreat = release.copy()
    retreat[:-1] += rng.uniform(-0.5, 0.5, spec.n_links)
    targets = [reach, grasp, carry, release, retreat]
    durs = _fit_durations(list(rng.uniform(1.0, 3.0, len(targets))), n_intervals)
    obj = forward_kinematics(reach, spec)[-1]
    direction = "left" if carry[0] > grasp[0] else "right"
    return TaskScript(
        description=f"pick up the disk and move it {direction}",
        segments=tuple((tuple(t), d) for t, d in zip(targets, durs)),
        objects=(SceneObject("disk", (float(obj[0]), float(obj[1])), 0.15),),
        start=tuple(start),
        name="pick-place",
    )


def line_script(rng: np.random.Generator, spec: ArmSpec, n_intervals: int = 80) -> TaskScript:
    start = np.concatenate([rng.uniform(-0.5, 0.5, spec.n_links), [1.0]])
    target = start.copy()
    target[:-1] += rng.uniform(-1.0, 1.0, spec.n_links)
    return TaskScript(
        description="sweep the arm in one motion",
        segments=((tuple(target), n_intervals),),
        start=tuple(start),
        name="line",
    )


SUITES = ("pick-place", "segments", "mixed", "line", "constant-velocity")


def suite_script(
    suite: str, index: int, seed: int, spec: ArmSpec | None = None, n_intervals: int = 80
) -> TaskScript:
    """The ``index``-th script of a built-in suite, deterministic in ``seed``.

    * ``pick-place``: reach, grasp, carry, release, retreat.
    * ``segments``: 3-6 random linear segments.
    * ``mixed``: 1-30 segments with varying amplitude (mixed difficulty).
    * ``line``: a single linear sweep.
    * ``constant-velocity``: 8-14 short arm moves whose durations follow pose
      distance, gripper held open.
    """
    spec = spec or ArmSpec()
    rng = np.random.default_rng([seed, index, sum(map(ord, suite))])
    if suite == "pick-place":
        return replace(pick_place_script(rng, spec, n_intervals), name=f"pick-place-{index}")
    if suite == "segments":
        k = int(rng.integers(3, 7))
        return random_script(rng, spec, k, n_intervals, 0.9, name=f"segments-{index}")
    if suite == "mixed":
        k = int(rng.integers(1, 31))
        amp = float(rng.uniform(0.3, 1.2))
        return random_script(rng, spec, k, n_intervals, amp, name=f"mixed-{index}")
    if suite == "line":
        return replace(line_script(rng, spec, n_intervals), name=f"line-{index}")
    if suite == "constant-velocity":
        k = int(rng.integers(8, 15))
        return random_script(rng, spec, k, n_intervals, 0.35, name=f"cv-{index}", speed=0.06, grip_prob=0.0)
    raise DomainError(f"unknown suite {suite!r}; choose from {', '.join(SUITES)}")
