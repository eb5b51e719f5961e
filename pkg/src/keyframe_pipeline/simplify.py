"""Motion-aware keyframe extraction by relative-threshold Ramer-Douglas-Peucker.

A span ``[lo, hi]`` is split at its most deviating interior state when that
state's distance to the closed chord, divided by the chord length, reaches
``epsilon``. Bisection on ``epsilon`` then targets a keyframe count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import DomainError, KeyFrameSet, ShapeError, Trajectory

# Chords shorter than this fall back to the bounding-box-diagonal measure.
CHORD_EPS = 1e-9
# Relative deviations at or below this count as collinear and never split.
ZERO_DEVIATION = 1e-12
# distances this close (relative) count as tied; rounding alone separates exact geometric ties
TIE_RTOL = 1e-12
STD_FLOOR = 1e-12


@dataclass(frozen=True)
class SimplifyParams:
    epsilon: float = 0.0
    standardize: bool = False
    max_bisect_iters: int = 64

    def __post_init__(self) -> None:
        if not self.epsilon >= 0:
            raise DomainError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.max_bisect_iters < 1:
            raise DomainError("max_bisect_iters must be >= 1")


class CountSelection(NamedTuple):
    keys: KeyFrameSet
    epsilon: float
    achieved: bool


def point_segment_distance(p, a, b) -> float:
    """Euclidean distance from ``p`` to the closed segment ``[a, b]``."""
    p, a, b = (np.asarray(v, dtype=np.float64).reshape(-1) for v in (p, a, b))
    if not (p.shape == a.shape == b.shape):
        raise ShapeError(f"dimension mismatch: {p.shape}, {a.shape}, {b.shape}")
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise DomainError("non-finite coordinates")
    return float(_segment_distances(p[None, :], a, b)[0])


def _segment_distances(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    denom = float(ab @ ab)
    ap = points - a
    if denom == 0.0:
        return np.sqrt(np.einsum("ij,ij->i", ap, ap))
    t = np.clip(ap @ ab / denom, 0.0, 1.0)
    diff = ap - t[:, None] * ab
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def _bbox_diagonal(states: np.ndarray) -> float:
    return float(np.linalg.norm(states.max(axis=0) - states.min(axis=0)))


def _max_deviation(states: np.ndarray, lo: int, hi: int, diag: float) -> tuple[int, float]:
    a, b = states[lo], states[hi]
    interior = states[lo + 1:hi]
    d = _segment_distances(interior, a, b)
    # smallest index among (near-)maximal distances
    k = int(np.argmax(d >= d.max() * (1.0 - TIE_RTOL)))
    chord = float(np.linalg.norm(b - a))
    if chord > CHORD_EPS:
        r = float(d[k]) / chord
    else:
        r = float(d[k]) / diag if diag > 0 else 0.0
    return lo + 1 + k, r


def max_deviation(traj: Trajectory, lo: int, hi: int) -> tuple[int, float]:
    """Most deviating interior index of ``[lo, hi]`` and its relative deviation.

    For (near-)coincident endpoints the deviation is measured against the
    trajectory's bounding-box diagonal instead of the vanishing chord.
    """
    if hi <= lo + 1:
        raise DomainError(f"span [{lo}, {hi}] has no interior point")
    if lo < 0 or hi >= len(traj):
        raise DomainError(f"span [{lo}, {hi}] outside trajectory of length {len(traj)}")
    return _max_deviation(traj.states, lo, hi, _bbox_diagonal(traj.states))


def standardize_trajectory(traj: Trajectory) -> Trajectory:
    """Per-dimension z-score (population std); flat dimensions become zeros."""
    x = traj.states
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    safe = np.where(sd < STD_FLOOR, 1.0, sd)
    z = (x - mu) / safe
    z[:, sd < STD_FLOOR] = 0.0
    return Trajectory(z, traj.timestamps)


def _rdp_indices(states: np.ndarray, epsilon: float) -> list[int]:
    n = states.shape[0]
    diag = _bbox_diagonal(states)
    keep = [0, n - 1]
    work = [(0, n - 1)]
    while work:
        lo, hi = work.pop()
        if hi - lo < 2:
            continue
        i, r = _max_deviation(states, lo, hi, diag)
        if r >= epsilon and r > ZERO_DEVIATION:
            keep.append(i)
            work.append((lo, i))
            work.append((i, hi))
    return sorted(set(keep))


def rdp_simplify(traj: Trajectory, params: SimplifyParams) -> KeyFrameSet:
    if len(traj) < 2:
        raise DomainError("trajectory needs at least two states")
    states = standardize_trajectory(traj).states if params.standardize else traj.states
    idx = _rdp_indices(states, params.epsilon)
    return KeyFrameSet(tuple(idx), params.epsilon, len(traj))


def select_keyframes_by_count(
    traj: Trajectory, target: int, params: SimplifyParams | None = None
) -> CountSelection:
    """Bisect ``epsilon`` so the keyframe count lands as close to ``target`` as possible.

    Ties between an undershoot and an overshoot go to the overshoot. When no
    threshold yields exactly ``target`` keys the nearest achievable set is
    returned with ``achieved=False``.
    """
    params = params or SimplifyParams()
    n = len(traj)
    if target < 2:
        raise DomainError(f"target must be >= 2, got {target}")
    if target > n:
        raise DomainError(f"target {target} exceeds trajectory length {n}")
    states = standardize_trajectory(traj).states if params.standardize else traj.states

    def run(eps: float) -> list[int]:
        return _rdp_indices(states, eps)

    lo_eps = 0.0
    lo_set = run(lo_eps)
    if len(lo_set) <= target:
        return _result(lo_set, lo_eps, n, target)

    if n > 2:
        _, root_r = _max_deviation(states, 0, n - 1, _bbox_diagonal(states))
    else:
        root_r = 0.0
    hi_eps = math.nextafter(root_r, math.inf)
    hi_set = run(hi_eps)
    if len(hi_set) >= target:
        return _result(hi_set, hi_eps, n, target)

    for _ in range(params.max_bisect_iters):
        mid = 0.5 * (lo_eps + hi_eps)
        if mid <= lo_eps or mid >= hi_eps:
            break
        mid_set = run(mid)
        if len(mid_set) == target:
            return _result(mid_set, mid, n, target)
        if len(mid_set) > target:
            lo_eps, lo_set = mid, mid_set
        else:
            hi_eps, hi_set = mid, mid_set

    over = len(lo_set) - target
    under = target - len(hi_set)
    if over <= under:
        return _result(lo_set, lo_eps, n, target)
    return _result(hi_set, hi_eps, n, target)


def _result(indices: list[int], eps: float, n: int, target: int) -> CountSelection:
    return CountSelection(KeyFrameSet(tuple(indices), eps, n), eps, len(indices) == target)
