"""End-to-end keyframe pipeline: select keys, generate them, estimate gaps, interpolate.

Also runs controlled comparisons between motion-aware keys, uniform keys at the
same count, and the frame-to-frame degenerate case (density 1.0).
"""

from __future__ import annotations

import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .core import ConfigError, Episode, Frame, KeyFrameSet, density_to_count, slice_keyframes
from .gapnet import GapEstimator, default_g_max, normalize_gaps, predict_gap
from .generator import KeyFrameGenerator, generate_keyframes
from .interp import Interpolator, reconstruct_video
from .metrics import (
    CostReport,
    QualityRow,
    aggregate_costs,
    mean_finite_or_inf,
    psnr,
    quality_index,
    ssim,
    trajectory_complexity,
)
from .simplify import SimplifyParams, select_keyframes_by_count
from .synthworld import ArmSpec, TaskScript

log = logging.getLogger(__name__)

SELECTIONS = ("motion_aware", "uniform")
GAP_SOURCES = ("predicted", "ground_truth")
STAGES = ("select", "generate", "gap", "interpolate", "evaluate")


class StageError(RuntimeError):
    """A pipeline stage failed for one episode."""

    def __init__(self, stage: str, episode_id: str, cause: BaseException):
        super().__init__(f"[{episode_id}] stage {stage!r} failed: {cause}")
        self.stage = stage
        self.episode_id = episode_id
        self.cause = cause


@dataclass(frozen=True)
class PipelineConfig:
    name: str = "keyframe-20"
    keyframe_density: float | None = 0.2
    target_count: int | None = None
    selection: str = "motion_aware"
    generator: KeyFrameGenerator = field(default_factory=KeyFrameGenerator)
    gap_source: str = "ground_truth"
    interpolator: str = "pixel_linear"
    seed: int = 0
    standardize: bool = True
    gap_model: str | None = None

    def __post_init__(self) -> None:
        if self.selection not in SELECTIONS:
            raise ConfigError(f"selection must be one of {SELECTIONS}, got {self.selection!r}")
        if self.gap_source not in GAP_SOURCES:
            raise ConfigError(f"gap_source must be one of {GAP_SOURCES}, got {self.gap_source!r}")
        if self.interpolator not in ("pixel_linear", "pose_rerender"):
            raise ConfigError(f"unknown interpolator {self.interpolator!r}")
        if self.target_count is None and self.keyframe_density is None:
            raise ConfigError("set keyframe_density or target_count")
        if self.target_count is not None and self.target_count < 2:
            raise ConfigError("target_count must be >= 2")
        if self.keyframe_density is not None and not 0 < self.keyframe_density <= 1:
            raise ConfigError("keyframe_density must lie in (0, 1]")

    def key_count(self, n_frames: int) -> int:
        if self.target_count is not None:
            return min(self.target_count, n_frames)
        count = density_to_count(self.keyframe_density, n_frames)
        if self.keyframe_density * n_frames < 2 and self.keyframe_density < 1:
            raise ConfigError(
                f"density {self.keyframe_density} gives fewer than 2 keys for {n_frames} frames"
            )
        return count

    @property
    def pairing_key(self) -> tuple:
        return (self.keyframe_density, self.target_count)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "keyframe_density": self.keyframe_density,
            "target_count": self.target_count,
            "selection": self.selection,
            "generator": self.generator.to_json(),
            "gap_source": self.gap_source,
            "interpolator": self.interpolator,
            "seed": self.seed,
            "standardize": self.standardize,
            "gap_model": self.gap_model,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PipelineConfig":
        known = {
            "name", "keyframe_density", "target_count", "selection", "generator",
            "gap_source", "interpolator", "seed", "standardize", "gap_model",
        }
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(obj)
        if "generator" in kw:
            kw["generator"] = KeyFrameGenerator.from_json(kw["generator"] or {})
        return cls(**kw)


def uniform_indices(n_frames: int, count: int) -> tuple[int, ...]:
    """``count`` evenly spaced indices over ``0..n_frames-1``, rounded half up."""
    last = n_frames - 1
    if count < 2 or count > n_frames:
        raise ConfigError(f"cannot place {count} uniform keys in {n_frames} frames")
    return tuple(int(math.floor(i * last / (count - 1) + 0.5)) for i in range(count))


def select_indices(
    config: PipelineConfig, episode: Episode, count: int | None = None
) -> tuple[KeyFrameSet, bool]:
    """Key indices for ``episode`` and whether the requested count was hit exactly."""
    n = len(episode)
    target = count if count is not None else config.key_count(n)
    if config.selection == "uniform":
        return KeyFrameSet(uniform_indices(n, target), 0.0, n), True
    params = SimplifyParams(standardize=config.standardize)
    sel = select_keyframes_by_count(episode.trajectory, target, params)
    return sel.keys, sel.achieved


def episode_interpolator(kind: str, episode: Episode) -> Interpolator:
    if kind == "pixel_linear":
        return Interpolator("pixel_linear")
    meta = episode.meta or {}
    if "script_json" not in meta or "arm" not in meta:
        raise ConfigError(f"episode {episode.id} carries no scene description for pose_rerender")
    return Interpolator(
        "pose_rerender",
        spec=ArmSpec(**meta["arm"]),
        script=TaskScript.from_json(meta["script_json"]),
    )


@dataclass
class EpisodeResult:
    episode_id: str
    config_name: str
    frames: list[Frame]
    keys: KeyFrameSet
    gaps: np.ndarray
    cost: CostReport
    achieved: bool
    poses: np.ndarray | None = None
    keyframe_positions: list[int] = field(default_factory=list)
    gap_uniform_fallback: bool = False


def _predicted_gaps(model: GapEstimator, keyframes, kposes, last_index: int) -> tuple[np.ndarray, bool]:
    raw = [
        predict_gap(model, keyframes[i], keyframes[i + 1], kposes[i], kposes[i + 1])
        for i in range(len(keyframes) - 1)
    ]
    g_max = default_g_max(last_index + 1, len(keyframes))
    return normalize_gaps(raw, last_index, g_max, with_flag=True)


def run_episode(
    config: PipelineConfig,
    episode: Episode,
    gap_model: GapEstimator | None = None,
    count: int | None = None,
) -> EpisodeResult:
    """Reconstruct ``episode`` through the keyframe pipeline.

    Stage wall-clock times use a monotonic timer. The baseline entry of the
    cost report extrapolates the measured per-keyframe generation time to
    every frame.
    """
    stage = "select"
    try:
        keys, achieved = select_indices(config, episode, count)
        stage = "generate"
        t0 = time.perf_counter()
        keyframes = generate_keyframes(config.generator, episode, keys)
        t_gen = time.perf_counter() - t0
        kposes = [pose for _, _, pose in slice_keyframes(episode, keys)]

        stage = "gap"
        t0 = time.perf_counter()
        fallback = False
        if len(keys) == len(episode):
            gaps = np.zeros(len(keys) - 1, dtype=np.int64)
        elif config.selection == "uniform" or config.gap_source == "ground_truth":
            gaps = keys.true_gaps()
        else:
            if gap_model is None:
                raise ConfigError("gap_source 'predicted' needs a trained gap model")
            gaps, fallback = _predicted_gaps(gap_model, keyframes, kposes, episode.last_index)
        # Uniform spacing fixes the gaps, so that arm has no gap stage to time.
        t_gap = 0.0 if config.selection == "uniform" else time.perf_counter() - t0

        stage = "interpolate"
        t0 = time.perf_counter()
        interp = episode_interpolator(config.interpolator, episode)
        rec = reconstruct_video(keyframes, gaps, interp, kposes)
        t_interp = time.perf_counter() - t0
    except StageError:
        raise
    except Exception as exc:  # noqa: BLE001 - attributed and re-raised
        raise StageError(stage, episode.id, exc) from exc

    baseline = t_gen * len(episode) / len(keys) if len(keys) else 0.0
    cost = CostReport.from_stages(t_gen, t_gap, t_interp, baseline)
    return EpisodeResult(
        episode_id=episode.id,
        config_name=config.name,
        frames=rec.frames,
        keys=keys,
        gaps=np.asarray(gaps),
        cost=cost,
        achieved=achieved,
        poses=rec.poses,
        keyframe_positions=rec.keyframe_positions,
        gap_uniform_fallback=fallback,
    )


def pose_error(result: EpisodeResult, episode: Episode) -> float:
    """Mean absolute pose difference between reconstruction and ground truth."""
    if result.poses is None:
        return math.nan
    return float(np.mean(np.abs(result.poses - episode.trajectory.states)))


@dataclass
class EpisodeRow:
    dataset: str
    model: str
    episode: str
    psnr_db: float
    ssim: float
    complexity: float
    pose_error: float
    n_keys: int
    achieved: bool
    cost: CostReport

    def to_json(self) -> dict:
        return {
            "dataset": self.dataset,
            "model": self.model,
            "episode": self.episode,
            "psnr_db": self.psnr_db,
            "ssim": self.ssim,
            "complexity": self.complexity,
            "pose_error": self.pose_error,
            "n_keys": self.n_keys,
            "achieved": self.achieved,
            **self.cost.to_json(),
        }


@dataclass
class AggregateRow:
    dataset: str
    model: str
    psnr_db: float
    ssim: float
    complexity: float
    quality_index: float
    pose_error: float
    mean_keys: float
    cost: CostReport

    def to_json(self) -> dict:
        return {
            "dataset": self.dataset,
            "model": self.model,
            "psnr_db": self.psnr_db,
            "ssim": self.ssim,
            "complexity": self.complexity,
            "quality_index": self.quality_index,
            "pose_error": self.pose_error,
            "mean_keys": self.mean_keys,
            **self.cost.to_json(),
        }


@dataclass
class ComparisonReport:
    dataset: str
    configs: list[PipelineConfig]
    episodes: list[EpisodeRow]
    aggregate: list[AggregateRow]
    failures: list[dict] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)
    videos: dict[tuple[str, str], list[Frame]] = field(default_factory=dict, repr=False)

    def to_json(self) -> dict:
        return {
            "dataset": self.dataset,
            "configs": [c.to_json() for c in self.configs],
            "aggregate": [r.to_json() for r in self.aggregate],
            "episodes": [r.to_json() for r in self.episodes],
            "failures": self.failures,
            "flags": self.flags,
        }


def _evaluate(result: EpisodeResult, episode: Episode, dataset: str) -> EpisodeRow:
    truth = list(episode.frames)
    return EpisodeRow(
        dataset=dataset,
        model=result.config_name,
        episode=episode.id,
        psnr_db=psnr(result.frames, truth),
        ssim=ssim(result.frames, truth),
        complexity=trajectory_complexity(episode.trajectory),
        pose_error=pose_error(result, episode),
        n_keys=len(result.keys),
        achieved=result.achieved,
        cost=result.cost,
    )


def _order_configs(configs: Sequence[PipelineConfig]) -> list[PipelineConfig]:
    # Motion-aware arms run first so uniform arms can adopt their achieved counts.
    return sorted(configs, key=lambda c: c.selection != "motion_aware")


def _compare_episode(args) -> tuple[list[EpisodeRow], list[dict], dict]:
    configs, episode, dataset, gap_model, keep_videos = args
    rows, failures, videos = [], [], {}
    achieved_counts: dict[tuple, int] = {}
    for cfg in _order_configs(configs):
        count = None
        if cfg.selection == "uniform" and cfg.pairing_key in achieved_counts:
            count = achieved_counts[cfg.pairing_key]
        try:
            res = run_episode(cfg, episode, gap_model, count)
            row = _evaluate(res, episode, dataset)
        except StageError as exc:
            failures.append({"episode": exc.episode_id, "model": cfg.name, "stage": exc.stage, "error": str(exc.cause)})
            log.error("%s", exc)
            continue
        except Exception as exc:  # noqa: BLE001
            failures.append({"episode": episode.id, "model": cfg.name, "stage": "evaluate", "error": str(exc)})
            log.error("[%s] evaluation failed for %s: %s", episode.id, cfg.name, exc)
            continue
        if cfg.selection == "motion_aware":
            achieved_counts.setdefault(cfg.pairing_key, len(res.keys))
        rows.append(row)
        if keep_videos:
            videos[(cfg.name, episode.id)] = res.frames
    return rows, failures, videos


def default_jobs() -> int:
    env = os.environ.get("KEYFRAME_PIPELINE_JOBS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"KEYFRAME_PIPELINE_JOBS must be an integer, got {env!r}")
    return os.cpu_count() or 1


def aggregate_rows(rows: Sequence[EpisodeRow], configs: Sequence[PipelineConfig], dataset: str) -> tuple[list[AggregateRow], list[str]]:
    flags = []
    by_model: dict[str, list[EpisodeRow]] = {}
    for r in rows:
        by_model.setdefault(r.model, []).append(r)
    names = [c.name for c in configs if c.name in by_model]
    qrows = []
    for name in names:
        rs = by_model[name]
        qrows.append(
            QualityRow(
                name,
                dataset,
                mean_finite_or_inf([r.psnr_db for r in rs]),
                float(np.mean([r.ssim for r in rs])),
            )
        )
    if len(qrows) >= 2:
        qi = quality_index(qrows)
    else:
        qi = {q.model_name: math.nan for q in qrows}
        flags.append("single model: quality index not computed")
    out = []
    for q in qrows:
        rs = by_model[q.model_name]
        pe = [r.pose_error for r in rs if not math.isnan(r.pose_error)]
        out.append(
            AggregateRow(
                dataset=dataset,
                model=q.model_name,
                psnr_db=q.psnr,
                ssim=q.ssim,
                complexity=float(np.mean([r.complexity for r in rs])),
                quality_index=qi[q.model_name],
                pose_error=float(np.mean(pe)) if pe else math.nan,
                mean_keys=float(np.mean([r.n_keys for r in rs])),
                cost=aggregate_costs([r.cost for r in rs]),
            )
        )
    return out, flags


def compare(
    configs: Sequence[PipelineConfig],
    episodes: Sequence[Episode],
    dataset: str = "dataset",
    gap_model: GapEstimator | None = None,
    jobs: int = 1,
    keep_videos: bool = False,
) -> ComparisonReport:
    """Run every config over every episode and aggregate quality and cost.

    Uniform arms reuse the achieved key count of the motion-aware arm with the
    same density so the only difference between them is key placement.
    """
    configs = list(configs)
    names = [c.name for c in configs]
    if len(set(names)) != len(names):
        raise ConfigError("config names must be unique")
    work = [(configs, ep, dataset, gap_model, keep_videos) for ep in episodes]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_compare_episode, work))
    else:
        results = [_compare_episode(w) for w in work]

    order = {n: i for i, n in enumerate(names)}
    rows, failures, videos = [], [], {}
    for r, f, v in results:
        rows.extend(sorted(r, key=lambda row: order[row.model]))
        failures.extend(f)
        videos.update(v)
    aggregate, flags = aggregate_rows(rows, configs, dataset)
    if len(configs) < 2:
        flags.append("single config: comparison degenerates to per-episode metrics")
    return ComparisonReport(dataset, configs, rows, aggregate, failures, flags, videos)


def frame_to_frame(config: PipelineConfig, name: str = "frame-to-frame") -> PipelineConfig:
    """The degenerate config that treats every frame as a keyframe."""
    return replace(config, name=name, keyframe_density=1.0, target_count=None, selection="uniform")
