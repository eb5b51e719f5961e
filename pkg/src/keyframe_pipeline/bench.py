"""Wall-clock benchmarking of pipeline stages, run serially."""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass
from typing import Sequence

from .core import ConfigError, DomainError, Episode
from .gapnet import GapEstimator
from .metrics import CostReport, aggregate_costs
from .pipeline import PipelineConfig, frame_to_frame, run_episode

BASELINES = ("extrapolated", "measured")


@dataclass(frozen=True)
class BenchResult:
    config_name: str
    episodes: list[tuple[str, CostReport]]
    aggregate: CostReport
    repeats: int
    warmup: int
    baseline: str

    def to_json(self) -> dict:
        return {
            "model": self.config_name,
            "repeats": self.repeats,
            "warmup": self.warmup,
            "baseline": self.baseline,
            "aggregate": self.aggregate.to_json(),
            "episodes": [{"episode": eid, **c.to_json()} for eid, c in self.episodes],
        }


def _median_report(reports: Sequence[CostReport], baseline: float | None = None) -> CostReport:
    med = lambda xs: statistics.median(xs)  # noqa: E731
    return CostReport.from_stages(
        med([r.keyframe_gen_seconds for r in reports]),
        med([r.gap_estimation_seconds for r in reports]),
        med([r.interpolation_seconds for r in reports]),
        med([r.baseline_seconds for r in reports]) if baseline is None else baseline,
    )


def _measure_baseline(config: PipelineConfig, episode: Episode, repeats: int, warmup: int) -> float:
    f2f = frame_to_frame(config)
    times = []
    for i in range(warmup + repeats):
        t0 = time.perf_counter()
        run_episode(f2f, episode)
        if i >= warmup:
            times.append(time.perf_counter() - t0)
    return statistics.median(times)


def benchmark_pipeline(
    config: PipelineConfig,
    episodes: Sequence[Episode],
    gap_model: GapEstimator | None = None,
    repeats: int = 3,
    warmup: int = 1,
    baseline: str = "extrapolated",
) -> BenchResult:
    """Median-of-``repeats`` stage timings per episode after ``warmup`` discarded runs.

    ``baseline="measured"`` times the frame-to-frame pipeline on the same
    episode instead of extrapolating the keyframe stage to every frame.
    """
    if repeats < 1 or warmup < 0:
        raise ConfigError("repeats must be >= 1 and warmup >= 0")
    if baseline not in BASELINES:
        raise ConfigError(f"baseline must be one of {BASELINES}")
    if not episodes:
        raise DomainError("nothing to benchmark")
    per_episode = []
    for ep in episodes:
        runs = []
        for i in range(warmup + repeats):
            res = run_episode(config, ep, gap_model)
            if i >= warmup:
                runs.append(res.cost)
        base = _measure_baseline(config, ep, repeats, warmup) if baseline == "measured" else None
        per_episode.append((ep.id, _median_report(runs, base)))
    return BenchResult(
        config.name,
        per_episode,
        aggregate_costs([c for _, c in per_episode]),
        repeats,
        warmup,
        baseline,
    )
