import pytest

from keyframe_pipeline.bench import benchmark_pipeline
from keyframe_pipeline.core import ConfigError, DomainError
from keyframe_pipeline.generator import KeyFrameGenerator
from keyframe_pipeline.metrics import cost_model
from keyframe_pipeline.pipeline import PipelineConfig


def test_measured_keygen_tracks_cost_model(three_seg_episode):
    cfg = PipelineConfig(selection="uniform", generator=KeyFrameGenerator(simulated_cost_per_frame=0.01))
    res = benchmark_pipeline(cfg, [three_seg_episode], repeats=3, warmup=1)
    predicted = cost_model(80, 17, 0.01)
    assert res.aggregate.keyframe_gen_seconds == pytest.approx(predicted.keyframe_gen_seconds, rel=0.1)
    assert res.repeats == 3 and len(res.episodes) == 1


def test_measured_baseline(three_seg_episode):
    cfg = PipelineConfig(selection="uniform", generator=KeyFrameGenerator(simulated_cost_per_frame=0.002))
    res = benchmark_pipeline(cfg, [three_seg_episode], repeats=1, warmup=0, baseline="measured")
    assert res.aggregate.baseline_seconds >= 81 * 0.002


def test_bad_arguments(three_seg_episode):
    with pytest.raises(ConfigError):
        benchmark_pipeline(PipelineConfig(), [three_seg_episode], repeats=0)
    with pytest.raises(ConfigError):
        benchmark_pipeline(PipelineConfig(), [three_seg_episode], baseline="guess")
    with pytest.raises(DomainError):
        benchmark_pipeline(PipelineConfig(), [])
