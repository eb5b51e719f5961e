import math

import numpy as np
import pytest

from conftest import three_segment_script
from keyframe_pipeline.core import ConfigError
from keyframe_pipeline.gapnet import FrameEncoder, GapSample, train_gap_estimator
from keyframe_pipeline.generator import KeyFrameGenerator
from keyframe_pipeline.pipeline import (
    PipelineConfig,
    StageError,
    compare,
    frame_to_frame,
    run_episode,
    select_indices,
    uniform_indices,
)
from keyframe_pipeline.synthworld import simulate_task


def test_uniform_indices():
    assert uniform_indices(81, 5) == (0, 20, 40, 60, 80)
    idx = uniform_indices(81, 17)
    assert len(idx) == 17 and idx[0] == 0 and idx[-1] == 80
    steps = np.diff(idx)
    assert steps.max() - steps.min() <= 1
    with pytest.raises(ConfigError):
        uniform_indices(5, 6)


def test_motion_aware_hits_breakpoints(three_seg_episode):
    keys, achieved = select_indices(PipelineConfig(target_count=4), three_seg_episode)
    assert list(keys.indices) == [0, 20, 50, 80] and achieved


def test_config_validation_and_json():
    with pytest.raises(ConfigError):
        PipelineConfig(selection="random")
    with pytest.raises(ConfigError):
        PipelineConfig(keyframe_density=0.0)
    with pytest.raises(ConfigError):
        PipelineConfig.from_json({"bogus": 1})
    cfg = PipelineConfig(name="x", generator=KeyFrameGenerator("noisy_oracle", 5.0))
    assert PipelineConfig.from_json(cfg.to_json()) == cfg
    with pytest.raises(ConfigError):
        PipelineConfig(keyframe_density=0.01).key_count(81)


def test_exact_reconstruction(three_seg_episode):
    cfg = PipelineConfig(target_count=4, interpolator="pose_rerender")
    res = run_episode(cfg, three_seg_episode)
    assert res.frames == list(three_seg_episode.frames)
    assert res.gaps.tolist() == [19, 29, 29]


def test_frame_to_frame_is_identity(three_seg_episode):
    res = run_episode(frame_to_frame(PipelineConfig()), three_seg_episode)
    assert len(res.keys) == 81 and res.frames == list(three_seg_episode.frames)
    assert res.gaps.sum() == 0


def test_predicted_gaps_keep_length(three_seg_episode):
    rng = np.random.default_rng(0)
    samples = [GapSample(float(rng.integers(0, 30)), pose_a=rng.normal(size=4), pose_b=rng.normal(size=4)) for _ in range(40)]
    model = train_gap_estimator(samples, FrameEncoder("pose_passthrough"))
    cfg = PipelineConfig(target_count=4, gap_source="predicted")
    res = run_episode(cfg, three_seg_episode, model)
    assert len(res.frames) == len(three_seg_episode)
    assert [res.frames[p] for p in res.keyframe_positions] == [three_seg_episode.frames[i] for i in res.keys.indices]


def test_predicted_without_model_is_stage_error(three_seg_episode):
    with pytest.raises(StageError) as exc:
        run_episode(PipelineConfig(target_count=4, gap_source="predicted"), three_seg_episode)
    assert exc.value.stage == "gap" and exc.value.episode_id == "three-seg"


def test_compare_table_analog():
    episodes = [
        simulate_task(three_segment_script(d), episode_id=f"e{i}")
        for i, d in enumerate([(20, 30, 30), (10, 50, 20), (35, 15, 30)])
    ]
    ma = PipelineConfig(name="ma", interpolator="pose_rerender", target_count=4)
    un = PipelineConfig(name="un", selection="uniform", interpolator="pose_rerender", target_count=4)
    rep = compare([ma, un], episodes)
    agg = {r.model: r for r in rep.aggregate}
    assert agg["ma"].pose_error == 0.0
    assert agg["un"].pose_error > 0.0
    by_ep = {}
    for row in rep.episodes:
        by_ep.setdefault(row.episode, {})[row.model] = row.n_keys
    assert all(v["ma"] == v["un"] for v in by_ep.values())


def test_compare_parallel_matches_serial(suite_episodes):
    cfgs = [PipelineConfig(name="ma"), PipelineConfig(name="un", selection="uniform")]
    serial = compare(cfgs, suite_episodes, keep_videos=True)
    par = compare(cfgs, suite_episodes, jobs=2, keep_videos=True)
    strip = lambda rep: [(r.model, r.episode, r.psnr_db, r.ssim, r.n_keys) for r in rep.episodes]  # noqa: E731
    assert strip(serial) == strip(par)
    assert serial.videos == par.videos


def test_single_config_flagged(suite_episodes):
    rep = compare([PipelineConfig()], suite_episodes[:1])
    assert rep.flags and math.isnan(rep.aggregate[0].quality_index)


def test_density_sweep_cost_increases(suite_episodes):
    gen = KeyFrameGenerator(simulated_cost_per_frame=0.002)
    cfgs = [PipelineConfig(name=f"u{d}", selection="uniform", keyframe_density=d, generator=gen) for d in (0.1, 0.2, 0.4)]
    rep = compare(cfgs, suite_episodes[:2])
    keygen = [r.cost.keyframe_gen_seconds for r in rep.aggregate]
    assert keygen[0] < keygen[1] < keygen[2]
