import numpy as np
import pytest

from keyframe_pipeline.core import (
    DomainError,
    Episode,
    Frame,
    KeyFrameSet,
    KeyRangeError,
    ShapeError,
    Trajectory,
    as_pose,
    density_to_count,
    slice_keyframes,
    validate_episode,
)


def _episode(n_frames=81, n_states=81, description="pick up the block"):
    frames = tuple(Frame(np.full((8, 8), i % 256, dtype=np.uint8)) for i in range(n_frames))
    traj = Trajectory.from_states(np.linspace(0, 1, n_states)[:, None] * np.ones((1, 3)))
    return Episode("ep", description, frames, traj)


def test_well_formed_episode_has_no_violations():
    assert validate_episode(_episode()) == []


def test_length_mismatch_reported_once():
    v = validate_episode(_episode(n_states=80))
    assert len(v) == 1 and v[0].startswith("length mismatch")


def test_empty_description():
    assert validate_episode(_episode(description="  ")) == ["description empty"]


def test_mixed_frame_shapes_flagged():
    ep = _episode(n_frames=3, n_states=3)
    frames = ep.frames[:2] + (Frame(np.zeros((4, 4), dtype=np.uint8)),)
    bad = Episode("ep", "x", frames, ep.trajectory)
    assert any(v.startswith("frames:") for v in validate_episode(bad))


def test_slice_endpoints_and_identity():
    ep = _episode()
    items = slice_keyframes(ep, KeyFrameSet((0, 80), 0.0, 81))
    assert [i for i, _, _ in items] == [0, 80]
    assert items[1][1] == ep.frames[80]
    np.testing.assert_array_equal(items[0][2], ep.trajectory.states[0])
    full = slice_keyframes(ep, KeyFrameSet(tuple(range(81)), 0.0, 81))
    assert [f for _, f, _ in full] == list(ep.frames)


def test_slice_seventeen_keys():
    ep = _episode()
    keys = KeyFrameSet(tuple(range(0, 81, 5)), 0.1, 81)
    assert len(slice_keyframes(ep, keys)) == 17


def test_slice_rejects_wrong_length():
    with pytest.raises(KeyRangeError):
        slice_keyframes(_episode(), KeyFrameSet((0, 9), 0.0, 10))


@pytest.mark.parametrize(
    "indices,length",
    [((0,), 5), ((1, 4), 5), ((0, 3), 5), ((0, 2, 2, 4), 5)],
)
def test_keyframe_set_invariants(indices, length):
    with pytest.raises(DomainError):
        KeyFrameSet(indices, 0.0, length)


def test_true_gaps():
    assert KeyFrameSet((0, 3, 7), 0.0, 8).true_gaps().tolist() == [2, 3]


def test_density_to_count():
    assert density_to_count(0.2, 81) == 17
    assert density_to_count(0.1, 81) == 9
    assert density_to_count(0.4, 81) == 33
    assert density_to_count(1.0, 81) == 81
    assert density_to_count(0.01, 81) == 2
    with pytest.raises(DomainError):
        density_to_count(0.0, 81)


def test_frame_validation():
    with pytest.raises(ShapeError):
        Frame(np.zeros((4, 4, 2), dtype=np.uint8))
    with pytest.raises(DomainError):
        Frame(np.full((2, 2), 300))
    f = Frame(np.zeros((3, 5, 3), dtype=np.uint8))
    assert (f.height, f.width, f.channels) == (3, 5, 3)
    assert not f.pixels.flags.writeable


def test_as_pose_rejects_non_finite():
    with pytest.raises(DomainError):
        as_pose([0.0, np.nan])
    assert as_pose([[1, 2]]).shape == (2,)
