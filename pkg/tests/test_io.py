import math

import numpy as np

from keyframe_pipeline import io
from keyframe_pipeline.core import Frame, KeyFrameSet, Trajectory


def test_pgm_roundtrip(tmp_path):
    f = Frame(np.random.default_rng(0).integers(0, 256, size=(7, 9)).astype(np.uint8))
    io.write_pgm(tmp_path / "a.pgm", f)
    assert io.read_pgm(tmp_path / "a.pgm") == f
    assert (tmp_path / "a.pgm").read_bytes().startswith(b"P5\n9 7\n255\n")


def test_png_roundtrip(tmp_path):
    for shape in ((6, 5), (6, 5, 3)):
        f = Frame(np.random.default_rng(1).integers(0, 256, size=shape).astype(np.uint8))
        io.write_frame(tmp_path / "a.png", f)
        assert io.read_frame(tmp_path / "a.png") == f


def test_frame_sequence(tmp_path):
    frames = [Frame(np.full((4, 4), i, dtype=np.uint8)) for i in range(12)]
    names = io.write_frames(tmp_path / "seq", frames)
    assert names[0] == "00000.pgm" and names[-1] == "00011.pgm"
    assert io.read_frames(tmp_path / "seq") == frames


def test_pose_csv_roundtrip(tmp_path):
    t = Trajectory.from_states(np.random.default_rng(2).normal(size=(5, 3)))
    io.write_pose_csv(tmp_path / "p.csv", t)
    back = io.read_pose_csv(tmp_path / "p.csv")
    np.testing.assert_array_equal(back.states, t.states)
    assert (tmp_path / "p.csv").read_text().splitlines()[0] == "t,pose_0,pose_1,pose_2"


def test_json_infinity():
    assert io.dumps({"psnr": math.inf, "b": 1}) == '{\n  "b": 1,\n  "psnr": "inf"\n}\n'


def test_episode_roundtrip(tmp_path, three_seg_episode):
    d = io.write_episode(tmp_path, three_seg_episode)
    back = io.read_episode(d)
    assert back.frames == three_seg_episode.frames
    np.testing.assert_array_equal(back.trajectory.states, three_seg_episode.trajectory.states)
    assert back.meta["breakpoints"] == three_seg_episode.meta["breakpoints"]


def test_keyframes_json():
    keys = KeyFrameSet((0, 4, 9), 0.25, 10)
    obj = io.keyframes_to_json("ep", keys, True)
    assert obj["achieved_flag"] is True
    assert io.keyframes_from_json(obj) == keys
