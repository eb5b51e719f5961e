import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from keyframe_pipeline import synthworld as sw  # noqa: E402

DATA = Path(__file__).parent / "data"


def three_segment_script(durations=(20, 30, 30)) -> sw.TaskScript:
    return sw.TaskScript(
        "move the arm through three waypoints",
        segments=(
            ((0.6, -0.4, 0.3, 1.0), durations[0]),
            ((-0.2, 0.5, -0.6, 0.2), durations[1]),
            ((0.4, 0.1, 0.8, 0.9), durations[2]),
        ),
        objects=(sw.SceneObject("disk", (1.3, 0.6), 0.15),),
        name="three-seg",
    )


def canonical_script() -> sw.TaskScript:
    return sw.TaskScript(
        "canonical scene",
        segments=(((0.3, -0.5, 0.4, 0.6), 10),),
        objects=(sw.SceneObject("disk", (1.2, 0.5), 0.15), sw.SceneObject("square", (-0.8, -0.9), 0.2)),
        name="canonical",
    )


CANONICAL_POSE = np.array([0.3, -0.5, 0.4, 0.6])


@pytest.fixture(scope="session")
def three_seg_episode():
    return sw.simulate_task(three_segment_script(), episode_id="three-seg")


@pytest.fixture(scope="session")
def suite_episodes():
    return [sw.simulate_task(sw.suite_script("segments", i, 11)) for i in range(4)]
