"""Keyframe generation stage with oracle stand-ins for a learned generator."""

from __future__ import annotations

import threading
import time
import zlib
from dataclasses import dataclass, field

import numpy as np

from .core import ConfigError, Episode, Frame, KeyFrameSet, slice_keyframes

KINDS = ("oracle", "noisy_oracle")


class CostLedger:
    """Accumulates simulated generation seconds; safe under concurrent accrual."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._seconds = 0.0
        self._frames = 0

    def accrue(self, seconds: float, frames: int) -> None:
        with self._lock:
            self._seconds += seconds
            self._frames += frames

    @property
    def seconds(self) -> float:
        with self._lock:
            return self._seconds

    @property
    def frames(self) -> int:
        with self._lock:
            return self._frames

    def __getstate__(self) -> dict:
        return {"seconds": self.seconds, "frames": self.frames}

    def __setstate__(self, state: dict) -> None:
        self.__init__()
        self._seconds = state["seconds"]
        self._frames = state["frames"]

    def reset(self) -> None:
        with self._lock:
            self._seconds = 0.0
            self._frames = 0


@dataclass(frozen=True)
class KeyFrameGenerator:
    kind: str = "oracle"
    noise_sigma: float = 0.0
    seed: int = 0
    simulated_cost_per_frame: float = 0.0
    # When set, generation blocks for the simulated cost so wall-clock
    # benchmarks see it.
    sleep: bool = True
    ledger: CostLedger = field(default_factory=CostLedger, compare=False, repr=False)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown generator kind {self.kind!r}")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if self.simulated_cost_per_frame < 0:
            raise ConfigError("simulated_cost_per_frame must be >= 0")

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "noise_sigma": self.noise_sigma,
            "seed": self.seed,
            "simulated_cost_per_frame": self.simulated_cost_per_frame,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "KeyFrameGenerator":
        return cls(
            kind=obj.get("kind", "oracle"),
            noise_sigma=float(obj.get("noise_sigma", 0.0)),
            seed=int(obj.get("seed", 0)),
            simulated_cost_per_frame=float(obj.get("simulated_cost_per_frame", 0.0)),
        )


def _noise_rng(seed: int, episode_id: str, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(episode_id.encode("utf-8")), index])


def add_pixel_noise(frame: Frame, sigma: float, rng: np.random.Generator) -> Frame:
    noisy = frame.pixels.astype(np.float64) + rng.normal(0.0, sigma, size=frame.pixels.shape)
    noisy = np.floor(np.clip(noisy, 0.0, 255.0) + 0.5)
    return Frame(noisy.astype(np.uint8))


def generate_keyframes(gen: KeyFrameGenerator, episode: Episode, keys: KeyFrameSet) -> list[Frame]:
    """Frames at ``keys.indices``: ground truth, optionally with seeded Gaussian noise."""
    items = slice_keyframes(episode, keys)
    cost = gen.simulated_cost_per_frame * len(items)
    if cost > 0 and gen.sleep:
        time.sleep(cost)
    gen.ledger.accrue(cost, len(items))
    if gen.kind == "oracle" or gen.noise_sigma == 0:
        return [frame for _, frame, _ in items]
    return [
        add_pixel_noise(frame, gen.noise_sigma, _noise_rng(gen.seed, episode.id, i))
        for i, frame, _ in items
    ]
