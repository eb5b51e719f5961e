"""On-disk formats: PGM/PNG frames, pose CSV, episode manifests and JSON helpers."""

from __future__ import annotations

import csv
import json
import math
import os
import re
import tempfile
from pathlib import Path
from typing import Any, Iterable

import numpy as np
from PIL import Image

from .core import DomainError, Episode, Frame, KeyFrameSet, ShapeError, Trajectory

_PGM_HEADER = re.compile(rb"^P5\s+(?:#[^\n]*\n\s*)*(\d+)\s+(\d+)\s+(\d+)\s")


def write_pgm(path: str | Path, frame: Frame) -> None:
    if frame.channels != 1:
        raise ShapeError("PGM output needs a single-channel frame")
    h, w = frame.pixels.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(frame.pixels.tobytes())


def read_pgm(path: str | Path) -> Frame:
    data = Path(path).read_bytes()
    m = _PGM_HEADER.match(data)
    if not m:
        raise DomainError(f"{path}: not a binary PGM (P5) file")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise DomainError(f"{path}: only maxval 255 is supported, got {maxval}")
    body = data[m.end():m.end() + w * h]
    if len(body) != w * h:
        raise DomainError(f"{path}: truncated pixel data")
    return Frame(np.frombuffer(body, dtype=np.uint8).reshape(h, w).copy())


def write_frame(path: str | Path, frame: Frame) -> None:
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        write_pgm(path, frame)
    else:
        Image.fromarray(frame.pixels).save(path)


def read_frame(path: str | Path) -> Frame:
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        return read_pgm(path)
    with Image.open(path) as img:
        if img.mode not in ("L", "RGB"):
            img = img.convert("RGB")
        return Frame(np.asarray(img))


def frame_name(index: int, ext: str = "pgm", width: int = 5) -> str:
    return f"{index:0{width}d}.{ext}"


def write_frames(frame_dir: str | Path, frames: Iterable[Frame], ext: str = "pgm") -> list[str]:
    frame_dir = Path(frame_dir)
    frame_dir.mkdir(parents=True, exist_ok=True)
    names = []
    for i, frame in enumerate(frames):
        name = frame_name(i, ext)
        write_frame(frame_dir / name, frame)
        names.append(name)
    return names


def read_frames(frame_dir: str | Path) -> list[Frame]:
    frame_dir = Path(frame_dir)
    files = sorted(
        p for p in frame_dir.iterdir() if p.suffix.lower() in (".pgm", ".png") and p.stem.isdigit()
    )
    return [read_frame(p) for p in files]


def write_pose_csv(path: str | Path, traj: Trajectory) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"pose_{d}" for d in range(traj.dim)])
        for t, row in zip(traj.timestamps, traj.states):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def read_pose_csv(path: str | Path) -> Trajectory:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "t":
            raise DomainError(f"{path}: pose CSV must start with a 't' column")
        rows = [[float(v) for v in row] for row in reader if row]
    arr = np.asarray(rows, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != len(header):
        raise ShapeError(f"{path}: ragged pose CSV")
    return Trajectory(arr[:, 1:], arr[:, 0])


def atomic_write_text(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_default(obj: Any) -> Any:
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _encode_inf(obj: Any) -> Any:
    # Infinite PSNR is serialized as the string "inf".
    if isinstance(obj, float) and math.isinf(obj):
        return "inf" if obj > 0 else "-inf"
    if isinstance(obj, dict):
        return {k: _encode_inf(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_encode_inf(v) for v in obj]
    return obj


def dumps(obj: Any) -> str:
    return json.dumps(_encode_inf(_to_plain(obj)), indent=2, sort_keys=True, default=_json_default) + "\n"


def _to_plain(obj: Any) -> Any:
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {k: _to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    return obj


def write_json(path: str | Path, obj: Any) -> None:
    atomic_write_text(path, dumps(obj))


def read_json(path: str | Path) -> Any:
    with open(path) as fh:
        return json.load(fh)


def write_episode(root: str | Path, episode: Episode, ext: str = "pgm") -> Path:
    """Write an episode as ``root/<id>/manifest.json`` plus frames and pose CSV."""
    ep_dir = Path(root) / episode.id
    ep_dir.mkdir(parents=True, exist_ok=True)
    write_frames(ep_dir / "frames", episode.frames, ext)
    write_pose_csv(ep_dir / "poses.csv", episode.trajectory)
    manifest = {
        "id": episode.id,
        "description": episode.description,
        "fps": episode.fps,
        "frame_dir": "frames",
        "pose_csv": "poses.csv",
    }
    if episode.meta:
        manifest["meta"] = episode.meta
    write_json(ep_dir / "manifest.json", manifest)
    return ep_dir


def read_episode(manifest_path: str | Path) -> Episode:
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.json"
    m = read_json(manifest_path)
    base = manifest_path.parent
    frames = read_frames(base / m["frame_dir"])
    traj = read_pose_csv(base / m["pose_csv"])
    return Episode(
        id=str(m["id"]),
        description=str(m.get("description", "")),
        frames=tuple(frames),
        trajectory=traj,
        fps=float(m.get("fps", 16.0)),
        meta=m.get("meta", {}),
    )


def keyframes_to_json(episode_id: str, keys: KeyFrameSet, achieved: bool) -> dict:
    return {
        "episode_id": episode_id,
        "epsilon": keys.epsilon,
        "indices": list(keys.indices),
        "achieved_flag": bool(achieved),
        "source_length": keys.source_length,
    }


def keyframes_from_json(obj: dict) -> KeyFrameSet:
    indices = obj["indices"]
    return KeyFrameSet(tuple(indices), float(obj["epsilon"]), int(obj.get("source_length", indices[-1] + 1)))
