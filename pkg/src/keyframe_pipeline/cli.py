"""Command-line entry point: ``keyframe-pipeline <command> ...``.

Exit codes: 0 success, 1 configuration or usage error, 2 per-episode data failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .bench import BASELINES, benchmark_pipeline
from .core import ConfigError, DomainError, Episode, validate_episode
from .gapnet import ENCODERS, HEADS, LIFTS, FrameEncoder, GapEstimator, GapSample, gap_rmse, predict_gap, train_gap_estimator
from .generator import KINDS as GENERATOR_KINDS
from .io import (
    atomic_write_text,
    keyframes_from_json,
    keyframes_to_json,
    read_episode,
    read_json,
    write_episode,
    write_frames,
    write_json,
)
from .metrics import format_metric
from .pipeline import (
    GAP_SOURCES,
    SELECTIONS,
    PipelineConfig,
    StageError,
    compare,
    default_jobs,
    frame_to_frame,
    run_episode,
    select_indices,
)
from .synthworld import SUITES, TaskScript, simulate_task, suite_script

log = logging.getLogger("keyframe_pipeline")

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 1, 2

# Published deep-encoder gap RMSE at 20% keys, shown next to our numbers for context only.
REFERENCE_GAP_RMSE = {"label": "published deep encoder, 20% keys", "rmse_min": 2.27, "rmse_max": 3.57}

REPORT_COLUMNS = (
    "dataset", "model", "psnr_db", "ssim", "complexity", "quality_index",
    "keygen_s", "gap_s", "interp_s", "total_s", "acceleration",
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit 2, which is reserved for data failures
        self.print_usage(sys.stderr)
        raise UsageError(message)


class _JsonFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        return json.dumps({"level": record.levelname.lower(), "logger": record.name, "msg": record.getMessage()})


def _setup_logging(as_json: bool, verbose: bool) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_JsonFormatter() if as_json else logging.Formatter("%(levelname)s %(message)s"))
    log.handlers[:] = [handler]
    log.setLevel(logging.DEBUG if verbose else logging.INFO)
    log.propagate = False


def _timestamp() -> str:
    # SOURCE_DATE_EPOCH pins the manifest so repeated runs produce identical trees.
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    when = _dt.datetime.fromtimestamp(int(epoch), _dt.timezone.utc) if epoch else _dt.datetime.now(_dt.timezone.utc)
    return when.strftime("%Y-%m-%dT%H:%M:%SZ")


def write_run_manifest(out: Path, command: str, args: argparse.Namespace) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    config = getattr(args, "config", None)
    manifest = {
        "command": command,
        "config_path": [str(c) for c in config] if isinstance(config, list) else (str(config) if config else None),
        "dataset_path": str(args.dataset) if getattr(args, "dataset", None) else None,
        "output_dir": str(out),
        "seed": getattr(args, "seed", None),
        "tool_version": __version__,
        "timestamp": _timestamp(),
    }
    path = out / "run_manifest.json"
    write_json(path, manifest)
    return path


# -- dataset helpers ---------------------------------------------------------


def load_dataset(root: Path) -> tuple[list[Episode], list[dict]]:
    """Episodes listed in ``root/index.json``; invalid ones are skipped and reported."""
    index_path = root / "index.json"
    if not index_path.exists():
        raise ConfigError(f"{root} has no index.json")
    index = read_json(index_path)
    episodes, failures = [], []
    for eid in index.get("episodes", []):
        try:
            ep = read_episode(root / eid)
        except (OSError, ValueError, KeyError) as exc:
            failures.append({"episode": eid, "stage": "load", "error": str(exc)})
            log.error("[%s] cannot load episode: %s", eid, exc)
            continue
        problems = validate_episode(ep)
        if problems:
            failures.append({"episode": eid, "stage": "validate", "error": "; ".join(problems)})
            log.error("[%s] invalid episode: %s", eid, "; ".join(problems))
            continue
        episodes.append(ep)
    return episodes, failures


def dataset_name(root: Path) -> str:
    index_path = root / "index.json"
    if index_path.exists():
        return str(read_json(index_path).get("name", root.name))
    return root.name


def load_keyframes(kf_dir: Path, episodes: Sequence[Episode]) -> dict[str, tuple]:
    out = {}
    for ep in episodes:
        path = kf_dir / f"{ep.id}.json"
        if path.exists():
            out[ep.id] = keyframes_from_json(read_json(path))
    return out


def split_episodes(ids: Sequence[str], seed: int, train_fraction: float) -> tuple[set[str], set[str]]:
    if not 0 < train_fraction <= 1:
        raise ConfigError("train fraction must lie in (0, 1]")
    order = sorted(ids)
    perm = np.random.default_rng(seed).permutation(len(order))
    n_train = int(round(train_fraction * len(order)))
    train = {order[i] for i in perm[:n_train]}
    return train, set(order) - train


def gap_samples(episodes: Sequence[Episode], keyframes: dict, keep: set[str] | None = None) -> list[GapSample]:
    samples = []
    for ep in episodes:
        if (keep is not None and ep.id not in keep) or ep.id not in keyframes:
            continue
        idx = keyframes[ep.id].indices
        for a, b in zip(idx, idx[1:]):
            samples.append(
                GapSample(
                    float(b - a - 1),
                    ep.frames[a],
                    ep.frames[b],
                    ep.trajectory.states[a],
                    ep.trajectory.states[b],
                )
            )
    return samples


# -- config handling ---------------------------------------------------------


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("config overrides (one per config-file key)")
    g.add_argument("--name")
    g.add_argument("--keyframe-density", type=float)
    g.add_argument("--target-count", type=int)
    g.add_argument("--selection", choices=SELECTIONS)
    g.add_argument("--gap-source", choices=GAP_SOURCES)
    g.add_argument("--interpolator", choices=("pixel_linear", "pose_rerender"))
    g.add_argument("--seed", type=int)
    g.add_argument("--standardize", action=argparse.BooleanOptionalAction, default=None)
    g.add_argument("--gap-model")
    g.add_argument("--generator-kind", choices=GENERATOR_KINDS)
    g.add_argument("--noise-sigma", type=float)
    g.add_argument("--simulated-cost", type=float, help="simulated generation seconds per keyframe")


def _read_configs(paths: Sequence[str] | None) -> list[dict]:
    if not paths:
        return [{}]
    out = []
    for path in paths:
        try:
            obj = read_json(path)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
        out.extend(obj if isinstance(obj, list) else [obj])
    return out


def build_configs(args: argparse.Namespace) -> list[PipelineConfig]:
    configs = []
    for raw in _read_configs(getattr(args, "config", None)):
        obj = dict(raw)
        gen = dict(obj.get("generator") or {})
        for flag, key in (("name", "name"), ("keyframe_density", "keyframe_density"), ("target_count", "target_count"),
                          ("selection", "selection"), ("gap_source", "gap_source"), ("interpolator", "interpolator"),
                          ("seed", "seed"), ("standardize", "standardize"), ("gap_model", "gap_model")):
            val = getattr(args, flag, None)
            if val is not None:
                obj[key] = val
        if getattr(args, "target_count", None) is not None and getattr(args, "keyframe_density", None) is None:
            obj["keyframe_density"] = None
        for flag, key in (("generator_kind", "kind"), ("noise_sigma", "noise_sigma"), ("simulated_cost", "simulated_cost_per_frame")):
            val = getattr(args, flag, None)
            if val is not None:
                gen[key] = val
        obj["generator"] = gen
        configs.append(PipelineConfig.from_json(obj))
    return configs


def _load_gap_model(configs: Sequence[PipelineConfig]) -> GapEstimator | None:
    paths = {c.gap_model for c in configs if c.gap_source == "predicted" and c.selection == "motion_aware"}
    paths.discard(None)
    if len(paths) > 1:
        raise ConfigError("all configs in one run must share a gap model")
    needs = any(c.gap_source == "predicted" and c.selection == "motion_aware" for c in configs)
    if needs and not paths:
        raise ConfigError("gap_source 'predicted' needs gap_model (a gap-train output)")
    if not paths:
        return None
    path = paths.pop()
    try:
        return GapEstimator.from_json(read_json(path))
    except OSError as exc:
        raise ConfigError(f"cannot read gap model {path}: {exc}") from exc


# -- reports -----------------------------------------------------------------


def _csv_value(v) -> str:
    if isinstance(v, float):
        return format_metric(v) if math.isinf(v) else repr(v) if math.isnan(v) else f"{v:.6f}"
    return str(v)


def write_report_csv(path: Path, rows: Sequence[dict], columns: Sequence[str] = REPORT_COLUMNS) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_csv_value(r.get(c, "")) for c in columns])
    atomic_write_text(path, buf.getvalue())


def _dump_reconstruction(out: Path, model: str, episode_id: str, frames, positions, gaps, kind: str) -> None:
    d = out / "frames" / model / episode_id
    write_frames(d, frames)
    write_json(d / "reconstruction.json", {"keyframe_positions": list(positions), "gaps": [int(g) for g in gaps], "interpolator": kind})


# -- commands ----------------------------------------------------------------


def cmd_synth_gen(args: argparse.Namespace) -> int:
    out = Path(args.out)
    write_run_manifest(out, "synth-gen", args)
    if args.count < 0:
        raise ConfigError("count must be >= 0")
    seed = args.seed if args.seed is not None else 0
    scripts: list[TaskScript] = []
    if args.suite:
        scripts = [suite_script(args.suite, i, seed) for i in range(args.count)]
        name = args.suite
    else:
        files = sorted(Path(args.script_dir).glob("*.json"))
        if not files:
            raise ConfigError(f"no *.json scripts in {args.script_dir}")
        scripts = [TaskScript.from_json(read_json(files[i % len(files)])) for i in range(args.count)]
        name = Path(args.script_dir).name
    ids = []
    for i, script in enumerate(scripts):
        eid = f"{name}-{i:04d}"
        ep = simulate_task(script, seed=seed, width=args.width, height=args.height, episode_id=eid)
        write_episode(out, ep, ext=args.ext)
        ids.append(eid)
    write_json(out / "index.json", {"name": name, "seed": seed, "count": len(ids), "episodes": ids})
    log.info("wrote %d episodes to %s", len(ids), out)
    return EXIT_OK


def cmd_extract(args: argparse.Namespace) -> int:
    out = Path(args.out)
    write_run_manifest(out, "extract", args)
    root = Path(args.dataset)
    episodes, failures = load_dataset(root)
    base = PipelineConfig(
        keyframe_density=None if args.count else args.density,
        target_count=args.count,
        selection="motion_aware",
        standardize=args.standardize,
    )
    summary = []
    for ep in episodes:
        try:
            if args.at_breakpoints:
                count = len(ep.meta.get("breakpoints", [])) or None
                if count is None:
                    raise DomainError("episode has no breakpoints in its metadata")
            else:
                count = None
            keys, achieved = select_indices(base, ep, count)
        except (ValueError, DomainError, ConfigError) as exc:
            failures.append({"episode": ep.id, "stage": "select", "error": str(exc)})
            log.error("[%s] extraction failed: %s", ep.id, exc)
            continue
        write_json(out / f"{ep.id}.json", keyframes_to_json(ep.id, keys, achieved))
        target = count if count is not None else base.key_count(len(ep))
        summary.append({"episode": ep.id, "target": target, "achieved": len(keys), "achieved_flag": achieved, "epsilon": keys.epsilon})
    write_json(out / "summary.json", {"dataset": dataset_name(root), "episodes": summary, "failures": failures})
    log.info("extracted keyframes for %d episodes (%d failures)", len(summary), len(failures))
    if failures and not summary:
        return EXIT_DATA
    return EXIT_OK


def _gap_split(args) -> tuple[list[Episode], dict, set[str], set[str], list[dict]]:
    root = Path(args.dataset)
    episodes, failures = load_dataset(root)
    keyframes = load_keyframes(Path(args.keyframes), episodes)
    train, test = split_episodes([e.id for e in episodes if e.id in keyframes], args.split_seed, args.train_fraction)
    return episodes, keyframes, train, test, failures


def cmd_gap_train(args: argparse.Namespace) -> int:
    out = Path(args.out)
    write_run_manifest(out, "gap-train", args)
    episodes, keyframes, train, _, failures = _gap_split(args)
    samples = gap_samples(episodes, keyframes, train)
    if not samples:
        raise DomainError("no keyframe pairs to train on")
    encoder = FrameEncoder(args.encoder, args.pool_grid)
    model = train_gap_estimator(samples, encoder, args.lam, args.lift, head=args.head, seed=args.split_seed)
    write_json(out / "gap_model.json", model.to_json())
    log.info("trained on %d pairs, train rmse %.3f", len(samples), model.summary.get("train_rmse", math.nan))
    return EXIT_DATA if failures else EXIT_OK


def cmd_gap_eval(args: argparse.Namespace) -> int:
    out = Path(args.out)
    write_run_manifest(out, "gap-eval", args)
    try:
        model = GapEstimator.from_json(read_json(args.model))
    except OSError as exc:
        raise ConfigError(f"cannot read gap model {args.model}: {exc}") from exc
    episodes, keyframes, train, test, failures = _gap_split(args)
    keep = {"train": train, "test": test, "all": train | test}[args.split]
    samples = gap_samples(episodes, keyframes, keep)
    if not samples:
        raise DomainError("no keyframe pairs to evaluate")
    preds = [predict_gap(model, s.frame_a, s.frame_b, s.pose_a, s.pose_b) for s in samples]
    rmse = gap_rmse(preds, [s.gap for s in samples])
    report = {
        "dataset": dataset_name(Path(args.dataset)),
        "split": args.split,
        "encoder": model.encoder.to_json(),
        "pairs": len(samples),
        "rmse_frames": rmse,
        "reference": REFERENCE_GAP_RMSE,
    }
    write_json(out / "gap_eval.json", report)
    log.info("gap rmse %.4f frames over %d pairs", rmse, len(samples))
    return EXIT_DATA if failures else EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    out = Path(args.out)
    write_run_manifest(out, "run", args)
    configs = build_configs(args)
    gap_model = _load_gap_model(configs)
    root = Path(args.dataset)
    episodes, failures = load_dataset(root)
    name = dataset_name(root)
    rows = []
    for cfg in configs:
        for ep in episodes:
            try:
                res = run_episode(cfg, ep, gap_model)
            except StageError as exc:
                failures.append({"episode": exc.episode_id, "model": cfg.name, "stage": exc.stage, "error": str(exc.cause)})
                log.error("%s", exc)
                continue
            if args.dump_frames:
                _dump_reconstruction(out, cfg.name, ep.id, res.frames, res.keyframe_positions, res.gaps, cfg.interpolator)
            rows.append({"dataset": name, "model": cfg.name, "episode": ep.id, "n_keys": len(res.keys),
                         "achieved": res.achieved, **res.cost.to_json()})
    write_json(out / "run.json", {"dataset": name, "configs": [c.to_json() for c in configs], "episodes": rows, "failures": failures})
    return EXIT_DATA if failures else EXIT_OK


def _compare_arms(configs: list[PipelineConfig], derive: bool) -> list[PipelineConfig]:
    if not derive or len(configs) != 1:
        return configs
    base = configs[0]
    uniform = replace(base, name=f"{base.name}-uniform", selection="uniform")
    return [base, uniform, frame_to_frame(base)]


def cmd_compare(args: argparse.Namespace) -> int:
    out = Path(args.out)
    write_run_manifest(out, "compare", args)
    configs = _compare_arms(build_configs(args), args.derive_arms)
    gap_model = _load_gap_model(configs)
    root = Path(args.dataset)
    episodes, failures = load_dataset(root)
    report = compare(configs, episodes, dataset_name(root), gap_model, jobs=args.jobs, keep_videos=args.dump_frames)
    failures.extend(report.failures)
    report.failures = failures
    write_report_csv(out / "report.csv", [r.to_json() for r in report.aggregate])
    write_report_csv(
        out / "episodes.csv",
        [r.to_json() for r in report.episodes],
        ("dataset", "model", "episode", "psnr_db", "ssim", "complexity", "pose_error", "n_keys", "achieved",
         "keygen_s", "gap_s", "interp_s", "total_s", "acceleration"),
    )
    write_json(out / "summary.json", report.to_json())
    if args.dump_frames:
        for (model, eid), frames in sorted(report.videos.items()):
            write_frames(out / "frames" / model / eid, frames)
    for flag in report.flags:
        log.warning("%s", flag)
    return EXIT_DATA if failures else EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    out = Path(args.out)
    write_run_manifest(out, "bench", args)
    configs = build_configs(args)
    if args.densities:
        configs = [
            replace(c, name=f"{c.name}-d{d:g}", keyframe_density=d, target_count=None)
            for c in configs
            for d in args.densities
        ]
    gap_model = _load_gap_model(configs)
    root = Path(args.dataset)
    episodes, failures = load_dataset(root)
    if not episodes:
        log.error("no valid episodes to benchmark")
        return EXIT_DATA
    name = dataset_name(root)
    results, rows = [], []
    for cfg in configs:
        try:
            res = benchmark_pipeline(cfg, episodes, gap_model, args.repeats, args.warmup, args.baseline)
        except StageError as exc:
            failures.append({"episode": exc.episode_id, "model": cfg.name, "stage": exc.stage, "error": str(exc.cause)})
            log.error("%s", exc)
            continue
        results.append(res.to_json())
        rows.append({"dataset": name, "model": cfg.name, **res.aggregate.to_json()})
    write_report_csv(out / "bench.csv", rows, ("dataset", "model", "keygen_s", "gap_s", "interp_s", "total_s", "baseline_s", "acceleration"))
    write_json(out / "bench.json", {"dataset": name, "results": results, "failures": failures})
    return EXIT_DATA if failures else EXIT_OK


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="keyframe-pipeline", description="Keyframe-factorized video reconstruction on a synthetic arm.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--log-json", action="store_true", help="line-delimited JSON logs on stderr")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth-gen", help="render a synthetic dataset")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--suite", choices=SUITES)
    src.add_argument("--script-dir")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--ext", choices=("pgm", "png"), default="pgm")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_gen)

    p = sub.add_parser("extract", help="select keyframes per episode")
    p.add_argument("--dataset", required=True)
    p.add_argument("--density", type=float, default=0.2)
    p.add_argument("--count", type=int)
    p.add_argument("--at-breakpoints", action="store_true", help="target the episode's scripted breakpoint count")
    p.add_argument("--standardize", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    for cmd, func in (("gap-train", cmd_gap_train), ("gap-eval", cmd_gap_eval)):
        p = sub.add_parser(cmd, help="train the gap estimator" if cmd == "gap-train" else "evaluate gap RMSE")
        p.add_argument("--dataset", required=True)
        p.add_argument("--keyframes", required=True, help="directory written by extract")
        p.add_argument("--split-seed", type=int, default=0)
        p.add_argument("--train-fraction", type=float, default=0.75)
        p.add_argument("--out", required=True)
        if cmd == "gap-train":
            p.add_argument("--encoder", choices=ENCODERS, default="pose_passthrough")
            p.add_argument("--pool-grid", type=int, default=8)
            p.add_argument("--lambda", dest="lam", type=float, default=1e-3)
            p.add_argument("--lift", choices=LIFTS, default="rectified")
            p.add_argument("--head", choices=HEADS, default="ridge")
        else:
            p.add_argument("--model", required=True)
            p.add_argument("--split", choices=("train", "test", "all"), default="test")
        p.set_defaults(func=func)

    for cmd, func, text in (
        ("run", cmd_run, "reconstruct episodes with one or more configs"),
        ("compare", cmd_compare, "score configs side by side"),
        ("bench", cmd_bench, "time the pipeline stages"),
    ):
        p = sub.add_parser(cmd, help=text)
        p.add_argument("--config", action="append", help="pipeline config JSON (object or list); repeatable")
        p.add_argument("--dataset", required=True)
        p.add_argument("--out", required=True)
        _add_config_flags(p)
        if cmd in ("run", "compare"):
            p.add_argument("--dump-frames", action="store_true", help="write reconstructed frames as PGM")
        if cmd == "compare":
            p.add_argument("--jobs", type=int, default=None)
            p.add_argument("--derive-arms", action=argparse.BooleanOptionalAction, default=True,
                           help="with one config, add its uniform and frame-to-frame arms")
        if cmd == "bench":
            p.add_argument("--repeats", type=int, default=3)
            p.add_argument("--warmup", type=int, default=1)
            p.add_argument("--baseline", choices=BASELINES, default="extrapolated")
            p.add_argument("--densities", type=float, nargs="+")
        p.set_defaults(func=func)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"keyframe-pipeline: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    _setup_logging(args.log_json, args.verbose)
    try:
        if getattr(args, "jobs", 0) is None:
            args.jobs = default_jobs()
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except DomainError as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
