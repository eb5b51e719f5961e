"""Gap estimation between consecutive keyframes.

Each keyframe is embedded by a small deterministic encoder; a pair becomes
``[e_a, e_b, e_b - e_a]`` and a regression head maps that to the number of
frames in between. The default head is closed-form ridge over the rectified
lift ``[relu(z), relu(-z)]``, i.e. a two-layer perceptron whose hidden layer is
frozen to +/-identity. The lift is what lets a linear readout see the
magnitude of the embedding difference, which is what the gap depends on.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import ConfigError, DomainError, Frame, ShapeError, StateError

log = logging.getLogger(__name__)

ENCODERS = ("pixel_pool", "pose_passthrough")
LIFTS = ("rectified", "none")
HEADS = ("ridge", "mlp")


@dataclass(frozen=True)
class FrameEncoder:
    kind: str = "pose_passthrough"
    pool_grid: int = 8

    def __post_init__(self) -> None:
        if self.kind not in ENCODERS:
            raise ConfigError(f"unknown encoder kind {self.kind!r}")
        if self.pool_grid < 1:
            raise ConfigError("pool_grid must be >= 1")

    def output_dim(self, channels: int = 1, pose_dim: int | None = None) -> int:
        if self.kind == "pixel_pool":
            return self.pool_grid * self.pool_grid * channels
        if pose_dim is None:
            raise ConfigError("pose_passthrough output size depends on the pose dimension")
        return pose_dim

    def to_json(self) -> dict:
        return {"kind": self.kind, "pool_grid": self.pool_grid}


def _block_edges(n: int, g: int) -> np.ndarray:
    # Blocks of ceil(n/g) pixels; trailing blocks average whatever is left.
    size = -(-n // g)
    return np.minimum(np.arange(g + 1) * size, n)


def encode_frame(frame: Frame | None, encoder: FrameEncoder, pose=None) -> np.ndarray:
    if encoder.kind == "pose_passthrough":
        if pose is None:
            raise ConfigError("pose_passthrough encoder needs the pose")
        return np.asarray(pose, dtype=np.float64).reshape(-1).copy()
    if frame is None:
        raise ConfigError("pixel_pool encoder needs a frame")
    px = frame.pixels.astype(np.float64)
    if px.ndim == 2:
        px = px[:, :, None]
    g = encoder.pool_grid
    rows, cols = _block_edges(px.shape[0], g), _block_edges(px.shape[1], g)
    # Summed-area table so each block mean is O(1).
    sat = np.zeros((px.shape[0] + 1, px.shape[1] + 1, px.shape[2]))
    sat[1:, 1:] = px.cumsum(0).cumsum(1)
    out = np.zeros((g, g, px.shape[2]))
    for i in range(g):
        r0, r1 = rows[i], rows[i + 1]
        for j in range(g):
            c0, c1 = cols[j], cols[j + 1]
            area = (r1 - r0) * (c1 - c0)
            if area == 0:
                continue
            s = sat[r1, c1] - sat[r0, c1] - sat[r1, c0] + sat[r0, c0]
            out[i, j] = s / area
    return (out / 255.0).reshape(-1)


def build_pair_features(fa, fb) -> np.ndarray:
    fa = np.asarray(fa, dtype=np.float64).reshape(-1)
    fb = np.asarray(fb, dtype=np.float64).reshape(-1)
    if fa.shape != fb.shape:
        raise ShapeError(f"embedding size mismatch: {fa.size} vs {fb.size}")
    return np.concatenate([fa, fb, fb - fa])


def lift_features(z: np.ndarray, lift: str) -> np.ndarray:
    if lift == "none":
        return z
    if lift == "rectified":
        return np.concatenate([np.maximum(z, 0.0), np.maximum(-z, 0.0)], axis=-1)
    raise ConfigError(f"unknown feature lift {lift!r}")


@dataclass(frozen=True)
class GapSample:
    """One training pair. Frames, poses or both may be set depending on the encoder."""

    gap: float
    frame_a: Frame | None = None
    frame_b: Frame | None = None
    pose_a: np.ndarray | None = None
    pose_b: np.ndarray | None = None


@dataclass
class GapEstimator:
    encoder: FrameEncoder
    lam: float = 1e-3
    lift: str = "rectified"
    head: str = "ridge"
    weights: np.ndarray | None = None
    intercept: float = 0.0
    trained: bool = False
    summary: dict = field(default_factory=dict)
    # mlp head only: hidden layer (W1, b1); ``weights``/``intercept`` are the readout.
    hidden: tuple[np.ndarray, np.ndarray] | None = None
    # Feature standardization used by the mlp head.
    feature_shift: np.ndarray | None = None
    feature_scale: np.ndarray | None = None

    def features(self, xa: Frame | None, xb: Frame | None, pa=None, pb=None) -> np.ndarray:
        z = build_pair_features(encode_frame(xa, self.encoder, pa), encode_frame(xb, self.encoder, pb))
        return lift_features(z, self.lift)

    def raw_output(self, phi: np.ndarray) -> np.ndarray:
        if not self.trained or self.weights is None:
            raise StateError("gap estimator has not been trained")
        phi = np.atleast_2d(phi)
        if self.head == "mlp":
            x = (phi - self.feature_shift) / self.feature_scale
            w1, b1 = self.hidden
            phi = np.maximum(x @ w1 + b1, 0.0)
        return phi @ self.weights + self.intercept

    def to_json(self) -> dict:
        out = {
            "encoder": self.encoder.to_json(),
            "lambda": self.lam,
            "lift": self.lift,
            "head": self.head,
            "weights": None if self.weights is None else self.weights.tolist(),
            "intercept": self.intercept,
            "trained": self.trained,
            "training_summary": self.summary,
        }
        if self.head == "mlp" and self.hidden is not None:
            out["hidden_weights"] = self.hidden[0].tolist()
            out["hidden_bias"] = self.hidden[1].tolist()
            out["feature_shift"] = self.feature_shift.tolist()
            out["feature_scale"] = self.feature_scale.tolist()
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "GapEstimator":
        enc = FrameEncoder(**obj["encoder"])
        model = cls(
            encoder=enc,
            lam=float(obj.get("lambda", 0.0)),
            lift=obj.get("lift", "rectified"),
            head=obj.get("head", "ridge"),
            weights=None if obj.get("weights") is None else np.asarray(obj["weights"], dtype=np.float64),
            intercept=float(obj.get("intercept", 0.0)),
            trained=bool(obj.get("trained", False)),
            summary=obj.get("training_summary", {}),
        )
        if model.head == "mlp" and "hidden_weights" in obj:
            model.hidden = (np.asarray(obj["hidden_weights"]), np.asarray(obj["hidden_bias"]))
            model.feature_shift = np.asarray(obj["feature_shift"])
            model.feature_scale = np.asarray(obj["feature_scale"])
        return model


def ridge_fit(x: np.ndarray, y: np.ndarray, lam: float) -> tuple[np.ndarray, float, bool]:
    """Minimize ``|Xw + b - y|^2 + lam |w|^2`` with an unpenalized intercept.

    Returns ``(w, b, used_pinv)``; the pseudo-inverse is used when the normal
    matrix is singular.
    """
    x_mean = x.mean(axis=0)
    y_mean = float(y.mean())
    xc = x - x_mean
    yc = y - y_mean
    a = xc.T @ xc + lam * np.eye(x.shape[1])
    rhs = xc.T @ yc
    used_pinv = False
    try:
        if lam == 0.0 and np.linalg.matrix_rank(a) < a.shape[0]:
            raise np.linalg.LinAlgError("singular")
        w = np.linalg.solve(a, rhs)
    except np.linalg.LinAlgError:
        # Minimum-norm least squares on the centered data.
        w = np.linalg.pinv(xc) @ yc if lam == 0.0 else np.linalg.pinv(a) @ rhs
        used_pinv = True
    return w, y_mean - float(x_mean @ w), used_pinv


def _fit_mlp(x: np.ndarray, y: np.ndarray, lam: float, seed: int, hidden: int = 32, iters: int = 3000, lr: float = 1e-2):
    shift = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale < 1e-12] = 1.0
    xs = (x - shift) / scale
    rng = np.random.default_rng(seed)
    w1 = rng.normal(0.0, 1.0 / math.sqrt(xs.shape[1]), size=(xs.shape[1], hidden))
    b1 = np.zeros(hidden)
    w2 = rng.normal(0.0, 1.0 / math.sqrt(hidden), size=hidden)
    b2 = float(y.mean())
    params = [w1, b1, w2, np.array([b2])]
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    n = xs.shape[0]
    for step in range(1, iters + 1):
        w1, b1, w2, b2 = params
        pre = xs @ w1 + b1
        h = np.maximum(pre, 0.0)
        err = h @ w2 + b2[0] - y
        g_out = 2.0 * err / n
        g_w2 = h.T @ g_out + 2 * lam * w2
        g_b2 = np.array([g_out.sum()])
        g_h = np.outer(g_out, w2) * (pre > 0)
        g_w1 = xs.T @ g_h + 2 * lam * w1
        g_b1 = g_h.sum(axis=0)
        grads = [g_w1, g_b1, g_w2, g_b2]
        for k, g in enumerate(grads):
            m[k] = 0.9 * m[k] + 0.1 * g
            v[k] = 0.999 * v[k] + 0.001 * g * g
            mh = m[k] / (1 - 0.9 ** step)
            vh = v[k] / (1 - 0.999 ** step)
            params[k] = params[k] - lr * mh / (np.sqrt(vh) + 1e-8)
    w1, b1, w2, b2 = params
    return (w1, b1), w2, float(b2[0]), shift, scale


def train_gap_estimator(
    samples: Sequence[GapSample],
    encoder: FrameEncoder,
    lam: float = 1e-3,
    lift: str = "rectified",
    head: str = "ridge",
    seed: int = 0,
) -> GapEstimator:
    """Fit a gap regressor by least squares (MSE) on ``samples``."""
    if len(samples) < 2:
        raise DomainError("need at least two samples to train a gap estimator")
    if lam < 0:
        raise DomainError("lambda must be >= 0")
    if head not in HEADS:
        raise ConfigError(f"unknown head {head!r}")
    if any(s.gap < 0 for s in samples):
        raise DomainError("gaps must be >= 0")
    model = GapEstimator(encoder=encoder, lam=lam, lift=lift, head=head)
    x = np.vstack([model.features(s.frame_a, s.frame_b, s.pose_a, s.pose_b) for s in samples])
    y = np.asarray([s.gap for s in samples], dtype=np.float64)
    used_pinv = False
    if head == "ridge":
        w, b, used_pinv = ridge_fit(x, y, lam)
    else:
        hidden, w, b, shift, scale = _fit_mlp(x, y, lam, seed)
        model.hidden, model.feature_shift, model.feature_scale = hidden, shift, scale
    model.weights, model.intercept, model.trained = w, b, True
    resid = model.raw_output(x) - y
    model.summary = {
        "samples": len(samples),
        "feature_dim": int(x.shape[1]),
        "train_rmse": float(np.sqrt(np.mean(resid**2))),
        "pseudo_inverse": used_pinv,
    }
    if used_pinv:
        log.info("gap estimator normal matrix singular; used pseudo-inverse")
    return model


def predict_gap(model: GapEstimator, xa: Frame | None, xb: Frame | None, pose_a=None, pose_b=None) -> float:
    """Predicted number of frames between two keyframes, floored at 0."""
    if not model.trained:
        raise StateError("gap estimator has not been trained")
    phi = model.features(xa, xb, pose_a, pose_b)
    return max(0.0, float(model.raw_output(phi)[0]))


def largest_remainder(values, total: int) -> np.ndarray:
    """Round non-negative reals to integers summing to ``total``.

    Floors everything, then hands the leftover units to the largest
    fractional parts; equal remainders go to the earlier entry.
    """
    v = np.asarray(values, dtype=np.float64)
    base = np.floor(v).astype(np.int64)
    short = int(total - base.sum())
    if short < 0:
        # Only reachable through float drift; take units back from the smallest remainders.
        order = np.argsort(v - base, kind="stable")
        for k in order[: -short]:
            base[k] -= 1
        return base
    rem = v - base
    order = np.argsort(-rem, kind="stable")
    base[order[:short]] += 1
    return base


def default_g_max(n_frames: int, n_keys: int) -> int:
    return int(math.ceil(2.0 * n_frames / n_keys))


def normalize_gaps(raw, last_index: int, g_max: int | None = None, with_flag: bool = False):
    """Turn raw gap predictions into integer gaps that exactly fill the episode.

    ``last_index`` is N for an episode of N+1 frames. Each prediction is
    clamped to ``[0, g_max]``, the vector is rescaled to sum to
    ``N + 1 - |K|`` and rounded by largest remainder. An all-zero vector with
    frames still to place is spread uniformly (flagged).
    """
    raw = np.asarray(raw, dtype=np.float64).reshape(-1)
    n_keys = raw.size + 1
    if n_keys < 2:
        raise DomainError("need at least one gap")
    n_frames = last_index + 1
    if n_frames < n_keys:
        raise DomainError(f"{n_keys} keyframes do not fit in {n_frames} frames")
    if g_max is None:
        g_max = default_g_max(n_frames, n_keys)
    required = n_frames - n_keys
    clipped = np.clip(np.nan_to_num(raw, nan=0.0), 0.0, float(g_max))
    total = clipped.sum()
    flagged = False
    if required == 0:
        gaps = np.zeros(raw.size, dtype=np.int64)
    elif total <= 0:
        flagged = True
        log.warning("all gap predictions are zero; spreading %d frames uniformly", required)
        gaps = largest_remainder(np.full(raw.size, required / raw.size), required)
    else:
        # divide first: required / total overflows for subnormal totals
        gaps = largest_remainder(clipped / total * required, required)
    return (gaps, flagged) if with_flag else gaps


def gap_rmse(predictions, truths) -> float:
    p = np.asarray(predictions, dtype=np.float64).reshape(-1)
    t = np.asarray(truths, dtype=np.float64).reshape(-1)
    if p.shape != t.shape:
        raise ShapeError(f"length mismatch: {p.size} predictions vs {t.size} truths")
    if p.size == 0:
        raise ShapeError("need at least one prediction")
    return float(np.sqrt(np.mean((p - t) ** 2)))
