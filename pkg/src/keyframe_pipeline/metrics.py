"""Quality and cost accounting: PSNR, SSIM, trajectory complexity, quality index, cost model."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from .core import DomainError, Frame, ShapeError, Trajectory

MAX_I = 255.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
K1, K2 = 0.01, 0.03
C1 = (K1 * MAX_I) ** 2
C2 = (K2 * MAX_I) ** 2
# Stand-in for infinite PSNR when a quality index needs a finite number.
PSNR_CAP_DB = 100.0


def _stack(x) -> np.ndarray:
    if isinstance(x, Frame):
        return x.pixels.astype(np.float64)[None]
    if isinstance(x, np.ndarray):
        arr = x.astype(np.float64)
        return arr[None] if arr.ndim == 2 else arr
    return np.stack([f.pixels.astype(np.float64) for f in x])


def mse(a, b) -> float:
    xa, xb = _stack(a), _stack(b)
    if xa.shape != xb.shape:
        raise ShapeError(f"shape mismatch: {xa.shape} vs {xb.shape}")
    return float(np.mean((xa - xb) ** 2))


def psnr(a, b) -> float:
    """PSNR in dB for 8-bit frames or videos (MSE pooled over every pixel); inf when identical."""
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(MAX_I**2 / err)


@lru_cache(maxsize=None)
def gaussian_kernel(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 1-D Gaussian taps; the 2-D window is their outer product."""
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    g /= g.sum()
    g.setflags(write=False)
    return g


def _filter_valid(x: np.ndarray) -> np.ndarray:
    # Separable Gaussian over axes 1 and 2 of a (frames, H, W) stack, no padding.
    g = gaussian_kernel()
    k = g.size
    rows = sum(g[i] * x[:, i:x.shape[1] - k + 1 + i, :] for i in range(k))
    return sum(g[j] * rows[:, :, j:x.shape[2] - k + 1 + j] for j in range(k))


def _ssim_maps(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-frame mean SSIM for (frames, H, W) stacks."""
    mu_a = _filter_valid(a)
    mu_b = _filter_valid(b)
    aa = _filter_valid(a * a) - mu_a * mu_a
    bb = _filter_valid(b * b) - mu_b * mu_b
    ab = _filter_valid(a * b) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + C1) * (2.0 * ab + C2)
    den = (mu_a * mu_a + mu_b * mu_b + C1) * (aa + bb + C2)
    return (num / den).mean(axis=(1, 2))


def ssim(a, b) -> float:
    """Mean SSIM over valid 11x11 Gaussian windows (sigma 1.5); videos average frames, RGB averages channels."""
    xa, xb = _stack(a), _stack(b)
    if xa.shape != xb.shape:
        raise ShapeError(f"shape mismatch: {xa.shape} vs {xb.shape}")
    if min(xa.shape[1], xa.shape[2]) < SSIM_WINDOW:
        raise DomainError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    if xa.ndim == 3:
        return float(np.mean(_ssim_maps(xa, xb)))
    per_channel = [_ssim_maps(xa[..., c], xb[..., c]) for c in range(xa.shape[3])]
    return float(np.mean(np.mean(per_channel, axis=0)))


def trajectory_complexity(traj: Trajectory | np.ndarray) -> float:
    """Cumulative absolute change of every pose dimension along the trajectory."""
    states = traj.states if isinstance(traj, Trajectory) else np.asarray(traj, dtype=np.float64)
    if states.ndim == 1:
        states = states[:, None]
    if states.shape[0] < 2:
        raise DomainError("trajectory needs at least two states")
    return float(np.abs(np.diff(states, axis=0)).sum())


@dataclass
class QualityRow:
    model_name: str
    dataset_name: str
    psnr: float
    ssim: float
    extra: dict = field(default_factory=dict)

    def metrics(self) -> dict[str, float]:
        return {"psnr": self.psnr, "ssim": self.ssim, **self.extra}


def quality_index(
    rows: Sequence[QualityRow],
    metrics: Sequence[str] = ("psnr", "ssim"),
    lower_is_better: Sequence[str] = (),
) -> dict[str, float]:
    """Per-model score in [0, 1] for rows of one dataset.

    Each metric is min-max normalized across models and weighted by its
    coefficient of variation on the raw values; when every weight is zero the
    plain mean of normalized metrics is used. Infinite PSNR counts as
    ``PSNR_CAP_DB``.
    """
    if len(rows) < 2:
        raise DomainError("quality index needs at least two models")
    names = [r.model_name for r in rows]
    return dict(zip(names, _scores(rows, metrics, lower_is_better)))


QUALITY_SCOPES = ("dataset", "global")


def quality_index_table(
    rows: Sequence[QualityRow],
    scope: str = "dataset",
    metrics: Sequence[str] = ("psnr", "ssim"),
    lower_is_better: Sequence[str] = (),
) -> dict[tuple[str, str], float]:
    """Quality index keyed by ``(dataset, model)``.

    ``scope="dataset"`` normalizes within each dataset; ``"global"`` pools all
    rows before min-max normalization.
    """
    if scope not in QUALITY_SCOPES:
        raise DomainError(f"scope must be one of {QUALITY_SCOPES}, got {scope!r}")
    groups: dict[str, list[QualityRow]] = {}
    if scope == "global":
        groups[""] = list(rows)
    else:
        for r in rows:
            groups.setdefault(r.dataset_name, []).append(r)
    out = {}
    for group in groups.values():
        if len(group) < 2:
            raise DomainError("quality index needs at least two models per normalization group")
        for r, v in zip(group, _scores(group, metrics, lower_is_better)):
            out[(r.dataset_name, r.model_name)] = v
    return out


def _scores(rows, metrics, lower_is_better) -> list[float]:
    norm_cols, weights = [], []
    for m in metrics:
        vals = []
        for r in rows:
            v = r.metrics().get(m)
            if v is None:
                raise DomainError(f"metric {m!r} missing for model {r.model_name!r}")
            v = float(v)
            if math.isinf(v):
                v = PSNR_CAP_DB if v > 0 else -PSNR_CAP_DB
            vals.append(v)
        col = np.asarray(vals)
        lo, hi = col.min(), col.max()
        norm = np.zeros_like(col) if hi == lo else (col - lo) / (hi - lo)
        if m in lower_is_better:
            norm = 1.0 - norm if hi != lo else norm
        mean = col.mean()
        cv = float(col.std() / abs(mean)) if mean != 0 else 0.0
        norm_cols.append(norm)
        weights.append(cv)
    norm_mat = np.vstack(norm_cols)
    w = np.asarray(weights)
    if w.sum() <= 0:
        scores = norm_mat.mean(axis=0)
    else:
        scores = (w[:, None] * norm_mat).sum(axis=0) / w.sum()
    return [float(v) for v in scores]


@dataclass(frozen=True)
class CostReport:
    keyframe_gen_seconds: float
    gap_estimation_seconds: float
    interpolation_seconds: float
    total_seconds: float
    baseline_seconds: float
    acceleration: float

    @classmethod
    def from_stages(cls, keygen: float, gap: float, interp: float, baseline: float) -> "CostReport":
        total = keygen + gap + interp
        accel = baseline / total if total > 0 else math.inf
        return cls(keygen, gap, interp, total, baseline, accel)

    @property
    def keyframe_share(self) -> float:
        return self.keyframe_gen_seconds / self.total_seconds if self.total_seconds > 0 else 0.0

    def to_json(self) -> dict:
        return {
            "keygen_s": self.keyframe_gen_seconds,
            "gap_s": self.gap_estimation_seconds,
            "interp_s": self.interpolation_seconds,
            "total_s": self.total_seconds,
            "baseline_s": self.baseline_seconds,
            "acceleration": self.acceleration,
        }


def cost_model(
    last_index: int,
    n_keys: int,
    per_keyframe_cost: float,
    gap_cost: float = 0.0,
    per_interp_frame_cost: float = 0.0,
) -> CostReport:
    """Analytic stage costs for an episode of ``last_index + 1`` frames.

    Generation cost is linear in the number of generated frames; the
    frame-to-frame baseline generates every frame.
    """
    n_frames = last_index + 1
    if not 2 <= n_keys <= n_frames:
        raise DomainError(f"need 2 <= K <= {n_frames}, got {n_keys}")
    if min(per_keyframe_cost, gap_cost, per_interp_frame_cost) < 0:
        raise DomainError("costs must be >= 0")
    return CostReport.from_stages(
        n_keys * per_keyframe_cost,
        gap_cost,
        (n_frames - n_keys) * per_interp_frame_cost,
        n_frames * per_keyframe_cost,
    )


def aggregate_costs(reports: Sequence[CostReport]) -> CostReport:
    """Mean stage costs; acceleration recomputed from the means."""
    if not reports:
        raise DomainError("no cost reports to aggregate")
    k = float(np.mean([r.keyframe_gen_seconds for r in reports]))
    g = float(np.mean([r.gap_estimation_seconds for r in reports]))
    i = float(np.mean([r.interpolation_seconds for r in reports]))
    b = float(np.mean([r.baseline_seconds for r in reports]))
    return CostReport.from_stages(k, g, i, b)


def psnr_sort_key(value: float) -> float:
    """Sort key that places infinite PSNR above every finite value."""
    return math.inf if math.isinf(value) and value > 0 else float(value)


def format_metric(value: float, digits: int = 6) -> str:
    if isinstance(value, float) and math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.{digits}f}"


def mean_finite_or_inf(values: Sequence[float]) -> float:
    vals = list(values)
    if not vals:
        return math.nan
    if all(math.isinf(v) and v > 0 for v in vals):
        return math.inf
    return float(np.mean([min(v, PSNR_CAP_DB) for v in vals]))
