"""Exit-gate checks. Each test prints one PASS/FAIL line, then asserts.

Run alone with ``pytest tests/test_acceptance.py -v``.
"""

import math
import time

import numpy as np
import pytest

import oracles
from keyframe_pipeline import synthworld as sw
from keyframe_pipeline.bench import benchmark_pipeline
from keyframe_pipeline.core import Frame, KeyFrameSet, Trajectory, density_to_count
from keyframe_pipeline.gapnet import FrameEncoder, GapSample, gap_rmse, normalize_gaps, predict_gap, train_gap_estimator
from keyframe_pipeline.generator import KeyFrameGenerator
from keyframe_pipeline.metrics import C1, CostReport, cost_model, psnr, ssim, trajectory_complexity
from keyframe_pipeline.pipeline import PipelineConfig, compare, default_jobs, frame_to_frame, pose_error, run_episode
from keyframe_pipeline.simplify import SimplifyParams, rdp_simplify, select_keyframes_by_count


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}")
        return ok

    return emit


# -- 1: RDP correctness --------------------------------------------------------


def _random_trajectory(rng):
    kind = rng.integers(4)
    n = int(rng.integers(2, 31)) if rng.random() < 0.5 else int(rng.integers(2, 101))
    d = int(rng.integers(1, 9))
    if kind == 0:
        pts = rng.normal(size=(n, d))
    elif kind == 1:
        pts = np.cumsum(rng.normal(size=(n, d)), axis=0)
    else:
        # piecewise linear, optionally closing into a loop
        k = int(rng.integers(1, 5))
        way = rng.normal(size=(k + 1, d))
        if kind == 3:
            way[-1] = way[0]
        t = np.linspace(0, k, n)
        seg = np.minimum(t.astype(int), k - 1)
        frac = (t - seg)[:, None]
        pts = way[seg] + frac * (way[seg + 1] - way[seg])
    return pts


def _span_ok(states, lo, hi, eps):
    if hi - lo < 2:
        return True
    _, r = oracles.rel_deviation(states, lo, hi, oracles.bbox_diagonal(states))
    return r < eps or r <= oracles.ZERO_DEV


def test_criterion_1_rdp_suite(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(20240601)
    problems, oracle_checked = [], 0
    for case in range(200):
        pts = _random_trajectory(rng)
        tr = Trajectory.from_states(pts)
        eps_list = [0.0] + sorted(rng.uniform(0, 0.8, 3).tolist())
        sets = []
        for eps in eps_list:
            keys = list(rdp_simplify(tr, SimplifyParams(epsilon=eps)).indices)
            sets.append(keys)
            if keys[0] != 0 or keys[-1] != len(pts) - 1:
                problems.append((case, "endpoints"))
            if keys != oracles.rdp(pts.tolist(), eps):
                problems.append((case, "reference"))
            if not all(_span_ok(pts.tolist(), a, b, eps) for a, b in zip(keys, keys[1:])):
                problems.append((case, "threshold"))
            sub = list(rdp_simplify(Trajectory.from_states(pts[keys]), SimplifyParams(epsilon=eps)).indices)
            if sub != list(range(len(keys))):
                problems.append((case, "idempotence"))
            for c in (0.5, 4.0, 3.7):
                if list(rdp_simplify(Trajectory.from_states(pts * c), SimplifyParams(epsilon=eps)).indices) != keys:
                    problems.append((case, f"scale {c}"))
        if any(not set(b) <= set(a) for a, b in zip(sets, sets[1:])):
            problems.append((case, "monotone"))
        if len(pts) <= 30:
            oracle_checked += 1
            achievable = oracles.achievable_sets(pts.tolist())
            for target in range(2, len(pts) + 1):
                sel = select_keyframes_by_count(tr, target)
                want, hit = oracles.pick_closest(achievable, target)
                if list(sel.keys.indices) != want or sel.achieved != hit:
                    problems.append((case, f"count {target}"))
    elapsed = time.perf_counter() - t0
    ok = not problems and elapsed < 30
    report(1, ok, f"200 trajectories, {oracle_checked} checked against the exhaustive grid, "
                  f"{len(problems)} violations, {elapsed:.1f}s (< 30s)")
    assert not problems, problems[:10]
    assert elapsed < 30


# -- 2: exact reconstruction ---------------------------------------------------


def test_criterion_2_exact_reconstruction(report):
    t0 = time.perf_counter()
    exact = positive_err = 0
    ma_ssim, un_ssim = [], []
    for i in range(50):
        ep = sw.simulate_task(sw.suite_script("segments", i, 2))
        k = len(ep.meta["breakpoints"])
        ma = PipelineConfig(name="ma", target_count=k, interpolator="pose_rerender")
        un = PipelineConfig(name="un", target_count=k, selection="uniform", interpolator="pose_rerender")
        rm, ru = run_episode(ma, ep), run_episode(un, ep, count=len(run_episode(ma, ep).keys))
        truth = list(ep.frames)
        s_ma = ssim(rm.frames, truth)
        if rm.frames == truth and psnr(rm.frames, truth) == math.inf and s_ma == 1.0:
            exact += 1
        ma_ssim.append(s_ma)
        un_ssim.append(ssim(ru.frames, truth))
        positive_err += pose_error(ru, ep) > 0
    elapsed = time.perf_counter() - t0
    ok = exact == 50 and positive_err >= 0.95 * 50 and np.mean(un_ssim) < np.mean(ma_ssim) and elapsed < 120
    report(2, ok, f"bit-exact {exact}/50, uniform pose error > 0 on {positive_err}/50, "
                  f"mean SSIM {np.mean(ma_ssim):.4f} vs uniform {np.mean(un_ssim):.4f}, {elapsed:.1f}s (< 120s)")
    assert exact == 50
    assert positive_err >= 48
    assert np.mean(un_ssim) < np.mean(ma_ssim)
    assert elapsed < 120


# -- 3: gap estimator ----------------------------------------------------------

PIXEL_ENCODER = FrameEncoder("pixel_pool", 16)
PIXEL_LAMBDA = 10.0


def _pairs(episodes):
    out = []
    for ep in episodes:
        k = len(ep.meta["breakpoints"])
        idx = select_keyframes_by_count(ep.trajectory, k, SimplifyParams(standardize=True)).keys.indices
        for a, b in zip(idx, idx[1:]):
            out.append(GapSample(float(b - a - 1), ep.frames[a], ep.frames[b], ep.trajectory.states[a], ep.trajectory.states[b]))
    return out


def test_criterion_3_gap_estimator(report):
    t0 = time.perf_counter()
    episodes = [sw.simulate_task(sw.suite_script("constant-velocity", i, 0)) for i in range(200)]
    train, test = _pairs(episodes[:150]), _pairs(episodes[150:])
    truth = [s.gap for s in test]

    pose_model = train_gap_estimator(train, FrameEncoder("pose_passthrough"), 1e-3)
    pose_rmse = gap_rmse([predict_gap(pose_model, None, None, s.pose_a, s.pose_b) for s in test], truth)
    pix_model = train_gap_estimator(train, PIXEL_ENCODER, PIXEL_LAMBDA)
    pix_rmse = gap_rmse([predict_gap(pix_model, s.frame_a, s.frame_b) for s in test], truth)

    rng = np.random.default_rng(3)
    sums_ok = True
    for _ in range(2000):
        m = int(rng.integers(1, 40))
        last = m + int(rng.integers(0, 200))
        raw = rng.normal(5, 6, m) * rng.integers(0, 2, m)
        g = normalize_gaps(raw, last, None if rng.random() < 0.5 else int(rng.integers(0, 30)))
        sums_ok &= bool(g.sum() == last - m and np.all(g >= 0))
    elapsed = time.perf_counter() - t0
    ok = pose_rmse <= 1.0 and pix_rmse <= 2.5 and sums_ok and elapsed < 60
    report(3, ok, f"{len(train)}/{len(test)} train/test pairs, pose RMSE {pose_rmse:.3f} (<= 1.0), "
                  f"pixel RMSE {pix_rmse:.3f} (<= 2.5; gap std {np.std(truth):.2f}), exact sums {sums_ok}, "
                  f"{elapsed:.1f}s (< 60s)")
    assert pose_rmse <= 1.0
    assert pix_rmse <= 2.5
    assert sums_ok
    assert elapsed < 60


# -- 4: metric oracles ---------------------------------------------------------


def test_criterion_4_metric_oracles(report):
    a = Frame(np.full((64, 64), 100, dtype=np.uint8))
    b = Frame(np.full((64, 64), 110, dtype=np.uint8))
    p = psnr(a, b)
    tex = Frame(np.random.default_rng(0).integers(0, 256, size=(64, 64)).astype(np.uint8))
    s_same = ssim(tex, tex)
    s_ext = ssim(Frame(np.zeros((64, 64), dtype=np.uint8)), Frame(np.full((64, 64), 255, dtype=np.uint8)))
    want_ext = C1 / (255**2 + C1)
    rng = np.random.default_rng(4)
    mismatches = 0
    for _ in range(100):
        # dyadic values keep every partial sum exact, so equality is meaningful
        s = rng.integers(-4096, 4096, size=(int(rng.integers(2, 120)), int(rng.integers(1, 9)))) / 64.0
        mismatches += trajectory_complexity(s) != oracles.complexity(s.tolist())
    ok = abs(p - 28.13) <= 0.01 and s_same == 1.0 and abs(s_ext - want_ext) <= 1e-6 and mismatches == 0
    report(4, ok, f"PSNR {p:.4f} dB, SSIM(a,a) {s_same!r}, SSIM(0,255) {s_ext:.3e} vs {want_ext:.3e}, "
                  f"complexity mismatches {mismatches}/100")
    assert abs(p - 28.13) <= 0.01
    assert s_same == 1.0
    assert abs(s_ext - want_ext) <= 1e-6
    assert mismatches == 0


# -- 5: cost model and benchmark -----------------------------------------------


def test_criterion_5_cost_and_benchmark(report):
    t0 = time.perf_counter()
    analytic = cost_model(84, 17, 1.0).acceleration
    table = CostReport.from_stages(160.40, 0.35, 11.97, 1001.54)

    ep = sw.simulate_task(sw.suite_script("segments", 0, 0))
    cfg = PipelineConfig(selection="uniform", generator=KeyFrameGenerator(simulated_cost_per_frame=0.1))
    measured = benchmark_pipeline(cfg, [ep], repeats=3, warmup=1).aggregate
    predicted = cost_model(ep.last_index, density_to_count(0.2, len(ep)), 0.1)
    timing_err = abs(measured.total_seconds - predicted.total_seconds) / predicted.total_seconds

    dense = sw.simulate_task(sw.random_script(np.random.default_rng(3), sw.ArmSpec(), 40, 80, 0.4, name="dense"))
    accel = []
    for d in (0.1, 0.2, 0.4):
        c = PipelineConfig(keyframe_density=d, generator=KeyFrameGenerator(simulated_cost_per_frame=0.1))
        accel.append(benchmark_pipeline(c, [dense], repeats=3, warmup=1).aggregate.acceleration)
    decreasing = accel[0] > accel[1] > accel[2]
    elapsed = time.perf_counter() - t0
    ok = (analytic == 5.0 and abs(table.acceleration - 5.80) <= 0.01 and table.keyframe_share > 0.9
          and timing_err <= 0.1 and decreasing and elapsed < 180)
    report(5, ok, f"analytic {analytic}, table replay {table.acceleration:.3f}x with keyframe share "
                  f"{table.keyframe_share:.1%}, measured total {measured.total_seconds:.3f}s vs predicted "
                  f"{predicted.total_seconds:.3f}s ({timing_err:.1%}), acceleration over 0.1/0.2/0.4 "
                  f"{', '.join(f'{a:.2f}' for a in accel)}, {elapsed:.1f}s (< 180s)")
    assert analytic == 5.0
    assert abs(table.acceleration - 5.80) <= 0.01 and table.keyframe_share > 0.9
    assert timing_err <= 0.1
    assert decreasing
    assert elapsed < 180


# -- 6: determinism ------------------------------------------------------------

TIMING_KEYS = {"keygen_s", "gap_s", "interp_s", "total_s", "baseline_s", "acceleration"}


def _strip_timing(obj):
    if isinstance(obj, dict):
        return {k: _strip_timing(v) for k, v in obj.items() if k not in TIMING_KEYS}
    if isinstance(obj, list):
        return [_strip_timing(v) for v in obj]
    return obj


def test_criterion_6_determinism(report):
    episodes = [sw.simulate_task(sw.suite_script("mixed", i, 9)) for i in range(8)]
    train = _pairs([sw.simulate_task(sw.suite_script("constant-velocity", i, 1)) for i in range(20)])
    model = train_gap_estimator(train, FrameEncoder("pixel_pool", 8), 1e-2)
    gen = KeyFrameGenerator("noisy_oracle", 5.0, seed=13)
    ma = PipelineConfig(name="ma", generator=gen)
    cfgs = [
        ma,
        PipelineConfig(name="ma-pred", generator=gen, gap_source="predicted"),
        PipelineConfig(name="un", selection="uniform", generator=gen),
        frame_to_frame(ma),
    ]
    first = compare(cfgs, episodes, "mixed", model, jobs=1, keep_videos=True)
    second = compare(cfgs, episodes, "mixed", model, jobs=2, keep_videos=True)
    same_videos = first.videos.keys() == second.videos.keys() and all(
        b"".join(f.pixels.tobytes() for f in first.videos[k]) == b"".join(f.pixels.tobytes() for f in second.videos[k])
        for k in first.videos
    )
    same_numbers = _strip_timing(first.to_json()) == _strip_timing(second.to_json())
    ok = same_videos and same_numbers and not first.failures
    report(6, ok, f"{len(first.videos)} videos byte-identical: {same_videos}, non-timing report fields identical: {same_numbers}")
    assert not first.failures
    assert same_videos
    assert same_numbers


# -- 7: complexity-stratified gain ---------------------------------------------


def _tercile_gains(seed):
    episodes = [sw.simulate_task(sw.suite_script("mixed", i, seed)) for i in range(100)]
    gen = KeyFrameGenerator("noisy_oracle", 5.0, seed=seed)
    cfgs = [PipelineConfig(name="ma", generator=gen), PipelineConfig(name="un", selection="uniform", generator=gen)]
    rep = compare(cfgs, episodes, "mixed", jobs=default_jobs())
    rows = {}
    for r in rep.episodes:
        rows.setdefault(r.episode, {})[r.model] = r
    eps = sorted(rows.values(), key=lambda v: v["ma"].complexity)
    gains = np.array([v["ma"].ssim - v["un"].ssim for v in eps])
    bottom, _, top = np.array_split(gains, 3)
    return float(bottom.mean()), float(top.mean())


def test_criterion_7_complexity_stratified(report):
    results = {seed: _tercile_gains(seed) for seed in (0, 1, 2)}
    ok = all(top > bottom for bottom, top in results.values())
    detail = "; ".join(f"seed {s}: bottom {b:+.4f}, top {t:+.4f}" for s, (b, t) in results.items())
    report(7, ok, f"mean SSIM gain of motion-aware over uniform by complexity tercile ({detail})")
    for bottom, top in results.values():
        assert top > bottom


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
