"""Acceptance criteria 1-9; each check prints one PASS/FAIL line."""

import json
import time

import numpy as np
import pytest

from helpers import ACCEPTANCE, checksum, eight_slab_set, landmark_set, run_smoke, write_config
from oracles import brute_force_hull, dense_grid_best_f1, random_sparse_mask, segments_closed
from pehop.augment import AugmentSpec, compose, draw_params
from pehop.autodiff.tensor import Tensor, no_grad
from pehop.decision import (
    Metrics,
    ProbabilitySeries,
    VotingParams,
    compute_metrics,
    tune_thresholds,
    vote,
)
from pehop.hopnet import (
    Aggregator,
    ArchConfig,
    HopPipeline,
    LandmarkHead,
    LandmarkModel,
    TapEncoder,
    TrainConfig,
    aggregate,
    decode_landmarks,
    encode_landmarks,
    hop_loss,
    pretrain_landmarks,
    train_hop,
)
from pehop.roi import OrganMask, convex_hull_slice, crop_ratio_stats, crop_study
from pehop.synth import SyntheticStudySpec, analytic_crop_ratio, generate_study, philox
from pehop.verify import NETWORK_TOLERANCE, OP_TOLERANCE, run_suite
from pehop.volume import apply_windows


def verdict(n, what, ok, detail=""):
    line = f"{'PASS' if ok else 'FAIL'} [{n}] {what}" + (f" ({detail})" if detail else "")
    ACCEPTANCE.append(line)
    print(line)
    assert ok, line


def metrics_from(ppv, sens, scale=10**6):
    """Integer confusion counts realising (ppv, sens) exactly."""
    tp = round(ppv * sens * scale)
    fn = round(ppv * (1 - sens) * scale)
    fp = round((1 - ppv) * sens * scale)
    m = Metrics(tp=tp, fp=fp, fn=fn, tn=0)
    assert m.ppv == pytest.approx(ppv, abs=1e-12) and m.sensitivity == pytest.approx(sens, abs=1e-12)
    return m


# ---------------------------------------------------------------- 1 metrics

@pytest.mark.parametrize("table,ppv,sens,f1", [
    ("hop-2 table", 0.891, 0.929, 0.910),
    ("ablation table", 0.796, 0.927, 0.860),
])
def test_1_metric_arithmetic(table, ppv, sens, f1):
    m = metrics_from(ppv, sens)
    preds = [True] * (m.tp + m.fp) + [False] * m.fn
    labels = [True] * m.tp + [False] * m.fp + [True] * m.fn
    got = compute_metrics(preds, labels).f1
    verdict(1, f"F1 from ppv {ppv}, sens {sens} within 0.001 of {f1} ({table})",
            abs(got - f1) <= 0.001, f"computed {got:.5f}")


# ---------------------------------------------------------------- 2 gradients

def test_2_gradient_correctness():
    t0 = time.perf_counter()
    rep = run_suite(range(20))
    elapsed = time.perf_counter() - t0
    worst_op = max(rep["ops"], key=rep["ops"].get)
    verdict(2, f"per-op relative error < {OP_TOLERANCE:g} over 20 seeds, {len(rep['ops'])} ops",
            rep["ops_pass"], f"worst {worst_op} {rep['ops'][worst_op]:.2e}")
    verdict(2, f"two-hop network relative error < {NETWORK_TOLERANCE:g} over 20 seeds",
            rep["network_pass"], f"worst {rep['network']:.2e}")
    verdict(2, "gradient suite under 2 minutes", elapsed < 120, f"{elapsed:.1f} s")


# ---------------------------------------------------------------- 3 hull

def test_3_hull_properties():
    rng = np.random.default_rng(3)
    t0 = time.perf_counter()
    bad = {"oracle": 0, "contains": 0, "idempotent": 0, "convex": 0}
    for _ in range(1000):
        m = random_sparse_mask(rng, max_side=32, max_points=12)
        h = convex_hull_slice(m)
        bad["oracle"] += not np.array_equal(h, brute_force_hull(m))
        bad["contains"] += not np.all(h[m])
        bad["idempotent"] += not np.array_equal(convex_hull_slice(h), h)
        bad["convex"] += not segments_closed(h, rng, n_pairs=100)
    elapsed = time.perf_counter() - t0
    verdict(3, "1000 random masks: convex, contains input, idempotent, matches O(n^3) oracle",
            not any(bad.values()) and elapsed < 60, f"failures {bad}, {elapsed:.1f} s")


# ---------------------------------------------------------------- 4 voting

def test_4_tuning_optimal():
    rng = np.random.default_rng(4)
    mismatches = 0
    for _ in range(50):
        labels = rng.random(20) < 0.5
        labels[:2] = True, False
        val = []
        for i, y in enumerate(labels):
            rho = rng.beta(2, 5, size=int(rng.integers(3, 30)))
            if y:
                k = int(rng.integers(0, len(rho) + 1))
                rho[:k] = rng.beta(5, 2, size=k)
            val.append((ProbabilitySeries(f"s{i}", np.round(rho, 2)), bool(y)))
        _, f1 = tune_thresholds(val)
        dense = dense_grid_best_f1([s.rho for s, _ in val], labels)
        mismatches += abs(f1 - dense) > 1e-12
    verdict(4, "tuning equals dense-grid search on 50 validation sets", mismatches == 0,
            f"{mismatches} mismatches")


def test_4_vote_monotone():
    rng = np.random.default_rng(44)
    flips = 0
    for _ in range(10_000):
        rho = rng.random(int(rng.integers(1, 20)))
        p = VotingParams(float(rng.uniform(0.05, 0.95)), int(rng.integers(1, 8)))
        before = vote(rho, p)
        kind = rng.integers(3)
        if kind == 0:
            i = int(rng.integers(len(rho)))
            rho = rho.copy()
            rho[i] = rng.uniform(rho[i], 1.0)
        elif kind == 1:
            p = VotingParams(float(rng.uniform(0.001, p.delta)), p.mu)
        else:
            p = VotingParams(p.delta, int(rng.integers(1, p.mu + 1)))
        flips += before and not vote(rho, p)
    verdict(4, "vote monotone under 10^4 perturbations", flips == 0, f"{flips} flips")


# ---------------------------------------------------------------- 5 + 6 hops

@pytest.fixture(scope="module")
def hopped():
    x, y = eight_slab_set()
    p = HopPipeline(ArchConfig(hops=2))
    trace1 = train_hop(p, x, y, TrainConfig(steps=500, batch_size=8, lr=0.05), 1)
    hop1_loss = hop_loss(p, x, y, 1, training_mode=True)
    before = checksum(p.encoders[0])
    train_hop(p, x, y, TrainConfig(steps=200, batch_size=8, lr=0.05, seed=1), 2)
    return {"p": p, "trace1": trace1, "hop1_loss": hop1_loss, "before": before,
            "hop2_loss": hop_loss(p, x, y, 2, training_mode=True)}


def test_5_aggregator_shapes():
    rng = np.random.default_rng(5)
    shapes = []
    for size in (64, 128, 192):
        enc, agg = TapEncoder(rng=rng).eval(), Aggregator(rng=rng).eval()
        x = rng.random((9, size, size)).astype(np.float32)
        with no_grad():
            shapes.append(aggregate(agg, enc(Tensor(x))[1], x).shape)
    verdict(5, "aggregator output (9, H, W) for H = W in 64, 128, 192",
            shapes == [(9, s, s) for s in (64, 128, 192)], str(shapes))
    ch = HopPipeline(ArchConfig(hops=2)).encoders[1].first_conv.weight.shape[1]
    verdict(5, "hop-2 first layer takes 18 channels", ch == 18, f"{ch}")


def test_5_freeze(hopped):
    after = checksum(hopped["p"].encoders[0])
    same = all(np.array_equal(after[k], v) for k, v in hopped["before"].items())
    verdict(5, "hop-1 parameters bit-identical through hop-2 training", same)


def test_6_overfit(hopped):
    trace = np.array(hopped["trace1"])
    below = np.nonzero(trace < 0.1)[0]
    verdict(6, "hop-1 cross-entropy < 0.1 within 500 steps", below.size > 0,
            f"first at step {below[0] if below.size else None}, final {trace[-1]:.2e}")
    verdict(6, "hop-2 converged training loss <= hop-1",
            hopped["hop2_loss"] <= hopped["hop1_loss"],
            f"hop 1 {hopped['hop1_loss']:.3e}, hop 2 {hopped['hop2_loss']:.3e}")


def test_6_landmark_pretraining():
    xs, targets, masks = landmark_set(n_studies=4)
    rng = np.random.default_rng(6)
    model = LandmarkModel(TapEncoder(rng=rng), LandmarkHead(64, 6, rng))
    trace = pretrain_landmarks(model, xs, targets, masks,
                               TrainConfig(steps=300, batch_size=4, lr=0.05))
    # one batch is the whole 4-study set, so the last trace entry is its MSE
    verdict(6, "landmark pretraining MSE < 1e-3 on 4 studies", trace[-1] < 1e-3,
            f"{trace[-1]:.2e}")


# ---------------------------------------------------------------- 7 crop ratio

def test_7_crop_ratio():
    spec = SyntheticStudySpec()
    crops, worst = [], 0.0
    for i in range(12):
        s = generate_study(spec, philox(70, f"study:{i}"), f"s{i}", positive=False)
        c = crop_study(apply_windows(s["volume"]), OrganMask(s["lung"]), OrganMask(s["heart"]),
                       (64, 64))
        worst = max(worst, abs(c.crop_ratio - analytic_crop_ratio(s["layout"], spec.dims)))
        crops.append(c)
    verdict(7, "ellipsoid studies reproduce analytic crop ratios within 1e-6", worst <= 1e-6,
            f"worst {worst:.1e}")
    stats = crop_ratio_stats(crops)
    verdict(7, "crop report carries mean, min, max", {"mean", "min", "max"} <= set(stats),
            f"mean {stats['mean']:.3f}")


# ---------------------------------------------------------------- 8 determinism

def test_8_smoke_determinism(tmp_path):
    cfg = write_config(tmp_path / "cfg.json", n_studies=20,
                       synth={"dims": [24, 96, 96], "n_empty_masks": 1},
                       train={"steps": 40, "batch_size": 16},
                       pretrain={"steps": 20, "batch_size": 16})
    runs, elapsed = [], []
    for name in ("a", "b"):
        t0 = time.perf_counter()
        run_smoke(tmp_path / name, cfg)
        elapsed.append(time.perf_counter() - t0)
        d = tmp_path / name
        runs.append({p.relative_to(d): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()})
    differing = sorted(str(k) for k in runs[0] if runs[0][k] != runs[1].get(k))
    verdict(8, "two smoke runs give bit-identical artifacts",
            runs[0].keys() == runs[1].keys() and not differing, f"{len(runs[0])} files")
    report = json.loads((tmp_path / "a" / "report.json").read_text())
    verdict(8, "20-study smoke path under 15 minutes", max(elapsed) < 900 and "metrics" in report,
            f"{max(elapsed):.0f} s")


def test_8_augmentation():
    spec = AugmentSpec()
    shape = (9, 64, 64)
    cut_bound = int(0.4 * 64)
    out_of_bounds = 0
    for seed in range(1000):
        d = draw_params(spec, shape, seed)
        dx, dy, scale, theta = d.affine
        out_of_bounds += not (abs(dx) <= spec.shift_limit and abs(dy) <= spec.shift_limit
                              and abs(scale) <= spec.scale_limit
                              and abs(theta) <= spec.rotate_limit_deg
                              and abs(d.alpha) <= spec.contrast_limit
                              and all(1 <= hh <= cut_bound and 1 <= ww <= cut_bound
                                      for _, _, hh, ww in d.holes))
    verdict(8, "1000 augmentation draws respect shift/scale/rotate/contrast/cutout bounds",
            out_of_bounds == 0, f"{out_of_bounds} out of bounds")
    rng = np.random.default_rng(8)
    s = rng.random(shape)
    same = all(np.array_equal(compose(spec, s, k), compose(spec, s, k)) for k in range(20))
    verdict(8, "augmentations reproducible per seed", same)


# ---------------------------------------------------------------- 9 landmarks

def test_9_landmark_encoding():
    rng = np.random.default_rng(9)
    dims = (1500, 64, 64)
    worst = 0.0
    for _ in range(500):
        center = float(rng.integers(600, 900))
        raw = np.stack([rng.uniform(0, 64, 6), rng.uniform(0, 64, 6),
                        center + rng.uniform(-600, 600, 6)], axis=1)
        back = decode_landmarks(encode_landmarks(raw, center, dims), center, dims)
        worst = max(worst, float(np.abs(back - raw).max()))
    verdict(9, "encode/decode round trip within 1e-9", worst <= 1e-9, f"worst {worst:.1e}")
    z = encode_landmarks([[0.0, 0.0, 130.0]], 100, (400, 64, 64)).values[0, 2]
    verdict(9, "30 slices above center encode to 30/600 relative (0.525)",
            abs(z - 0.525) < 1e-12 and abs((z - 0.5) * 2 - 0.05) < 1e-12, f"{z}")
