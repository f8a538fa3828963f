"""Acceptance criteria, one test per criterion.

Each test appends a single PASS/FAIL line to ``RESULTS`` (echoed at the end
of the pytest run) and then asserts, so a failing criterion stays red.
Run with ``pytest tests/test_acceptance.py -s`` to also see lines inline.
"""

import math
import time
from dataclasses import replace

import numpy as np
import pytest

from viewgroup import EmbeddingBatch, VglConfig, similarity_matrix, vgl_anchor, vgl_batch, vgl_grad_embeddings
from viewgroup import kernels
from viewgroup.analysis import gradient_gap_curve, total_variation
from viewgroup.augment import build_enlarged_batch
from viewgroup.checkpoint import load_checkpoint
from viewgroup.data import SynthConfig, generate_synthetic_dataset
from viewgroup.encoder import init_params
from viewgroup.errors import InvalidN
from viewgroup.evaluation import view_retrieval
from viewgroup.gradcheck import check_embedding_gradients, check_encoder_gradients, check_sim_gradients, random_batch
from viewgroup.pretrain import _INIT, PretrainConfig, derive_seed, pretrain_run, run_ablation

RESULTS = []


def _record(number, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {number}. {title}: {detail}"
    RESULTS.append(line)
    print(line)
    return ok


def _sigma(x, tau):
    return 1.0 / (1.0 + math.exp(-x / tau))


def _oracle(pos, neg, tau):
    """Per-anchor loss written out from the definition with plain loops."""
    fractions = []
    for i, ci in enumerate(pos):
        gamma = 1.0 / sum(_sigma(cj - ci, tau) for j, cj in enumerate(pos) if j != i)
        fractions.append(1.0 / (gamma * sum(_sigma(cj - ci, tau) for cj in neg) + 1.0))
    return 1.0 - sum(fractions) / len(fractions)


# -- 1 --------------------------------------------------------------------------


def test_criterion_1_worked_value():
    oracle = _oracle([0.9, 0.5], [0.1], 0.2)
    row = np.array([1.0, 0.9, 0.5, 0.1])
    groups = np.array([0, 0, 0, 1])
    scalar = vgl_anchor(0, row, groups, VglConfig(0.2, True))
    kernel = kernels.anchor_numpy(row, np.array([1, 2]), np.array([3]), 0.2, True, 1.0, False)[0]
    ok = abs(scalar - 0.12515) <= 1e-4 and abs(scalar - oracle) <= 1e-12 and abs(kernel - oracle) <= 1e-12
    _record(1, "worked value", ok, f"vgl_anchor={scalar:.10f} kernel={kernel:.10f} oracle={oracle:.10f} target 0.12515 +- 1e-4")
    assert ok


# -- 2 --------------------------------------------------------------------------


def test_criterion_2_gradient_suite():
    start = time.perf_counter()
    checks = [
        check_sim_gradients(n_instances=100, seed=101),
        check_embedding_gradients(n_instances=100, seed=102),
        check_encoder_gradients(np.float32, n_instances=100, seed=103),
    ]
    elapsed = time.perf_counter() - start
    ok = all(c.passed for c in checks) and elapsed < 30.0
    detail = "; ".join(f"{c.name} {c.max_rel_error:.2e} < {c.tolerance:g}" for c in checks)
    _record(2, "gradient suite", ok, f"{detail}; {elapsed:.1f}s (< 30s)")
    assert ok


# -- 3 --------------------------------------------------------------------------


def _equal_similarity_error(P, M):
    row = np.full(1 + P + M, 0.42)
    row[0] = 1.0
    groups = np.array([0] * (1 + P) + [1] * M)
    cfg = VglConfig(0.2, True)
    return max(
        abs(vgl_anchor(0, row, groups, cfg) - M / (M + P - 1)),
        abs(kernels.anchor_numpy(row, np.arange(1, P + 1), np.arange(P + 1, P + M + 1), 0.2, True, 1.0, False)[0] - M / (M + P - 1)),
    )


def test_criterion_3_invariant_suite():
    start = time.perf_counter()
    rng = np.random.default_rng(303)
    taus = [0.05, 0.1, 0.2, 0.5, 1.0]
    worst = {"range": 0, "perm": 0.0, "scale": 0.0, "monotone": 0, "orth": 0.0}
    for _ in range(200):
        batch = random_batch(rng, num_groups=int(rng.integers(2, 6)), views=int(rng.integers(2, 5)))
        cfg = VglConfig(float(rng.choice(taus)), bool(rng.integers(2)))
        out = vgl_batch(batch, cfg, with_grad=True)
        worst["range"] += int(np.sum((out.per_anchor < 0) | (out.per_anchor >= 1)))

        perm = rng.permutation(len(batch))
        shuffled = vgl_batch(EmbeddingBatch(batch.vectors[perm], batch.groups[perm]), cfg).total
        worst["perm"] = max(worst["perm"], abs(shuffled - out.total))

        scales = np.exp(rng.uniform(-4, 4, size=(len(batch), 1)))
        scaled = vgl_batch(EmbeddingBatch(batch.vectors * scales, batch.groups), cfg).total
        worst["scale"] = max(worst["scale"], abs(scaled - out.total))

        grad = vgl_grad_embeddings(EmbeddingBatch(batch.vectors * scales, batch.groups), cfg)
        worst["orth"] = max(worst["orth"], float(np.max(np.abs(np.sum(grad * batch.vectors * scales, axis=1)))))

        sims = similarity_matrix(batch)
        q = int(rng.integers(len(batch)))
        negs = np.flatnonzero(batch.groups != batch.groups[q])
        j = int(rng.choice(negs))
        raised = sims[q].copy()
        raised[j] += float(rng.uniform(1e-3, 0.5))
        if not vgl_anchor(q, raised, batch.groups, cfg) > vgl_anchor(q, sims[q], batch.groups, cfg):
            worst["monotone"] += 1
    closed = max(_equal_similarity_error(P, M) for P, M in [(2, 2), (3, 5), (19, 304)])
    elapsed = time.perf_counter() - start
    ok = (
        worst["range"] == 0
        and worst["perm"] <= 1e-10
        and worst["scale"] <= 1e-6
        and worst["monotone"] == 0
        and worst["orth"] <= 1e-8
        and closed <= 1e-12
        and elapsed < 10.0
    )
    detail = (
        f"range violations {worst['range']}, perm {worst['perm']:.1e} (<=1e-10), scale {worst['scale']:.1e} (<=1e-6), "
        f"monotonicity violations {worst['monotone']}, orthogonality {worst['orth']:.1e} (<=1e-8), "
        f"closed form {closed:.1e} (<=1e-12), {elapsed:.1f}s"
    )
    _record(3, "invariant suite", ok, detail)
    assert ok


# -- 4 --------------------------------------------------------------------------


def test_criterion_4_attention_gradient_gap():
    on = [d for _, d in gradient_gap_curve(0.2, True, base=0.9)]
    off = [d for _, d in gradient_gap_curve(0.2, False, base=0.9)]
    positive = all(d > 0 for d in on)
    nondecreasing = all(b >= a for a, b in zip(on, on[1:]))
    tv_on, tv_off = total_variation(on), total_variation(off)
    ok = positive and nondecreasing and tv_off < tv_on
    detail = (
        f"attention on: min {min(on):+.4f} ({sum(d <= 0 for d in on)}/30 non-positive), "
        f"{'nondecreasing' if nondecreasing else 'not nondecreasing'}; TV on {tv_on:.4f} vs off {tv_off:.4f}"
    )
    _record(4, "attention gradient-gap curve", ok, detail)
    assert ok


# -- 5 --------------------------------------------------------------------------


def test_criterion_5_temperature_decay():
    sharp = [d for _, d in gradient_gap_curve(0.01, True)]
    smooth = [d for _, d in gradient_gap_curve(0.2, True)]
    peak = int(np.argmax(smooth))
    interior = 0 < peak < len(smooth) - 1 and smooth[-1] < smooth[peak]
    ok = sharp[-1] < max(sharp) and not interior
    detail = (
        f"tau=0.01 last {sharp[-1]:.3e} < max {max(sharp):.3f}; "
        f"tau=0.2 argmax at index {peak}/{len(smooth) - 1} ({'interior' if interior else 'no interior max'})"
    )
    _record(5, "small-tau gradient decay", ok, detail)
    assert ok


# -- 6 --------------------------------------------------------------------------


@pytest.fixture(scope="module")
def desk_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    train = generate_synthetic_dataset(SynthConfig(num_sources=200, num_classes=3, image_size=32, seed=1), root / "train")
    held = generate_synthetic_dataset(SynthConfig(num_sources=40, num_classes=3, image_size=32, seed=999), root / "held")
    return root, train, held


@pytest.mark.slow
def test_criterion_6_desk_training(desk_data):
    root, train, held = desk_data
    cfg = PretrainConfig.desk(seed=0, checkpoint_path=str(root / "desk.grvs"), metrics_path=str(root / "desk.csv"))
    assert (cfg.batch_size, cfg.n_aug, cfg.tau, cfg.epochs) == (8, 6, 0.2, 50)
    start = time.perf_counter()
    result = pretrain_run(cfg, manifest=train)
    elapsed = time.perf_counter() - start
    losses = result.metrics.losses
    ratio = losses[-1] / losses[0]
    held_images = held.load_images()
    trained = view_retrieval(result.params, held_images, cfg.n_aug, cfg.augmentation, seed=12345)
    untrained_params = init_params(derive_seed(cfg.seed, _INIT), cfg.channels, cfg.hidden, cfg.out_dim)
    untrained = view_retrieval(untrained_params, held_images, cfg.n_aug, cfg.augmentation, seed=12345)
    a = ratio < 0.5
    b = trained.precision_at_k >= 3 * trained.chance_level
    c = trained.precision_at_k - untrained.precision_at_k >= 0.15
    ok = a and b and c and elapsed < 900
    detail = (
        f"(a) loss {losses[0]:.3f} -> {losses[-1]:.3f}, ratio {ratio:.3f} < 0.5; "
        f"(b) p@1 {trained.precision_at_k:.3f} >= 3 x chance {trained.chance_level:.4f}; "
        f"(c) gain over random init {trained.precision_at_k - untrained.precision_at_k:+.3f} >= 0.15; {elapsed:.0f}s"
    )
    _record(6, "desk-scale training", ok, detail)
    assert ok


# -- 7 --------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_7_ablation_harness(desk_data, tmp_path):
    root, train, _ = desk_data
    # harness parity only: short runs on a 16-source subset
    images = train.load_images()[:16]
    base = PretrainConfig.desk(epochs=1)
    reports = run_ablation(base, tmp_path, images=images)
    seen = {
        "N": sorted({r["n_aug"] for r in reports}),
        "B": sorted({r["batch_size"] for r in reports}),
        "tau": sorted({r["tau"] for r in reports}),
        "attention": sorted({r["attention"] for r in reports}),
    }
    emitted = 0
    for r in reports:
        lines = open(r["metrics"]).read().splitlines()
        params, state = load_checkpoint(r["checkpoint"])
        emitted += int(len(lines) == 2 and lines[0] == "epoch,loss,lr,seconds" and state is not None and bool(params))
    rejected = []
    for attempt in (lambda: PretrainConfig.desk(n_aug=1), lambda: build_enlarged_batch(images[:2], 1, base.augmentation, 0)):
        try:
            attempt()
        except InvalidN:
            rejected.append(True)
    ok = (
        {0, 2, 10, 20} <= set(seen["N"])
        and {4, 8, 16} <= set(seen["B"])
        and {0.01, 0.1, 0.2, 0.5, 1.0} <= set(seen["tau"])
        and seen["attention"] == [False, True]
        and emitted == len(reports)
        and len(rejected) == 2
    )
    detail = f"{len(reports)} runs, {emitted} with metrics+checkpoint; N {seen['N']}, B {seen['B']}, tau {seen['tau']}, attention on/off; N=1 rejected {len(rejected)}/2"
    _record(7, "ablation harness", ok, detail)
    assert ok


# -- 8 --------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_8_determinism(desk_data, tmp_path):
    _, train, _ = desk_data
    images = train.load_images()[:48]
    base = PretrainConfig.desk(epochs=3, seed=8)
    blobs = []
    for tag in ("first", "second"):
        cfg = replace(base, checkpoint_path=str(tmp_path / f"{tag}.grvs"), metrics_path=str(tmp_path / f"{tag}.csv"))
        pretrain_run(cfg, images=images)
        blobs.append((open(cfg.checkpoint_path, "rb").read(), open(cfg.metrics_path, "rb").read()))
    same_ckpt = blobs[0][0] == blobs[1][0]
    same_csv = blobs[0][1] == blobs[1][1]
    ok = same_ckpt and same_csv
    _record(8, "determinism", ok, f"checkpoint {len(blobs[0][0])} bytes identical={same_ckpt}; metrics identical={same_csv}")
    assert ok
