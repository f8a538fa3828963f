"""Finite-difference checks of every closed-form gradient.

Relative error is measured per gradient vector as
``||analytic - numeric|| / max(||analytic||, ||numeric||)`` and the worst
case over all instances is reported.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import baselines, kernels
from .encoder import backward, cast_params, forward, init_params
from .vgl import EmbeddingBatch, VglConfig, similarity_matrix, vgl_anchor, vgl_batch

SIM_TOL = 1e-6
EMBED_TOL = 1e-5
BASELINE_TOL = 1e-5
ENCODER_TOL_32 = 1e-3
ENCODER_TOL_64 = 1e-5


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    tolerance: float
    instances: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: max rel err {self.max_rel_error:.3e} (tol {self.tolerance:g}, {self.instances} instances)"


def rel_error(a, b) -> float:
    a = np.ravel(a)
    b = np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


def random_batch(rng, num_groups=4, views=3, dim=8) -> EmbeddingBatch:
    return EmbeddingBatch(rng.standard_normal((num_groups * views, dim)), np.repeat(np.arange(num_groups), views))


def random_config(rng) -> VglConfig:
    return VglConfig(tau=float(rng.choice([0.1, 0.2, 0.5])), attention_enabled=bool(rng.integers(0, 2)))


def check_sim_gradients(n_instances=100, seed=0, h=1e-6) -> CheckResult:
    """Kernel ``dL_q/dc_qk`` against central differences of the scalar loss."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        batch = random_batch(rng)
        cfg = random_config(rng)
        sims = similarity_matrix(batch)
        _, grad = kernels.vgl_rows(sims, batch.groups, cfg.tau, cfg.attention_enabled, cfg.singleton_gamma)
        for q in range(len(batch)):
            numeric = np.zeros(len(batch))
            for k in range(len(batch)):
                if k == q:
                    continue
                up, down = sims[q].copy(), sims[q].copy()
                up[k] += h
                down[k] -= h
                numeric[k] = (vgl_anchor(q, up, batch.groups, cfg) - vgl_anchor(q, down, batch.groups, cfg)) / (2 * h)
            worst = max(worst, rel_error(grad[q], numeric))
    return CheckResult("vgl dL/dc", worst, SIM_TOL, n_instances)


def _numeric_embedding_grad(loss_fn, v, h):
    numeric = np.zeros_like(v)
    for idx in np.ndindex(v.shape):
        up, down = v.copy(), v.copy()
        up[idx] += h
        down[idx] -= h
        numeric[idx] = (loss_fn(up) - loss_fn(down)) / (2 * h)
    return numeric


def check_embedding_gradients(n_instances=100, seed=1, h=1e-6) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        batch = random_batch(rng)
        cfg = random_config(rng)
        analytic = vgl_batch(batch, cfg, with_grad=True).grad_embeddings
        numeric = _numeric_embedding_grad(lambda v: vgl_batch(EmbeddingBatch(v, batch.groups), cfg).total, batch.vectors, h)
        worst = max(worst, rel_error(analytic, numeric))
    return CheckResult("vgl dL/dv", worst, EMBED_TOL, n_instances)


def check_baseline_gradients(n_instances=20, seed=2, h=1e-6) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    nce_worst = 0.0
    trip_worst = 0.0
    for _ in range(n_instances):
        batch = random_batch(rng)
        cfg = baselines.NceConfig(float(rng.choice([0.1, 0.2, 0.5])))
        analytic = baselines.nce_batch(batch.vectors, batch.groups, cfg, with_grad=True).grad_embeddings
        numeric = _numeric_embedding_grad(lambda v: baselines.nce_batch(v, batch.groups, cfg).total, batch.vectors, h)
        nce_worst = max(nce_worst, rel_error(analytic, numeric))
        # large margin keeps every hinge active so the loss is smooth at the probe
        tcfg = baselines.TripletConfig(margin=5.0, distance=str(rng.choice(baselines.DISTANCES)))
        analytic = baselines.triplet_batch(batch.vectors, batch.groups, tcfg, with_grad=True).grad_embeddings
        numeric = _numeric_embedding_grad(lambda v: baselines.triplet_batch(v, batch.groups, tcfg).total, batch.vectors, h)
        trip_worst = max(trip_worst, rel_error(analytic, numeric))
    return [
        CheckResult("nce dL/dv", nce_worst, BASELINE_TOL, n_instances),
        CheckResult("triplet dL/dv", trip_worst, BASELINE_TOL, n_instances),
    ]


def _small_encoder(seed):
    return init_params(seed, channels=(3, 4, 8), hidden=16, out_dim=8, dtype=np.float64)


def _pipeline_loss(params, views, groups, cfg):
    z, _ = forward(params, views)
    return vgl_batch(EmbeddingBatch(z.astype(np.float64), groups), cfg).total


def check_encoder_gradients(dtype=np.float32, n_instances=20, probes=2, seed=3, h=1e-6) -> CheckResult:
    """Loss through the encoder: analytic backprop in ``dtype`` vs a float64 oracle.

    Each instance perturbs ``probes`` randomly chosen scalar parameters of a
    two-stage net on 8x8 inputs (4 groups x 3 views).
    """
    rng = np.random.default_rng(seed)
    cfg = VglConfig(0.2)
    worst = 0.0
    for _ in range(n_instances):
        params64 = _small_encoder(int(rng.integers(2**31)))
        views = rng.integers(0, 256, size=(12, 8, 8, 3), dtype=np.uint8)
        groups = np.repeat(np.arange(4), 3)
        params = cast_params(params64, dtype)
        z, cache = forward(params, views)
        out = vgl_batch(EmbeddingBatch(z.astype(np.float64), groups), cfg, with_grad=True)
        grads = backward(params, cache, out.grad_embeddings)
        # the oracle sees exactly the parameter values the checked path used
        oracle = cast_params(params, np.float64)
        names = list(oracle)
        analytic, numeric = [], []
        for _ in range(probes):
            name = names[int(rng.integers(len(names)))]
            idx = tuple(int(rng.integers(d)) for d in oracle[name].shape)
            saved = oracle[name][idx]
            oracle[name][idx] = saved + h
            up = _pipeline_loss(oracle, views, groups, cfg)
            oracle[name][idx] = saved - h
            down = _pipeline_loss(oracle, views, groups, cfg)
            oracle[name][idx] = saved
            analytic.append(float(grads[name][idx]))
            numeric.append((up - down) / (2 * h))
        worst = max(worst, rel_error(analytic, numeric))
    bits = np.dtype(dtype).itemsize * 8
    tol = ENCODER_TOL_32 if bits == 32 else ENCODER_TOL_64
    return CheckResult(f"encoder end-to-end ({bits}-bit)", worst, tol, n_instances)


def run_suite(seed: int = 0, n_instances: int = 100) -> list[CheckResult]:
    results = [
        check_sim_gradients(n_instances, seed),
        check_embedding_gradients(n_instances, seed + 1),
    ]
    results += check_baseline_gradients(max(1, n_instances // 5), seed + 2)
    results.append(check_encoder_gradients(np.float32, 20, seed=seed + 3))
    results.append(check_encoder_gradients(np.float64, 20, seed=seed + 4))
    return results
