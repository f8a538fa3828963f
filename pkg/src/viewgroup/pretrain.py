"""Pretraining loop: sample sources, augment N times, shuffle, embed, loss, update.

An epoch is one pass over the sources in a seeded random order, chunked into
batches of ``batch_size``; a trailing partial batch is dropped. The learning
rate follows a cosine schedule indexed by epoch.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import baselines
from .augment import AugmentationSpec, build_enlarged_batch, shuffle_batch
from .checkpoint import save_checkpoint
from .data import DatasetManifest, manifest_path
from .encoder import OptimizerState, backward, cosine_lr, forward, init_params, sgd_momentum_step
from .errors import ConfigError, DatasetTooSmall, InvalidN, IoFailure, NonFiniteLoss
from .vgl import EmbeddingBatch, LossOutput, VglConfig, vgl_batch

log = logging.getLogger(__name__)

LOSSES = ("vgl", "triplet", "nce")
METRICS_HEADER = ("epoch", "loss", "lr", "seconds")

# stream tags for seed derivation
_INIT, _ORDER, _AUGMENT, _SHUFFLE = range(4)


@dataclass(frozen=True)
class PretrainConfig:
    manifest: str = ""
    batch_size: int = 32
    n_aug: int = 20
    tau: float = 0.2
    attention: bool = True
    singleton_gamma: float = 1.0
    loss: str = "vgl"
    triplet_margin: float = 0.5
    triplet_distance: str = "one_minus_cosine"
    nce_temperature: float = 0.2
    epochs: int = 240
    base_lr: float = 1e-3
    lr_min: float = 0.0
    momentum: float = 0.9
    seed: int = 0
    augmentation: AugmentationSpec = field(default_factory=AugmentationSpec)
    channels: tuple[int, ...] = (3, 16, 32, 64)
    hidden: int = 128
    out_dim: int = 128
    checkpoint_path: str = "checkpoint.grvs"
    metrics_path: str = "metrics.csv"
    # wall-clock seconds make the metrics file irreproducible; off by default
    record_wall_clock: bool = False
    debug_checks: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.n_aug == 1 or self.n_aug < 0:
            raise InvalidN(f"N must be 0 or >= 2, got {self.n_aug}")
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        VglConfig(self.tau, self.attention, self.singleton_gamma)
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    @classmethod
    def paper(cls, **overrides) -> PretrainConfig:
        """Batch 32, N=20, tau=0.2, 240 epochs, lr 1e-3, momentum 0.9."""
        return cls(**overrides)

    @classmethod
    def desk(cls, **overrides) -> PretrainConfig:
        """CPU-scale preset: batch 8, N=6, 50 epochs."""
        base = dict(batch_size=8, n_aug=6, epochs=50, base_lr=1e-3)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_dict(cls, data: dict, base: PretrainConfig | None = None) -> PretrainConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        data = dict(data)
        if "augmentation" in data:
            data["augmentation"] = AugmentationSpec.from_dict(data["augmentation"])
        if "channels" in data:
            data["channels"] = tuple(int(c) for c in data["channels"])
        try:
            return replace(base, **data) if base is not None else cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path, base: PretrainConfig | None = None) -> PretrainConfig:
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise IoFailure(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data, base)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["augmentation"] = self.augmentation.to_dict()
        d["channels"] = list(self.channels)
        return d


@dataclass
class RunMetrics:
    rows: list[tuple[int, float, float, float]] = field(default_factory=list)

    @property
    def losses(self) -> list[float]:
        return [r[1] for r in self.rows]


@dataclass
class RunResult:
    params: dict
    state: OptimizerState
    metrics: RunMetrics


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


def derive_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([int(seed), *map(int, keys)]).generate_state(1)[0])


def compute_loss(embeddings, groups, cfg: PretrainConfig) -> LossOutput:
    """Selected loss with ``grad_embeddings`` populated (64-bit)."""
    z = np.asarray(embeddings, dtype=np.float64)
    if cfg.loss == "vgl":
        return vgl_batch(EmbeddingBatch(z, groups), VglConfig(cfg.tau, cfg.attention, cfg.singleton_gamma), with_grad=True)
    if cfg.loss == "nce":
        return baselines.nce_batch(z, groups, baselines.NceConfig(cfg.nce_temperature), with_grad=True)
    return baselines.triplet_batch(z, groups, baselines.TripletConfig(cfg.triplet_margin, cfg.triplet_distance), with_grad=True)


def check_group_integrity(groups, n_aug: int) -> None:
    expected = 2 if n_aug == 0 else n_aug
    _, counts = np.unique(groups, return_counts=True)
    if np.any(counts != expected):
        raise AssertionError(f"group multiplicities {sorted(set(counts.tolist()))}, expected {expected}")


def _fmt(x: float) -> str:
    return repr(float(x))


def _open_metrics(path):
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        fh = open(path, "w", newline="")
    except OSError as exc:
        raise IoFailure(f"cannot write metrics {path}: {exc}") from exc
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(METRICS_HEADER)
    fh.flush()
    return fh, writer


def pretrain_run(cfg: PretrainConfig, manifest: DatasetManifest | None = None, images=None) -> RunResult:
    """Run the configured pretraining and write checkpoint and metrics files.

    ``manifest`` / ``images`` override ``cfg.manifest`` (handy for tests).
    """
    if images is None:
        if manifest is None:
            if not cfg.manifest:
                raise ConfigError("no dataset manifest given")
            manifest = DatasetManifest.load(manifest_path(cfg.manifest))
        images = manifest.load_images()
    if len(images) < cfg.batch_size:
        raise DatasetTooSmall(f"{len(images)} images, batch size {cfg.batch_size}")

    params = init_params(derive_seed(cfg.seed, _INIT), cfg.channels, cfg.hidden, cfg.out_dim)
    state = OptimizerState.create(params, cfg.momentum, cfg.base_lr, max(cfg.epochs, 1), cfg.lr_min)
    metrics = RunMetrics()
    steps = len(images) // cfg.batch_size
    fh, writer = _open_metrics(cfg.metrics_path)
    try:
        for epoch in range(cfg.epochs):
            start = time.perf_counter()
            lr = cosine_lr(epoch, state)
            order = derive_rng(cfg.seed, _ORDER, epoch).permutation(len(images))
            total = 0.0
            for step in range(steps):
                chosen = order[step * cfg.batch_size : (step + 1) * cfg.batch_size]
                batch = build_enlarged_batch(
                    [images[i] for i in chosen], cfg.n_aug, cfg.augmentation, derive_seed(cfg.seed, _AUGMENT, epoch, step)
                )
                batch = shuffle_batch(batch, derive_rng(cfg.seed, _SHUFFLE, epoch, step))
                if cfg.debug_checks:
                    check_group_integrity(batch.groups, cfg.n_aug)
                embeddings, cache = forward(params, batch.views)
                out = compute_loss(embeddings, batch.groups, cfg)
                if not np.isfinite(out.total) or not np.all(np.isfinite(out.grad_embeddings)):
                    raise NonFiniteLoss(f"non-finite loss at epoch {epoch}, step {step}")
                grads = backward(params, cache, out.grad_embeddings)
                sgd_momentum_step(params, grads, state, lr)
                total += out.total
            mean = total / steps
            seconds = time.perf_counter() - start
            metrics.rows.append((epoch, mean, lr, seconds))
            writer.writerow([epoch, _fmt(mean), _fmt(lr), _fmt(seconds) if cfg.record_wall_clock else "0.0"])
            fh.flush()
            log.info("epoch %d loss %.6f lr %.3g (%.1fs)", epoch, mean, lr, seconds)
    finally:
        fh.close()
    save_checkpoint(params, state, cfg.checkpoint_path)
    return RunResult(params, state, metrics)


def ablation_grid(base: PretrainConfig) -> list[tuple[str, PretrainConfig]]:
    """One-factor-at-a-time variations over N, batch size, tau and attention."""
    runs = [("base", base)]
    runs += [(f"n{n}", replace(base, n_aug=n)) for n in (0, 2, 10, 20) if n != base.n_aug]
    runs += [(f"b{b}", replace(base, batch_size=b)) for b in (4, 8, 16) if b != base.batch_size]
    runs += [(f"tau{t:g}", replace(base, tau=t)) for t in (0.01, 0.1, 0.2, 0.5, 1.0) if t != base.tau]
    runs.append(("attn_off" if base.attention else "attn_on", replace(base, attention=not base.attention)))
    return runs


def run_ablation(base: PretrainConfig, out_dir, images=None, manifest=None) -> list[dict]:
    """Run every configuration of :func:`ablation_grid` into ``out_dir/<name>/``."""
    out = Path(out_dir)
    if images is None and manifest is None:
        manifest = DatasetManifest.load(manifest_path(base.manifest))
    if images is None:
        images = manifest.load_images()
    results = []
    for name, cfg in ablation_grid(base):
        run_dir = out / name
        run_dir.mkdir(parents=True, exist_ok=True)
        cfg = replace(cfg, checkpoint_path=str(run_dir / "checkpoint.grvs"), metrics_path=str(run_dir / "metrics.csv"))
        result = pretrain_run(cfg, images=images)
        results.append(
            {
                "name": name,
                "n_aug": cfg.n_aug,
                "batch_size": cfg.batch_size,
                "tau": cfg.tau,
                "attention": cfg.attention,
                "final_loss": result.metrics.losses[-1] if result.metrics.rows else None,
                "checkpoint": cfg.checkpoint_path,
                "metrics": cfg.metrics_path,
            }
        )
    return results
