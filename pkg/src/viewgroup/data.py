"""Synthetic lesion-like dataset and JSON manifests.

Each image is a textured skin-tone background with one to three irregular
elliptical blobs whose colour family depends on the class.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, IoFailure
from .ppm import read_ppm, write_ppm

# blob colour families, RGB in [0, 1]
PALETTE = (
    (0.35, 0.20, 0.12),  # dark brown
    (0.70, 0.25, 0.25),  # red
    (0.30, 0.30, 0.45),  # blue-grey
    (0.10, 0.08, 0.08),  # near black
    (0.85, 0.45, 0.55),  # pink
    (0.55, 0.45, 0.20),  # tan
)


@dataclass(frozen=True)
class SynthConfig:
    num_sources: int = 200
    num_classes: int = 3
    image_size: int = 32
    seed: int = 0
    blob_count_range: tuple[int, int] = (1, 3)
    texture_amplitude: float = 0.06
    palette: tuple = PALETTE

    def __post_init__(self):
        if not self.num_sources >= self.num_classes >= 1:
            raise ConfigError(
                f"need num_sources >= num_classes >= 1, got {self.num_sources} sources, {self.num_classes} classes"
            )
        if self.image_size < 4:
            raise ConfigError("image_size must be at least 4")
        lo, hi = self.blob_count_range
        if not 1 <= lo <= hi:
            raise ConfigError("blob_count_range must satisfy 1 <= lo <= hi")


@dataclass
class ManifestEntry:
    path: str
    class_id: int
    source_id: int


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    image_size: int
    num_classes: int
    root: Path = field(default=Path("."), compare=False)

    def to_dict(self) -> dict:
        return {
            "image_size": self.image_size,
            "num_classes": self.num_classes,
            "entries": [{"path": e.path, "class_id": e.class_id, "source_id": e.source_id} for e in self.entries],
        }

    @classmethod
    def from_dict(cls, data: dict, root=".") -> DatasetManifest:
        try:
            entries = [ManifestEntry(str(e["path"]), int(e["class_id"]), int(e["source_id"])) for e in data["entries"]]
            manifest = cls(entries, int(data["image_size"]), int(data["num_classes"]), Path(root))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed manifest: {exc}") from exc
        ids = [e.source_id for e in entries]
        if len(set(ids)) != len(ids):
            raise ConfigError("manifest source_ids are not unique")
        return manifest

    def save(self, path) -> None:
        try:
            Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")
        except OSError as exc:
            raise IoFailure(f"cannot write manifest {path}: {exc}") from exc

    @classmethod
    def load(cls, path) -> DatasetManifest:
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except OSError as exc:
            raise IoFailure(f"cannot read manifest {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"manifest {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data, root=path.parent)

    def image_path(self, entry: ManifestEntry) -> Path:
        return self.root / entry.path

    def load_images(self) -> list[np.ndarray]:
        return [read_ppm(self.image_path(e)) for e in self.entries]

    @property
    def class_ids(self) -> np.ndarray:
        return np.array([e.class_id for e in self.entries], dtype=np.int64)


def _background(rng, size, amplitude):
    tone = np.clip(np.array([0.86, 0.67, 0.56]) + rng.normal(0.0, 0.06, 3), 0.0, 1.0)
    yy, xx = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size), indexing="ij")
    texture = np.zeros((size, size))
    for _ in range(4):
        fy, fx = rng.uniform(1.0, 6.0, 2)
        phase = rng.uniform(0, 2 * math.pi)
        texture += np.sin(2 * math.pi * (fy * yy + fx * xx) + phase)
    texture = amplitude * texture / 4.0 + rng.normal(0.0, amplitude / 3.0, (size, size))
    return np.clip(tone[None, None, :] + texture[..., None], 0.0, 1.0)


def _blob_mask(rng, size):
    cy, cx = rng.uniform(0.25, 0.75, 2) * size
    ry, rx = rng.uniform(0.12, 0.32, 2) * size
    rot = rng.uniform(0, math.pi)
    harmonics = [(k, rng.uniform(0.0, 0.12), rng.uniform(0, 2 * math.pi)) for k in range(2, 6)]
    yy, xx = np.meshgrid(np.arange(size) + 0.5, np.arange(size) + 0.5, indexing="ij")
    dy, dx = yy - cy, xx - cx
    u = dx * math.cos(rot) + dy * math.sin(rot)
    v = -dx * math.sin(rot) + dy * math.cos(rot)
    rho = np.sqrt((u / rx) ** 2 + (v / ry) ** 2)
    theta = np.arctan2(v, u)
    edge = 1.0 + sum(a * np.cos(k * theta + p) for k, a, p in harmonics)
    # soft boundary about one pixel wide
    return np.clip((edge - rho) * min(rx, ry), 0.0, 1.0)


def synth_image(cfg: SynthConfig, index: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, index]))
    size = cfg.image_size
    img = _background(rng, size, cfg.texture_amplitude)
    base = np.asarray(cfg.palette[(index % cfg.num_classes) % len(cfg.palette)])
    for _ in range(int(rng.integers(cfg.blob_count_range[0], cfg.blob_count_range[1] + 1))):
        color = np.clip(base + rng.normal(0.0, 0.05, 3), 0.0, 1.0)
        alpha = _blob_mask(rng, size)[..., None]
        img = img * (1.0 - alpha) + color[None, None, :] * alpha
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


def generate_synthetic_dataset(cfg: SynthConfig, out_dir) -> DatasetManifest:
    """Write ``cfg.num_sources`` PPM images plus ``manifest.json`` into ``out_dir``.

    Classes are assigned round-robin (source ``i`` has class ``i % num_classes``).
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {out}: {exc}") from exc
    entries = []
    for i in range(cfg.num_sources):
        name = f"img_{i:05d}.ppm"
        write_ppm(out / name, synth_image(cfg, i))
        entries.append(ManifestEntry(name, i % cfg.num_classes, i))
    manifest = DatasetManifest(entries, cfg.image_size, cfg.num_classes, out)
    manifest.save(out / "manifest.json")
    return manifest


def manifest_path(path) -> Path:
    """Accept either a manifest file or the directory holding ``manifest.json``."""
    path = Path(os.fspath(path))
    return path / "manifest.json" if path.is_dir() else path
