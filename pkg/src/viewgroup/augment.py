"""Stochastic view generation and enlarged-batch construction.

Images are ``uint8`` arrays of shape ``(H, W, 3)``. Each view draws its
parameters from its own generator, seeded by ``(master_seed, source_index,
view_index)``, so the batch is independent of the order views are produced in.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, DatasetTooSmall, ImageTooSmall, InvalidN, ShapeMismatch
from .kernels import sample_bilinear

CROP_ATTEMPTS = 10
ASPECT_RANGE = (3.0 / 4.0, 4.0 / 3.0)


@dataclass(frozen=True)
class AugmentationSpec:
    crop_scale_range: tuple[float, float] = (0.3, 1.0)
    flip_probability: float = 0.5
    rotation_max_degrees: float = 45.0
    color_jitter_strength: float = 0.4
    blur_probability: float = 0.5
    blur_sigma_range: tuple[float, float] = (0.1, 2.0)
    output_size: int = 32

    def __post_init__(self):
        lo, hi = self.crop_scale_range
        if not (0.0 < lo <= hi <= 1.0):
            raise ConfigError(f"crop_scale_range must satisfy 0 < lo <= hi <= 1, got {self.crop_scale_range}")
        lo, hi = self.blur_sigma_range
        if not (0.0 < lo <= hi):
            raise ConfigError(f"blur_sigma_range must satisfy 0 < lo <= hi, got {self.blur_sigma_range}")
        for name in ("flip_probability", "blur_probability"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.rotation_max_degrees < 0 or self.color_jitter_strength < 0:
            raise ConfigError("rotation_max_degrees and color_jitter_strength must be >= 0")
        if self.output_size < 1:
            raise ConfigError("output_size must be positive")

    @classmethod
    def identity(cls, output_size: int = 32) -> AugmentationSpec:
        return cls(
            crop_scale_range=(1.0, 1.0),
            flip_probability=0.0,
            rotation_max_degrees=0.0,
            color_jitter_strength=0.0,
            blur_probability=0.0,
            output_size=output_size,
        )

    @classmethod
    def from_dict(cls, data: dict) -> AugmentationSpec:
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown augmentation keys: {sorted(unknown)}")
        data = dict(data)
        for key in ("crop_scale_range", "blur_sigma_range"):
            if key in data:
                data[key] = tuple(float(x) for x in data[key])
        return cls(**data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["crop_scale_range"] = list(self.crop_scale_range)
        d["blur_sigma_range"] = list(self.blur_sigma_range)
        return d


@dataclass
class EnlargedBatch:
    views: np.ndarray  # (n, S, S, 3) uint8
    groups: np.ndarray  # (n,) int64
    provenance: list[dict] = field(default_factory=list)

    def __len__(self):
        return self.views.shape[0]


def view_rng(master_seed: int, source_index: int, view_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(source_index), int(view_index)]))


def sample_params(shape, spec: AugmentationSpec, rng: np.random.Generator) -> dict:
    """Draw one view's augmentation parameters.

    The draw sequence is fixed regardless of which operations end up active,
    so the stream position after this call depends only on the crop retries.
    """
    h, w = shape[:2]
    area = h * w
    crop = (0, 0, h, w)
    lo, hi = spec.crop_scale_range
    log_lo, log_hi = math.log(ASPECT_RANGE[0]), math.log(ASPECT_RANGE[1])
    for _ in range(CROP_ATTEMPTS):
        target = area * rng.uniform(lo, hi)
        ratio = math.exp(rng.uniform(log_lo, log_hi))
        cw = int(round(math.sqrt(target * ratio)))
        ch = int(round(math.sqrt(target / ratio)))
        if 0 < cw <= w and 0 < ch <= h:
            top = int(rng.integers(0, h - ch + 1))
            left = int(rng.integers(0, w - cw + 1))
            crop = (top, left, ch, cw)
            break
    flip = bool(rng.uniform() < spec.flip_probability)
    angle = float(rng.uniform(-spec.rotation_max_degrees, spec.rotation_max_degrees))
    s = spec.color_jitter_strength
    brightness, contrast, saturation = (float(max(0.0, x)) for x in rng.uniform(1.0 - s, 1.0 + s, size=3))
    blur = bool(rng.uniform() < spec.blur_probability)
    sigma = float(rng.uniform(*spec.blur_sigma_range))
    return {
        "crop": crop,
        "flip": flip,
        "angle": angle,
        "brightness": brightness,
        "contrast": contrast,
        "saturation": saturation,
        "blur_sigma": sigma if blur else 0.0,
    }


def _resize_crop(x, crop, size):
    top, left, ch, cw = crop
    r = np.arange(size, dtype=np.float64)
    ys = top + (r + 0.5) * (ch / size) - 0.5
    xs = left + (r + 0.5) * (cw / size) - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return sample_bilinear(x, yy, xx)


def _rotate(x, degrees):
    h, w = x.shape[:2]
    theta = math.radians(degrees)
    cos, sin = math.cos(theta), math.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64) - cy, np.arange(w, dtype=np.float64) - cx, indexing="ij")
    # inverse map: output pixel -> source location
    src_y = cy + cos * yy - sin * xx
    src_x = cx + sin * yy + cos * xx
    return sample_bilinear(x, src_y, src_x)


_LUMA = np.array([0.299, 0.587, 0.114])


def _color_jitter(x, brightness, contrast, saturation):
    if brightness != 1.0:
        x = np.clip(x * brightness, 0.0, 1.0)
    if contrast != 1.0:
        mean = float((x @ _LUMA).mean())
        x = np.clip((x - mean) * contrast + mean, 0.0, 1.0)
    if saturation != 1.0:
        gray = (x @ _LUMA)[..., None]
        x = np.clip((x - gray) * saturation + gray, 0.0, 1.0)
    return x


def _gaussian_blur(x, sigma):
    radius = max(1, int(math.ceil(3.0 * sigma)))
    taps = np.exp(-0.5 * (np.arange(-radius, radius + 1) / sigma) ** 2)
    taps /= taps.sum()
    h, w = x.shape[:2]
    padded = np.pad(x, ((radius, radius), (0, 0), (0, 0)), mode="reflect")
    x = sum(t * padded[k : k + h] for k, t in enumerate(taps))
    padded = np.pad(x, ((0, 0), (radius, radius), (0, 0)), mode="reflect")
    return sum(t * padded[:, k : k + w] for k, t in enumerate(taps))


def apply_params(img: np.ndarray, params: dict, spec: AugmentationSpec) -> np.ndarray:
    """Crop+resize, flip, rotate, jitter, blur, in that order."""
    x = img.astype(np.float64) / 255.0
    x = _resize_crop(x, params["crop"], spec.output_size)
    if params["flip"]:
        x = x[:, ::-1]
    if params["angle"] != 0.0:
        x = _rotate(x, params["angle"])
    x = _color_jitter(x, params["brightness"], params["contrast"], params["saturation"])
    if params["blur_sigma"] > 0.0:
        x = _gaussian_blur(x, params["blur_sigma"])
    return np.clip(np.rint(x * 255.0), 0, 255).astype(np.uint8)


def _check_image(img, spec):
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
        raise ShapeMismatch(f"expected uint8 (H, W, 3) image, got {img.dtype} {img.shape}")
    if min(img.shape[:2]) < spec.output_size:
        raise ImageTooSmall(f"image {img.shape[1]}x{img.shape[0]} smaller than output_size {spec.output_size}")


def augment_view(img: np.ndarray, spec: AugmentationSpec, rng: np.random.Generator) -> np.ndarray:
    _check_image(img, spec)
    return apply_params(img, sample_params(img.shape, spec, rng), spec)


def hflip(img: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(img[:, ::-1])


def resize_only(img: np.ndarray, size: int) -> np.ndarray:
    spec = AugmentationSpec.identity(size)
    _check_image(img, spec)
    params = {
        "crop": (0, 0, img.shape[0], img.shape[1]),
        "flip": False,
        "angle": 0.0,
        "brightness": 1.0,
        "contrast": 1.0,
        "saturation": 1.0,
        "blur_sigma": 0.0,
    }
    return apply_params(img, params, spec)


def build_enlarged_batch(sources, n_aug: int, spec: AugmentationSpec, master_seed: int) -> EnlargedBatch:
    """Augment every source ``n_aug`` times; view ``k`` belongs to group ``k // n_aug``.

    ``n_aug == 0`` yields two identical un-augmented (resized) copies per
    source. ``n_aug == 1`` is rejected: no anchor would have a positive.
    """
    if len(sources) == 0:
        raise DatasetTooSmall("no source images")
    if n_aug == 1 or n_aug < 0:
        raise InvalidN(f"N must be 0 or >= 2, got {n_aug}")
    views, groups, provenance = [], [], []
    for s, img in enumerate(sources):
        img = np.asarray(img)
        if n_aug == 0:
            view = resize_only(img, spec.output_size)
            for v in range(2):
                views.append(view.copy())
                groups.append(s)
                provenance.append({"source_index": s, "view_index": v, "augmented": False})
            continue
        _check_image(img, spec)
        for v in range(n_aug):
            params = sample_params(img.shape, spec, view_rng(master_seed, s, v))
            views.append(apply_params(img, params, spec))
            groups.append(s)
            provenance.append({"source_index": s, "view_index": v, "augmented": True, **params})
    return EnlargedBatch(np.stack(views), np.asarray(groups, dtype=np.int64), provenance)


def shuffle_batch(batch: EnlargedBatch, rng: np.random.Generator) -> EnlargedBatch:
    """Apply one random permutation to views, groups and provenance together."""
    perm = rng.permutation(len(batch))
    return EnlargedBatch(
        batch.views[perm],
        batch.groups[perm],
        [batch.provenance[i] for i in perm] if batch.provenance else [],
    )
