"""Binary PPM (P6, maxval 255) reading and writing."""

from __future__ import annotations

import os

import numpy as np

from .errors import IoFailure


def write_ppm(path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected uint8 (H, W, 3) image, got {img.dtype} {img.shape}")
    h, w = img.shape[:2]
    try:
        with open(path, "wb") as fh:
            fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
            fh.write(np.ascontiguousarray(img).tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _tokens(data: bytes, count: int):
    """First ``count`` header tokens and the offset just past the last one."""
    tokens = []
    pos = 0
    while len(tokens) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise IoFailure("truncated PPM header")
        tokens.append(data[start:pos])
    return tokens, pos + 1  # single whitespace byte before the raster


def read_ppm(path) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    (magic, w, h, maxval), offset = _tokens(data, 4)
    if magic != b"P6":
        raise IoFailure(f"{os.fspath(path)}: not a binary PPM (magic {magic!r})")
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval != 255:
        raise IoFailure(f"{os.fspath(path)}: only maxval 255 is supported, got {maxval}")
    raster = data[offset : offset + w * h * 3]
    if len(raster) != w * h * 3:
        raise IoFailure(f"{os.fspath(path)}: pixel data truncated")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w, 3).copy()
