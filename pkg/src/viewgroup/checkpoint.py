"""Binary checkpoint format.

Layout, all integers unsigned 32-bit little-endian::

    b"GRVS" | version | tensor count
    per tensor: name length | name (utf-8) | rank | dims... | float32 LE values (row-major)

Parameters are stored as ``param/<name>``, momentum buffers as
``velocity/<name>``, and optimizer scalars as rank-0 ``optim/<field>``
tensors (so they round-trip at float32 precision).
"""

from __future__ import annotations

import struct

import numpy as np

from .encoder import OptimizerState
from .errors import CorruptCheckpoint, IoFailure, VersionMismatch

MAGIC = b"GRVS"
VERSION = 1
_U32 = struct.Struct("<I")
_OPTIM_FIELDS = ("momentum", "base_lr", "horizon", "lr_min")


def encode_tensors(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, _U32.pack(VERSION), _U32.pack(len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f4")
        raw = name.encode("utf-8")
        parts += [_U32.pack(len(raw)), raw, _U32.pack(arr.ndim)]
        parts += [_U32.pack(d) for d in arr.shape]
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptCheckpoint(f"truncated while reading {what} at byte {self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return _U32.unpack(self.take(4, what))[0]


def decode_tensors(data: bytes) -> dict[str, np.ndarray]:
    r = _Reader(data)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise CorruptCheckpoint(f"bad magic {magic!r}, expected {MAGIC!r}")
    version = r.u32("version")
    if version != VERSION:
        raise VersionMismatch(f"checkpoint format version {version}, this build reads {VERSION}")
    tensors = {}
    for _ in range(r.u32("tensor count")):
        name = r.take(r.u32("name length"), "name").decode("utf-8", errors="strict")
        rank = r.u32(f"rank of {name}")
        shape = tuple(r.u32(f"dims of {name}") for _ in range(rank))
        size = int(np.prod(shape, dtype=np.int64))
        raw = r.take(4 * size, f"values of {name}")
        tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
    if r.pos != len(data):
        raise CorruptCheckpoint(f"{len(data) - r.pos} trailing bytes after last tensor")
    return tensors


def checkpoint_tensors(params, state: OptimizerState | None) -> dict[str, np.ndarray]:
    tensors = {f"param/{k}": v for k, v in params.items()}
    if state is not None:
        tensors.update({f"velocity/{k}": v for k, v in state.velocity.items()})
        tensors.update({f"optim/{f}": np.float32(getattr(state, f)) for f in _OPTIM_FIELDS})
    return tensors


def save_checkpoint(params, state: OptimizerState | None, path) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(encode_tensors(checkpoint_tensors(params, state)))
    except OSError as exc:
        raise IoFailure(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path):
    """Returns ``(params, state)``; ``state`` is None if no optimizer was saved."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read checkpoint {path}: {exc}") from exc
    tensors = decode_tensors(data)
    params = {k[len("param/") :]: v for k, v in tensors.items() if k.startswith("param/")}
    velocity = {k[len("velocity/") :]: v for k, v in tensors.items() if k.startswith("velocity/")}
    if not params:
        raise CorruptCheckpoint("checkpoint holds no parameters")
    state = None
    if velocity:
        missing = [f for f in _OPTIM_FIELDS if f"optim/{f}" not in tensors]
        if missing or set(velocity) != set(params):
            raise CorruptCheckpoint("optimizer state incomplete")
        scalars = {f: tensors[f"optim/{f}"].item() for f in _OPTIM_FIELDS}
        state = OptimizerState(
            velocity=velocity,
            momentum=scalars["momentum"],
            base_lr=scalars["base_lr"],
            horizon=int(scalars["horizon"]),
            lr_min=scalars["lr_min"],
        )
    return params, state
