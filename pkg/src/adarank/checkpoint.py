"""Named matrix checkpoints and their little-endian binary file format.

Layout::

    b"ADRK" | version u32 | layer count u32
    per layer: name length u32 | UTF-8 name | rows u32 | cols u32 | rows*cols float64
    manifest length u32 | UTF-8 JSON manifest (sorted keys)

All integers are 4-byte little-endian unsigned, reals are IEEE-754 binary64
little-endian in row-major order.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

MAGIC = b"ADRK"
FORMAT_VERSION = 1


class CheckpointFormatError(ValueError):
    pass


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def manifest_bytes(manifest: Mapping) -> bytes:
    return json.dumps(_jsonable(manifest), sort_keys=True, separators=(",", ":")).encode("utf-8")


@dataclass
class Checkpoint:
    """Ordered named matrices plus a JSON-able manifest."""

    layers: dict[str, np.ndarray]
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        layers = {}
        for name, w in self.layers.items():
            w = np.asarray(w, dtype=np.float64)
            if w.ndim == 1:
                w = w[None, :]
            if w.ndim != 2:
                raise CheckpointFormatError(f"layer {name!r} is not a matrix")
            layers[name] = w
        self.layers = layers

    def __getitem__(self, name: str) -> np.ndarray:
        return self.layers[name]

    def __contains__(self, name: str) -> bool:
        return name in self.layers

    def names(self) -> list[str]:
        return list(self.layers)

    def subset(self, names: Iterable[str]) -> dict[str, np.ndarray]:
        return {n: self.layers[n] for n in names}

    def to_bytes(self) -> bytes:
        parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(self.layers))]
        for name, w in self.layers.items():
            raw = name.encode("utf-8")
            rows, cols = w.shape
            parts.append(struct.pack("<I", len(raw)))
            parts.append(raw)
            parts.append(struct.pack("<II", rows, cols))
            parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        blob = manifest_bytes(self.manifest)
        parts.append(struct.pack("<I", len(blob)))
        parts.append(blob)
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        view = memoryview(data)
        pos = 0

        def take(n: int) -> memoryview:
            nonlocal pos
            if pos + n > len(view):
                raise CheckpointFormatError("truncated checkpoint")
            chunk = view[pos : pos + n]
            pos += n
            return chunk

        if bytes(take(4)) != MAGIC:
            raise CheckpointFormatError("bad magic bytes")
        version, count = struct.unpack("<II", take(8))
        if version != FORMAT_VERSION:
            raise CheckpointFormatError(f"unsupported checkpoint format version {version}")
        layers = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", take(4))
            name = bytes(take(nlen)).decode("utf-8")
            rows, cols = struct.unpack("<II", take(8))
            arr = np.frombuffer(take(8 * rows * cols), dtype="<f8").astype(np.float64)
            layers[name] = arr.reshape(rows, cols)
        (mlen,) = struct.unpack("<I", take(4))
        manifest = json.loads(bytes(take(mlen)).decode("utf-8")) if mlen else {}
        if pos != len(view):
            raise CheckpointFormatError("trailing bytes after manifest")
        return cls(layers=layers, manifest=manifest)

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    def save(self, path) -> str:
        data = self.to_bytes()
        Path(path).write_bytes(data)
        return hashlib.sha256(data).hexdigest()

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
