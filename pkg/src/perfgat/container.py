"""Single-file array container used for cohorts, graphs and checkpoints.

Layout::

    b"PGATCNT1"                  8-byte magic
    uint64 little-endian         manifest length in bytes
    manifest                     UTF-8 JSON, keys sorted
    payload                      arrays back to back, little-endian float64

The manifest records ``schema_version``, ``endianness``, free-form
``metadata`` and one entry per array with ``name``, ``shape``, ``dtype``
(always ``"<f8"``), ``offset`` (relative to the payload start) and
``nbytes``. Writing is deterministic, so equal inputs give equal bytes.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import CompatibilityError, DataError

MAGIC = b"PGATCNT1"
SCHEMA_VERSION = 1
DTYPE = "<f8"


@dataclass
class ArtifactContainer:
    arrays: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        entries, chunks, offset = [], [], 0
        for name in sorted(self.arrays):
            arr = np.array(self.arrays[name], dtype=DTYPE, order="C")  # keeps 0-d shapes
            raw = arr.tobytes(order="C")
            entries.append({"name": name, "shape": list(arr.shape), "dtype": DTYPE,
                            "offset": offset, "nbytes": len(raw)})
            chunks.append(raw)
            offset += len(raw)
        manifest = {"schema_version": SCHEMA_VERSION, "endianness": "little",
                    "arrays": entries, "metadata": self.metadata}
        head = json.dumps(manifest, sort_keys=True, allow_nan=False).encode("utf-8")
        return MAGIC + struct.pack("<Q", len(head)) + head + b"".join(chunks)

    @classmethod
    def from_bytes(cls, blob: bytes, source: str = "<bytes>") -> "ArtifactContainer":
        if blob[:len(MAGIC)] != MAGIC:
            raise DataError(f"{source}: not a container (bad magic)")
        start = len(MAGIC) + 8
        if len(blob) < start:
            raise DataError(f"{source}: truncated header")
        (n,) = struct.unpack("<Q", blob[len(MAGIC):start])
        try:
            manifest = json.loads(blob[start:start + n].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DataError(f"{source}: unreadable manifest: {exc}") from exc
        version = manifest.get("schema_version")
        if version != SCHEMA_VERSION:
            raise CompatibilityError(f"{source}: schema_version {version}, "
                                     f"expected {SCHEMA_VERSION}")
        if manifest.get("endianness") != "little":
            raise CompatibilityError(f"{source}: endianness {manifest.get('endianness')!r}")
        payload = memoryview(blob)[start + n:]
        arrays = {}
        for e in manifest["arrays"]:
            if e["dtype"] != DTYPE:
                raise CompatibilityError(f"{source}: array {e['name']} has dtype {e['dtype']}")
            shape = tuple(e["shape"])
            expected = int(np.prod(shape, dtype=np.int64)) * 8
            if e["nbytes"] != expected:
                raise DataError(f"{source}: array {e['name']} declares {e['nbytes']} bytes, "
                                f"shape {shape} needs {expected}")
            end = e["offset"] + e["nbytes"]
            if end > len(payload):
                raise DataError(f"{source}: array {e['name']} runs past end of file")
            arrays[e["name"]] = np.frombuffer(payload[e["offset"]:end], dtype=DTYPE) \
                .reshape(shape).astype(np.float64)
        return cls(arrays, manifest.get("metadata", {}))

    def write(self, path) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(self.to_bytes())
        os.replace(tmp, path)

    @classmethod
    def read(cls, path) -> "ArtifactContainer":
        path = Path(path)
        return cls.from_bytes(path.read_bytes(), str(path))


def write_container(path, arrays: Mapping[str, np.ndarray], metadata: Mapping | None = None):
    ArtifactContainer(dict(arrays), dict(metadata or {})).write(path)


def read_container(path) -> ArtifactContainer:
    return ArtifactContainer.read(path)
