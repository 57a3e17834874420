"""Versioned tensor container: ``manifest.json`` plus raw little-endian blobs.

A fixture is a directory::

    manifest.json   {"format", "version", "kind", "meta", "tensors": {...}}
    <name>.bin      raw little-endian bytes, C order

Each tensor entry records its dtype, shape and sha256, which are checked on
every load.
"""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FixtureError

FORMAT = "opticsense-fixture"
VERSION = 1
MANIFEST = "manifest.json"
_DTYPES = {"u1": "<u1", "i1": "<i1", "i2": "<i2", "i4": "<i4", "i8": "<i8",
           "f4": "<f4", "f8": "<f8"}


@dataclass
class Fixture:
    kind: str
    meta: dict = field(default_factory=dict)
    tensors: dict = field(default_factory=dict)
    path: Path | None = None

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.tensors[name]
        except KeyError:
            raise FixtureError(f"fixture {self.path} has no tensor {name!r}") from None


def sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_fixture(path, kind: str, tensors: dict, meta: dict | None = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = {}
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        code = arr.dtype.kind + str(arr.dtype.itemsize)
        if code not in _DTYPES:
            raise FixtureError(f"unsupported dtype {arr.dtype} for tensor {name!r}")
        blob = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
        fname = f"{name}.bin"
        _atomic_write(path / fname, blob)
        entries[name] = {"file": fname, "dtype": _DTYPES[code], "shape": list(arr.shape),
                         "sha256": sha256(blob)}
    manifest = {"format": FORMAT, "version": VERSION, "kind": kind,
                "meta": meta or {}, "tensors": entries}
    _atomic_write(path / MANIFEST, (json.dumps(manifest, indent=1, sort_keys=True) + "\n").encode())
    return path


def read_manifest(path) -> dict:
    path = Path(path)
    mpath = path / MANIFEST if path.is_dir() else path
    if not mpath.is_file():
        raise FixtureError(f"fixture manifest not found: {mpath}")
    try:
        manifest = json.loads(mpath.read_text())
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FixtureError(f"unreadable fixture manifest {mpath}: {exc}") from exc
    if not isinstance(manifest, dict) or manifest.get("format") != FORMAT:
        raise FixtureError(f"{mpath} is not an {FORMAT} manifest")
    if manifest.get("version") != VERSION:
        raise FixtureError(f"{mpath}: unsupported fixture version {manifest.get('version')!r}")
    if not isinstance(manifest.get("tensors"), dict):
        raise FixtureError(f"{mpath}: missing tensor table")
    return manifest


def load_fixture(path, kind: str | None = None) -> Fixture:
    """Load and verify a fixture directory."""
    path = Path(path)
    if path.is_file() and path.name == MANIFEST:
        path = path.parent
    manifest = read_manifest(path)
    if kind is not None and manifest.get("kind") != kind:
        raise FixtureError(f"{path}: expected a {kind} fixture, found {manifest.get('kind')!r}")
    tensors = {}
    for name, entry in manifest["tensors"].items():
        try:
            blob = (path / entry["file"]).read_bytes()
            dtype = np.dtype(entry["dtype"])
            shape = tuple(int(s) for s in entry["shape"])
        except (OSError, KeyError, TypeError) as exc:
            raise FixtureError(f"{path}: bad tensor entry {name!r}: {exc}") from exc
        if sha256(blob) != entry.get("sha256"):
            raise FixtureError(f"{path}: checksum mismatch for tensor {name!r}")
        if len(blob) != dtype.itemsize * int(np.prod(shape, dtype=np.int64)):
            raise FixtureError(f"{path}: tensor {name!r} size does not match its shape")
        tensors[name] = np.frombuffer(blob, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
    return Fixture(manifest["kind"], manifest.get("meta", {}), tensors, path)
