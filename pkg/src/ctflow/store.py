"""Directory-based artifact store.

An artifact is a directory holding ``meta.json`` plus one raw little-endian
array file per entry. ``meta.json`` lists every array with its dtype and
shape so files can be validated (and memory-mapped) without pickling.
"""
from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

META = "meta.json"
FORMAT = "ctflow-artifact/1"

_EXT = {"<f4": ".f32", "<f8": ".f64", "|u1": ".u8", "<i8": ".i64"}


class StoreError(ValueError):
    """Malformed or inconsistent artifact directory."""


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=_jsonable).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not serialisable: {type(o)}")


def write_artifact(path, arrays: dict[str, np.ndarray], meta: dict) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = {}
    for name, arr in arrays.items():
        if arr is None:
            continue
        arr = np.asarray(arr)
        if arr.dtype == bool:
            arr = arr.astype(np.uint8)
        dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
        key = np.dtype(dt).str
        if key not in _EXT:
            raise StoreError(f"unsupported dtype {arr.dtype} for {name!r}")
        fname = name + _EXT[key]
        np.ascontiguousarray(arr, dtype=dt).tofile(path / fname)
        entries[name] = {"file": fname, "dtype": key, "shape": list(arr.shape)}
    doc = {"format": FORMAT, "arrays": entries, **meta}
    tmp = path / (META + ".tmp")
    tmp.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_jsonable))
    os.replace(tmp, path / META)
    return path


def read_meta(path) -> dict:
    path = Path(path)
    f = path / META
    if not f.exists():
        raise StoreError(f"{path} has no {META}")
    try:
        doc = json.loads(f.read_text())
    except json.JSONDecodeError as e:
        raise StoreError(f"{f}: {e}") from e
    if doc.get("format") != FORMAT:
        raise StoreError(f"{path}: unknown format {doc.get('format')!r}")
    return doc


def read_array(path, meta: dict, name: str, mmap: bool = False) -> np.ndarray | None:
    """Load one array; ``mmap`` gives a copy-on-write memory map."""
    entry = meta["arrays"].get(name)
    if entry is None:
        return None
    f = Path(path) / entry["file"]
    dtype = np.dtype(entry["dtype"])
    shape = tuple(entry["shape"])
    expected = int(np.prod(shape)) * dtype.itemsize
    if not f.exists():
        raise StoreError(f"missing array file {f}")
    if f.stat().st_size != expected:
        raise StoreError(f"{f}: size {f.stat().st_size} does not match shape {shape} ({expected} bytes)")
    if mmap and expected > 0:
        arr = np.memmap(f, dtype=dtype, mode="c", shape=shape)
    else:
        arr = np.fromfile(f, dtype=dtype).reshape(shape)
    if dtype == np.uint8 and entry.get("bool", True) and name.endswith("mask"):
        arr = arr.astype(bool)
    return arr
