"""Byte-stable checkpoint container for parameter stores.

Layout: magic line, one canonical-JSON header line (version, entry names,
shapes, byte offsets, metadata), then the raw little-endian float64 buffers
concatenated in header order. Identical stores serialize to identical bytes
on every platform.
"""
from __future__ import annotations

import json

import numpy as np

from ..errors import SchemaVersionMismatch
from .net import ParamStore

MAGIC = b"BDCKPT\n"
VERSION = 1


def dumps(store: ParamStore, metadata: dict | None = None) -> bytes:
    names = sorted(store.params)
    header = {
        "version": VERSION,
        "metadata": metadata or {},
        "entries": [
            {"name": n, "shape": list(store.params[n].shape)} for n in names
        ],
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode() + b"\n"
    body = b"".join(
        np.ascontiguousarray(store.params[n], dtype="<f8").tobytes() for n in names
    )
    return MAGIC + head + body


def loads(blob: bytes) -> tuple[ParamStore, dict]:
    if not blob.startswith(MAGIC):
        raise SchemaVersionMismatch("not a checkpoint file")
    rest = blob[len(MAGIC):]
    nl = rest.index(b"\n")
    header = json.loads(rest[:nl].decode())
    if header.get("version") != VERSION:
        raise SchemaVersionMismatch(f"unsupported checkpoint version {header.get('version')!r}")
    body = rest[nl + 1:]
    store = ParamStore()
    offset = 0
    for entry in header["entries"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(body, dtype="<f8", count=count, offset=offset).reshape(shape)
        store.add(entry["name"], arr.astype(np.float64))
        offset += count * 8
    return store, header["metadata"]


def save(path, store: ParamStore, metadata: dict | None = None) -> None:
    with open(path, "wb") as f:
        f.write(dumps(store, metadata))


def load(path) -> tuple[ParamStore, dict]:
    with open(path, "rb") as f:
        return loads(f.read())
