"""Flat binary parameter container with a plain-text index.

Layout of a store at ``<dir>``::

    <dir>/index.txt    line 1: "cycledcd-param-store <version>"
                       line 2: "header <json>"   (free-form metadata)
                       then one line per array:
                       "<name>\t<dtype>\t<d0,d1,...>\t<offset>\t<nbytes>"
    <dir>/params.bin   raw little-endian values, C order, concatenated

``dtype`` is a numpy little-endian type string (``<f8``, ``<i8``, ``<u8``).
Names must not contain tabs or newlines.  Scalars have an empty shape field.
"""
from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

MAGIC = "cycledcd-param-store"
VERSION = 1


class StoreFormatError(ValueError):
    """The store is missing, corrupt, or has an incompatible version."""


def save_store(path, arrays: dict[str, np.ndarray], header: dict | None = None) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    lines = [f"{MAGIC} {VERSION}", "header " + json.dumps(header or {}, sort_keys=True)]
    offset = 0
    tmp_bin = path / "params.bin.tmp"
    with open(tmp_bin, "wb") as fh:
        for name in sorted(arrays):
            if "\t" in name or "\n" in name:
                raise ValueError(f"invalid array name {name!r}")
            arr = np.asarray(arrays[name])
            # ascontiguousarray would promote 0-d arrays to shape (1,)
            arr = np.require(arr.astype(arr.dtype.newbyteorder("<"), copy=False), requirements="C")
            raw = arr.tobytes(order="C")
            fh.write(raw)
            shape = ",".join(str(d) for d in arr.shape)
            lines.append(f"{name}\t{arr.dtype.str}\t{shape}\t{offset}\t{len(raw)}")
            offset += len(raw)
    os.replace(tmp_bin, path / "params.bin")
    (path / "index.txt").write_text("\n".join(lines) + "\n")


def load_store(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    index, blob = path / "index.txt", path / "params.bin"
    if not index.is_file() or not blob.is_file():
        raise StoreFormatError(f"{path} is not a parameter store")
    lines = index.read_text().splitlines()
    if not lines or not lines[0].startswith(MAGIC + " "):
        raise StoreFormatError(f"{index}: bad magic line")
    version = lines[0].split()[1]
    if version != str(VERSION):
        raise StoreFormatError(f"{index}: unsupported store version {version} (expected {VERSION})")
    if len(lines) < 2 or not lines[1].startswith("header "):
        raise StoreFormatError(f"{index}: missing header line")
    header = json.loads(lines[1][len("header "):])
    raw = blob.read_bytes()
    arrays: dict[str, np.ndarray] = {}
    for line in lines[2:]:
        if not line:
            continue
        name, dtype, shape, offset, nbytes = line.split("\t")
        shape_t = tuple(int(d) for d in shape.split(",")) if shape else ()
        start, n = int(offset), int(nbytes)
        if start + n > len(raw):
            raise StoreFormatError(f"{index}: entry {name} runs past end of params.bin")
        arr = np.frombuffer(raw[start:start + n], dtype=np.dtype(dtype)).reshape(shape_t)
        arrays[name] = arr.astype(arr.dtype.newbyteorder("="), copy=True)
    return arrays, header
