"""
Versioned binary container for parameter tensors.

Layout::

    b"SCAILSNP"                  8-byte magic
    uint16 LE                    format version
    uint32 LE                    header length in bytes
    header                       UTF-8 JSON, sorted keys, compact separators
    payload                      arrays concatenated, little-endian, row-major

The header carries a ``kind`` tag, free-form metadata and an ``arrays`` list
of ``{"name", "dtype", "shape"}`` entries in payload order. Identical
contents always serialize to identical bytes.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ParseError

MAGIC = b"SCAILSNP"
FORMAT_VERSION = 1

_DTYPES = {"f8": "<f8", "i8": "<i8"}


def _canonical(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def dumps(kind, meta, arrays):
    """Serialize ``arrays`` (an ordered mapping name -> ndarray) to bytes."""
    entries = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if arr.dtype.kind == "f":
            code = "f8"
        elif arr.dtype.kind in "iub":
            code = "i8"
        else:
            raise TypeError(f"unsupported dtype for {name!r}: {arr.dtype}")
        data = np.ascontiguousarray(arr, dtype=_DTYPES[code])
        entries.append({"name": name, "dtype": code, "shape": list(data.shape)})
        blobs.append(data.tobytes(order="C"))
    header = _canonical({"kind": kind, "meta": meta, "arrays": entries}).encode("utf-8")
    return MAGIC + struct.pack("<HI", FORMAT_VERSION, len(header)) + header + b"".join(blobs)


def loads(raw, expect_kind=None):
    """Inverse of :func:`dumps`; returns ``(kind, meta, arrays)``."""
    if raw[: len(MAGIC)] != MAGIC:
        raise ParseError("not a snapshot file (bad magic)")
    off = len(MAGIC)
    version, hlen = struct.unpack_from("<HI", raw, off)
    if version != FORMAT_VERSION:
        raise ParseError(f"unsupported snapshot version {version}")
    off += struct.calcsize("<HI")
    header = json.loads(raw[off : off + hlen].decode("utf-8"))
    off += hlen
    kind = header["kind"]
    if expect_kind is not None and kind != expect_kind:
        raise ParseError(f"expected snapshot kind {expect_kind!r}, found {kind!r}")
    arrays = {}
    for entry in header["arrays"]:
        dt = np.dtype(_DTYPES[entry["dtype"]])
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * dt.itemsize
        buf = raw[off : off + nbytes]
        if len(buf) != nbytes:
            raise ParseError(f"truncated payload for array {entry['name']!r}")
        arr = np.frombuffer(buf, dtype=dt).reshape(shape)
        arrays[entry["name"]] = arr.astype(dt.newbyteorder("="), copy=True)
        off += nbytes
    if off != len(raw):
        raise ParseError("trailing bytes after payload")
    return kind, header["meta"], arrays


def save(path, kind, meta, arrays):
    Path(path).write_bytes(dumps(kind, meta, arrays))


def load(path, expect_kind=None):
    return loads(Path(path).read_bytes(), expect_kind=expect_kind)
