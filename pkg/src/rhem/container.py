"""Versioned binary container: JSON metadata plus named little-endian float64 arrays.

Layout::

    b"RHEM" | u16 version | b"<" endianness tag | u32 header length | header JSON | array bytes

The header lists each array's name, shape and byte offset.  Output bytes are
a pure function of the inputs (sorted keys, no timestamps).
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"RHEM"
VERSION = 1
ENDIAN_TAG = b"<"


class ContainerError(ValueError):
    pass


def dumps(meta: dict, arrays: dict[str, np.ndarray]) -> bytes:
    entries, chunks, offset = [], [], 0
    for name in sorted(arrays):
        a = np.array(arrays[name], dtype="<f8", order="C")
        raw = a.tobytes()
        entries.append({"name": name, "shape": list(a.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta, "arrays": entries}, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<H", VERSION) + ENDIAN_TAG + struct.pack("<I", len(header)) + header + b"".join(chunks)


def loads(blob: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if len(blob) < 11 or blob[:4] != MAGIC:
        raise ContainerError("not an RHEM container")
    (version,) = struct.unpack("<H", blob[4:6])
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    if blob[6:7] != ENDIAN_TAG:
        raise ContainerError("unsupported endianness tag")
    (hlen,) = struct.unpack("<I", blob[7:11])
    if len(blob) < 11 + hlen:
        raise ContainerError("truncated header")
    header = json.loads(blob[11:11 + hlen])
    base = 11 + hlen
    arrays = {}
    for e in header["arrays"]:
        start = base + e["offset"]
        if start + e["nbytes"] > len(blob):
            raise ContainerError(f"truncated array {e['name']!r}")
        arrays[e["name"]] = np.frombuffer(blob[start:start + e["nbytes"]], dtype="<f8").reshape(e["shape"]).astype(float)
    return header["meta"], arrays


def write(path, meta: dict, arrays: dict[str, np.ndarray]):
    with open(path, "wb") as fh:
        fh.write(dumps(meta, arrays))


def read(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        return loads(fh.read())
