"""Single-file container for named tensors plus string metadata.

Layout: 4-byte magic, little-endian u32 format version, little-endian u64
header length, UTF-8 JSON header, then the raw payload. The header carries
the metadata block and an index of (name, dtype, shape, offset, crc32); the
payload is contiguous little-endian array bytes in index order. Checkpoints
and the render service both read and write this format.
"""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np

MAGIC = b"TRVC"
VERSION = 1

_PREFIX = struct.Struct("<4sIQ")


def _le_dtype(dtype: np.dtype) -> np.dtype:
    """The explicit little-endian spelling of dtype, rejecting oddballs."""
    dtype = np.dtype(dtype)
    if dtype.kind not in "fiub":
        raise ValueError(f"unsupported tensor dtype {dtype}")
    if dtype.itemsize == 1:
        return dtype
    return dtype.newbyteorder("<")


def save_container(path, tensors: dict, metadata: dict | None = None) -> None:
    """Write tensors (name -> ndarray) and metadata (coerced to str)."""
    index = []
    blobs = []
    offset = 0
    for name in sorted(tensors):
        if not name or not isinstance(name, str):
            raise ValueError(f"tensor name must be a non-empty string, got {name!r}")
        arr = np.asarray(tensors[name])
        le = np.ascontiguousarray(arr, dtype=_le_dtype(arr.dtype))
        raw = le.tobytes()
        index.append({
            "name": name,
            "dtype": le.dtype.str,
            "shape": list(arr.shape),
            "offset": offset,
            "crc32": zlib.crc32(raw),
        })
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"metadata": {str(k): str(v) for k, v in (metadata or {}).items()},
         "tensors": index},
        sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_PREFIX.pack(MAGIC, VERSION, len(header)))
        f.write(header)
        for raw in blobs:
            f.write(raw)


def load_container(path):
    """Read back (tensors, metadata); every failure mode is a ValueError."""
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < _PREFIX.size:
        raise ValueError(f"{path}: truncated container prefix")
    magic, version, header_len = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"{path}: not a tensor container (bad magic {magic!r})")
    if version != VERSION:
        raise ValueError(f"{path}: container version {version} not supported "
                         f"(this reader expects version {VERSION})")
    header_end = _PREFIX.size + header_len
    if len(data) < header_end:
        raise ValueError(f"{path}: truncated header")
    try:
        header = json.loads(data[_PREFIX.size:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ValueError(f"{path}: corrupt header ({e})") from None

    payload = data[header_end:]
    tensors = {}
    spans = []
    for entry in header["tensors"]:
        name = entry["name"]
        dtype = np.dtype(entry["dtype"])
        if dtype.byteorder == ">":
            raise ValueError(f"{path}: tensor {name!r} is not little-endian")
        shape = tuple(entry["shape"])
        nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
        start = entry["offset"]
        if start < 0 or start + nbytes > len(payload):
            raise ValueError(f"{path}: truncated payload for tensor {name!r}")
        raw = payload[start:start + nbytes]
        if zlib.crc32(raw) != entry["crc32"]:
            raise ValueError(f"{path}: checksum mismatch for tensor {name!r}")
        if name in tensors:
            raise ValueError(f"{path}: duplicate tensor name {name!r}")
        spans.append((start, start + nbytes, name))
        arr = np.frombuffer(raw, dtype=dtype).reshape(shape)
        # native byte order, writable
        tensors[name] = arr.astype(dtype.newbyteorder("="), copy=True)
    spans.sort()
    for (_, end_a, name_a), (start_b, _, name_b) in zip(spans, spans[1:]):
        if start_b < end_a:
            raise ValueError(f"{path}: tensors {name_a!r} and {name_b!r} overlap")
    return tensors, dict(header["metadata"])
