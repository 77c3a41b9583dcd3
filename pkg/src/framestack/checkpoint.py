"""Versioned binary checkpoints.

Layout: ``b"FSCK"``, u32 version, u64 header length, UTF-8 JSON header,
then raw little-endian tensor blobs, and a trailing u32 CRC32 of everything
before it. The header records each tensor's name, dtype, shape and offset.
"""

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from framestack.core import DataError

MAGIC = b"FSCK"
VERSION = 1
_PREFIX = struct.Struct("<4sIQ")


def save_tensors(path, meta: dict, tensors: dict[str, np.ndarray]) -> None:
    index, blobs, offset = [], [], 0
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        dtype = arr.dtype.newbyteorder("<").str
        blob = np.ascontiguousarray(arr, dtype=dtype).tobytes()
        index.append({"name": name, "dtype": dtype, "shape": list(arr.shape),
                      "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"meta": meta, "tensors": index}, sort_keys=True).encode("utf-8")
    body = _PREFIX.pack(MAGIC, VERSION, len(header)) + header + b"".join(blobs)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def load_tensors(path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if len(data) < _PREFIX.size + 4 or data[:4] != MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if version != VERSION:
        raise DataError(f"{path}: checkpoint version {version}, expected {VERSION}")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise DataError(f"{path}: checkpoint is truncated or corrupted (checksum mismatch)")
    header = json.loads(body[_PREFIX.size:_PREFIX.size + hlen].decode("utf-8"))
    base = _PREFIX.size + hlen
    tensors = {}
    for t in header["tensors"]:
        start = base + t["offset"]
        if start + t["nbytes"] > len(body):
            raise DataError(f"{path}: tensor {t['name']} runs past end of file")
        arr = np.frombuffer(body, dtype=t["dtype"], count=int(np.prod(t["shape"])), offset=start)
        tensors[t["name"]] = arr.reshape(t["shape"]).copy()
    return header["meta"], tensors
