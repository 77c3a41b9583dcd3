"""FSEQ binary feature files.

Layout (little-endian): ``b"FSEQ"``, u32 version (=1), u32 L, u32 D, then
``L*D`` float32 values in frame-major order.
"""

import struct
from pathlib import Path

import numpy as np

from framestack.core import DataError

MAGIC = b"FSEQ"
VERSION = 1
_HEADER = struct.Struct("<4sIII")


def write_fseq(seq, path) -> None:
    seq = np.asarray(seq)
    if seq.ndim != 2 or seq.shape[0] < 1:
        raise DataError(f"expected an L x D matrix with L >= 1, got shape {seq.shape}")
    if not np.all(np.isfinite(seq)):
        raise DataError(f"{path}: refusing to write non-finite features")
    L, D = seq.shape
    payload = np.ascontiguousarray(seq, dtype="<f4").tobytes()
    try:
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, VERSION, L, D))
            fh.write(payload)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def read_fseq(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size or data[:4] != MAGIC:
        raise DataError(f"{path}: not an FSEQ file")
    _, version, L, D = _HEADER.unpack_from(data)
    if version != VERSION:
        raise DataError(f"{path}: unsupported FSEQ version {version}")
    if len(data) - _HEADER.size != 4 * L * D:
        raise DataError(
            f"{path}: payload length mismatch (header says {4 * L * D} bytes, "
            f"found {len(data) - _HEADER.size})"
        )
    seq = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(L, D).astype(np.float32)
    if not np.all(np.isfinite(seq)):
        raise DataError(f"{path}: non-finite values in payload")
    return seq


def read_header(path) -> tuple[int, int]:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
    if len(head) < _HEADER.size or head[:4] != MAGIC:
        raise DataError(f"{path}: not an FSEQ file")
    _, version, L, D = _HEADER.unpack(head)
    if version != VERSION:
        raise DataError(f"{path}: unsupported FSEQ version {version}")
    return L, D
