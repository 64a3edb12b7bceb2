"""Binary tensor container used for feature caches and checkpoint payloads.

Layout, all little-endian:

    magic   4 bytes  b"MFCT"
    version u8       0x01
    dtype   u8       0x01 = float32, 0x02 = float64
    rank    u8
    dims    rank * u32
    payload row-major element bytes
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"MFCT"
VERSION = 1

_DTYPE_CODES = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}
_CODE_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}


class TensorFormatError(Exception):
    pass


def encode_tensor(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr)
    code = _DTYPE_CODES.get(arr.dtype)
    if code is None:
        raise TensorFormatError(f"unsupported dtype {arr.dtype}; use float32 or float64")
    if arr.ndim > 255:
        raise TensorFormatError("rank exceeds 255")
    header = MAGIC + struct.pack("<BBB", VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b""
    little = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
    return header + little.tobytes(order="C")


def decode_tensor(data: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one tensor starting at offset; returns (array, next_offset)."""
    if data[offset : offset + 4] != MAGIC:
        raise TensorFormatError("bad magic; not a tensor record")
    offset += 4
    if offset + 3 > len(data):
        raise TensorFormatError("truncated header")
    version, code, rank = struct.unpack_from("<BBB", data, offset)
    offset += 3
    if version != VERSION:
        raise TensorFormatError(f"unsupported version {version}")
    dtype = _CODE_DTYPES.get(code)
    if dtype is None:
        raise TensorFormatError(f"unknown dtype code {code:#x}")
    if offset + 4 * rank > len(data):
        raise TensorFormatError("truncated dims")
    dims = struct.unpack_from(f"<{rank}I", data, offset) if rank else ()
    offset += 4 * rank
    count = 1
    for d in dims:
        count *= d
    nbytes = count * dtype.itemsize
    if offset + nbytes > len(data):
        raise TensorFormatError("payload shorter than dims declare")
    arr = np.frombuffer(data, dtype=dtype, count=count, offset=offset).reshape(dims)
    return arr.astype(dtype.newbyteorder("="), copy=True), offset + nbytes


def write_tensor(path, arr: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_tensor(arr))


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    arr, end = decode_tensor(data)
    if end != len(data):
        raise TensorFormatError(f"{len(data) - end} trailing bytes after tensor payload")
    return arr
