"""Portable binary container for one dense array.

Layout (all integers little-endian)::

    offset  size        field
    0       4           magic  b"TNSR"
    4       1           version (1)
    5       1           dtype code: 0 = float32, 1 = float64, 2 = int32
    6       1           ndim
    7       8 * ndim    dims, uint64 each
    ...     prod(dims) * itemsize   payload, row-major
"""

from __future__ import annotations

import os
import struct

import numpy as np

from ..errors import FormatError
from ..tensor import Tensor

MAGIC = b"TNSR"
VERSION = 1
DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i4")}
_CODE_OF = {"f4": 0, "f8": 1, "i4": 2}


def encode_tensor(array) -> bytes:
    arr = np.asarray(getattr(array, "data", array))
    code = _CODE_OF.get(arr.dtype.str[1:])
    if code is None:
        raise FormatError(f"unsupported dtype {arr.dtype}; use float32, float64 or int32", "dtype")
    if arr.ndim > 255:
        raise FormatError("too many dimensions", "ndim")
    header = MAGIC + struct.pack("<BBB", VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype=DTYPE_CODES[code]).tobytes(order="C")
    return header + payload


def decode_tensor(buf: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise FormatError(f"{source}: bad magic {buf[:4]!r}", "magic")
    if len(buf) < 7:
        raise FormatError(f"{source}: truncated header", "version")
    version, code, ndim = struct.unpack_from("<BBB", buf, 4)
    if version != VERSION:
        raise FormatError(f"{source}: unsupported version {version}", "version")
    if code not in DTYPE_CODES:
        raise FormatError(f"{source}: unknown dtype code {code}", "dtype")
    dims_end = 7 + 8 * ndim
    if len(buf) < dims_end:
        raise FormatError(f"{source}: truncated dims", "dims")
    dims = struct.unpack_from(f"<{ndim}Q", buf, 7)
    dtype = DTYPE_CODES[code]
    expected = int(np.prod(dims, dtype=np.uint64)) * dtype.itemsize if ndim else dtype.itemsize
    got = len(buf) - dims_end
    if got != expected:
        raise FormatError(f"{source}: payload has {got} bytes, expected {expected}", "payload")
    arr = np.frombuffer(buf, dtype=dtype, offset=dims_end).reshape(dims)
    return arr.astype(dtype.newbyteorder("="), copy=True)


def write_tensor(path, array) -> None:
    data = encode_tensor(array)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    return decode_tensor(buf, str(path))


def read_tensor_as(path) -> Tensor:
    return Tensor(read_tensor(path))
