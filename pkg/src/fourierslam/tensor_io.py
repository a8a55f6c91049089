"""FMFT binary tensor container.

Layout, all little-endian::

    bytes 0-3   magic b"FMFT"
    byte  4     dtype code (0x01 float32, 0x02 float64)
    byte  5     ndim
    8 * ndim    uint64 extents
    payload     row-major values
"""

import struct
from pathlib import Path

import numpy as np

from fourierslam.errors import TensorFormatError

MAGIC = b"FMFT"
_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODE_OF = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}


def encode_tensor(arr):
    arr = np.asarray(arr)
    code = _CODE_OF.get(arr.dtype.newbyteorder("=")) if arr.dtype.kind == "f" else None
    if code is None:
        raise TensorFormatError(f"FMFT stores float32/float64 only, got {arr.dtype}")
    if arr.ndim > 255:
        raise TensorFormatError("too many dimensions for FMFT")
    if not np.all(np.isfinite(arr)):
        raise TensorFormatError("tensor contains NaN or Inf")
    header = MAGIC + struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=_CODES[code]).tobytes()


def decode_tensor(buf, source="<bytes>"):
    if len(buf) < 6:
        raise TensorFormatError(f"{source}: truncated header")
    if buf[:4] != MAGIC:
        raise TensorFormatError(f"{source}: bad magic {bytes(buf[:4])!r}")
    code, ndim = buf[4], buf[5]
    if code not in _CODES:
        raise TensorFormatError(f"{source}: unknown dtype code 0x{code:02x}")
    off = 6 + 8 * ndim
    if len(buf) < off:
        raise TensorFormatError(f"{source}: truncated extents")
    shape = struct.unpack(f"<{ndim}Q", buf[6:off])
    dtype = _CODES[code]
    nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(buf) < off + nbytes:
        raise TensorFormatError(
            f"{source}: truncated payload ({len(buf) - off} of {nbytes} bytes)"
        )
    if len(buf) > off + nbytes:
        raise TensorFormatError(f"{source}: {len(buf) - off - nbytes} trailing bytes")
    arr = np.frombuffer(buf, dtype=dtype, offset=off, count=nbytes // dtype.itemsize)
    arr = arr.reshape(shape).astype(dtype.newbyteorder("="))
    if not np.all(np.isfinite(arr)):
        raise TensorFormatError(f"{source}: tensor contains NaN or Inf")
    return arr


def write_tensor(path, arr):
    Path(path).write_bytes(encode_tensor(arr))


def read_tensor(path):
    path = Path(path)
    return decode_tensor(path.read_bytes(), source=str(path))
