"""ATL: a 21-byte-header binary tensor format for bit-exact baselines.

Layout: magic ``ATL1`` (4 bytes), rank as u8, then rank little-endian u32
dims, then the row-major (last dim fastest) float32 payload. Total length is
``5 + 4*rank + 4*prod(dims)`` bytes.
"""

import struct

import numpy as np

from uvsplat.errors import FormatError

MAGIC = b"ATL1"
MAX_RANK = 8


def write_atl(path, array):
    """Write ``array`` as float32. Returns the number of bytes written."""
    arr = np.ascontiguousarray(array, dtype=np.float32)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim > MAX_RANK:
        raise FormatError(f"rank {arr.ndim} exceeds ATL maximum {MAX_RANK}")
    header = MAGIC + struct.pack("<B", arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    data = header + arr.tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def read_atl(path):
    """Read an ATL tensor as a float32 ndarray."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 5 or blob[:4] != MAGIC:
        raise FormatError(f"{path}: not an ATL1 file")
    rank = blob[4]
    if rank > MAX_RANK:
        raise FormatError(f"{path}: rank {rank} exceeds ATL maximum {MAX_RANK}")
    need = 5 + 4 * rank
    if len(blob) < need:
        raise FormatError(f"{path}: truncated header")
    dims = struct.unpack(f"<{rank}I", blob[5:need])
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    if len(blob) != need + 4 * count:
        raise FormatError(
            f"{path}: expected {need + 4 * count} bytes, found {len(blob)}")
    flat = np.frombuffer(blob, dtype="<f4", offset=need, count=count)
    return flat.reshape(dims).copy()
