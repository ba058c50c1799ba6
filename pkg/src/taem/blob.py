"""Versioned binary container for named tensors.

Layout (all integers little-endian):

    magic  8 bytes   b"TAEMBLOB"
    u32              format version (currently 1)
    u32              blob count
    per blob:
      u32            name length in bytes
      bytes          UTF-8 name
      u8             dtype code (1 = float32, 2 = float64)
      u8             rank
      u64 * rank     extents
      bytes          row-major payload, little-endian

Blobs are written sorted by name so equal contents give equal bytes.
Loaders reject unknown magic, future versions, and trailing data.
"""

from __future__ import annotations

import os
import struct

import numpy as np

MAGIC = b"TAEMBLOB"
VERSION = 1

_DTYPE_CODES = {np.dtype("float32"): 1, np.dtype("float64"): 2}
_CODE_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}


class BlobFormatError(ValueError):
    pass


def pack_blobs(blobs: dict[str, np.ndarray]) -> bytes:
    out = [MAGIC, struct.pack("<II", VERSION, len(blobs))]
    for name in sorted(blobs):
        arr = np.ascontiguousarray(blobs[name])
        code = _DTYPE_CODES.get(arr.dtype.newbyteorder("="))
        if code is None:
            raise BlobFormatError(
                f"blob {name!r}: dtype {arr.dtype} not storable (float32/float64 only)"
            )
        encoded = name.encode("utf-8")
        out.append(struct.pack("<I", len(encoded)))
        out.append(encoded)
        out.append(struct.pack("<BB", code, arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(arr.astype(_CODE_DTYPES[code], copy=False).tobytes())
    return b"".join(out)


def unpack_blobs(payload: bytes) -> dict[str, np.ndarray]:
    view = memoryview(payload)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise BlobFormatError("truncated blob stream")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(8)) != MAGIC:
        raise BlobFormatError("bad magic; not a tensor-blob file")
    (version, count) = struct.unpack("<II", take(8))
    if version > VERSION:
        raise BlobFormatError(f"unsupported future format version {version}")
    blobs: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = bytes(take(name_len)).decode("utf-8")
        code, rank = struct.unpack("<BB", take(2))
        dtype = _CODE_DTYPES.get(code)
        if dtype is None:
            raise BlobFormatError(f"blob {name!r}: unknown dtype code {code}")
        shape = struct.unpack(f"<{rank}Q", take(8 * rank))
        n_items = int(np.prod(shape, dtype=np.int64)) if rank else 1
        raw = take(n_items * dtype.itemsize)
        arr = np.frombuffer(raw, dtype=dtype).reshape(shape)
        if name in blobs:
            raise BlobFormatError(f"duplicate blob name {name!r}")
        blobs[name] = arr.astype(dtype.newbyteorder("="))
    if pos != len(view):
        raise BlobFormatError(f"{len(view) - pos} trailing bytes after blob stream")
    return blobs


def write_blobs(path, blobs: dict[str, np.ndarray]) -> None:
    data = pack_blobs(blobs)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def read_blobs(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        return unpack_blobs(f.read())


def write_blob(path, name: str, array: np.ndarray) -> None:
    write_blobs(path, {name: array})


def read_single_blob(path) -> tuple[str, np.ndarray]:
    blobs = read_blobs(path)
    if len(blobs) != 1:
        raise BlobFormatError(f"{path}: expected exactly one blob, found {len(blobs)}")
    return next(iter(blobs.items()))
