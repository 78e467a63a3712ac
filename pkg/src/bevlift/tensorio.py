"""LXT tensor container and LXTA named-tensor archive.

LXT layout: ``b"LXT1"``, little-endian u32 rank, u32 dims[rank], then float32
values in row-major order.

LXTA layout: a text index header followed by the concatenated LXT blobs::

    LXTA1 <count>\\n
    <name> <offset> <nbytes>\\n      (count lines; offsets relative to blob start)
"""

import io
import struct
from pathlib import Path

import numpy as np

from .exceptions import DataError

MAGIC = b"LXT1"
ARCHIVE_MAGIC = "LXTA1"


def encode(array):
    arr = np.ascontiguousarray(np.asarray(array, dtype="<f4"))
    header = MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.tobytes(order="C")


def decode(blob):
    if len(blob) < 8 or blob[:4] != MAGIC:
        raise DataError("not an LXT1 tensor (bad magic)")
    (rank,) = struct.unpack_from("<I", blob, 4)
    off = 8 + 4 * rank
    if len(blob) < off:
        raise DataError("truncated LXT1 header")
    dims = struct.unpack_from(f"<{rank}I", blob, 8)
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    if len(blob) != off + 4 * count:
        raise DataError(f"LXT1 payload size mismatch for dims {dims}")
    data = np.frombuffer(blob, dtype="<f4", count=count, offset=off)
    return data.reshape(dims).astype(np.float32)


def save(path, array):
    Path(path).write_bytes(encode(array))


def load(path):
    return decode(Path(path).read_bytes())


def save_archive(path, tensors):
    """Write a mapping ``name -> array`` as an LXTA archive (names sorted)."""
    blobs, index, offset = [], [], 0
    for name in sorted(tensors):
        if not name or any(ch.isspace() for ch in name):
            raise DataError(f"invalid tensor name {name!r}")
        blob = encode(tensors[name])
        index.append(f"{name} {offset} {len(blob)}\n")
        blobs.append(blob)
        offset += len(blob)
    buf = io.BytesIO()
    buf.write(f"{ARCHIVE_MAGIC} {len(index)}\n".encode())
    buf.write("".join(index).encode())
    for blob in blobs:
        buf.write(blob)
    Path(path).write_bytes(buf.getvalue())


def load_archive(path):
    raw = Path(path).read_bytes()
    stream = io.BytesIO(raw)
    first = stream.readline().decode("utf-8", "replace").split()
    if len(first) != 2 or first[0] != ARCHIVE_MAGIC:
        raise DataError(f"{path}: not an LXTA1 archive")
    entries = []
    for _ in range(int(first[1])):
        parts = stream.readline().decode().split()
        if len(parts) != 3:
            raise DataError(f"{path}: malformed archive index line")
        entries.append((parts[0], int(parts[1]), int(parts[2])))
    base = stream.tell()
    out = {}
    for name, offset, nbytes in entries:
        start = base + offset
        if start + nbytes > len(raw):
            raise DataError(f"{path}: tensor {name!r} runs past end of file")
        out[name] = decode(raw[start:start + nbytes])
    return out
