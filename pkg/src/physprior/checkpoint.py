"""PCKP checkpoint files: a flat list of named little-endian tensors.

Layout: ``b"PCKP"``, u32 version (1), u32 tensor count, then per tensor
u32 name length, UTF-8 name, u32 rank, rank x u32 dims, u8 dtype tag and the
raw data. Tag 0 is float32; tag 1 (float64) is used only for 64-bit models.
"""

import struct

import numpy as np

MAGIC = b"PCKP"
VERSION = 1
_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, tensors):
    """Write ``{name: array}`` in insertion order."""
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        tag = 1 if arr.dtype == np.float64 else 0
        # astype keeps rank 0; ascontiguousarray would promote scalars to 1-d
        data = arr.astype(_TAGS[tag], order="C")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<I", data.ndim))
        parts.append(struct.pack(f"<{data.ndim}I", *data.shape))
        parts.append(struct.pack("<B", tag))
        parts.append(data.tobytes())
    try:
        with open(path, "wb") as fh:
            fh.write(b"".join(parts))
    except OSError as exc:
        raise OSError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path):
    """Read a PCKP file into an ordered ``{name: array}`` dict."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a PCKP checkpoint (bad magic)")
    pos = 4

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise CheckpointError(f"{path}: truncated checkpoint")
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    version, count = take("<II")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    out = {}
    for _ in range(count):
        (nlen,) = take("<I")
        if pos + nlen > len(buf):
            raise CheckpointError(f"{path}: truncated checkpoint")
        name = buf[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = take("<I")
        dims = take(f"<{rank}I") if rank else ()
        (tag,) = take("<B")
        if tag not in _TAGS:
            raise CheckpointError(f"{path}: unknown dtype tag {tag} for {name!r}")
        dtype = _TAGS[tag]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
        if pos + nbytes > len(buf):
            raise CheckpointError(f"{path}: truncated checkpoint")
        arr = np.frombuffer(buf, dtype=dtype, count=nbytes // dtype.itemsize, offset=pos)
        out[name] = arr.reshape(dims).astype(dtype.newbyteorder("="))
        pos += nbytes
    return out
