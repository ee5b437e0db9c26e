"""Binary checkpoint formats.

Dense checkpoint ("LEAPDNSE"): little-endian; format version u32, then
per-tensor records until EOF: name length u32, name bytes, rank u32, dims
u32 each, dtype tag u8 (0: f32, 1: f64), raw values.

Sparse checkpoint ("LEAPSPRS"): little-endian; version u32, layer count
u32; per layer: name (u32 length + bytes), rows u32, cols u32, bitmap
bytes (ceil(rows*cols/8), row-major, LSB-first within each byte), kept
count u64, kept values f32 in bitmap order.

All writes are atomic (temp file + rename).
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

DENSE_MAGIC = b"LEAPDNSE"
SPARSE_MAGIC = b"LEAPSPRS"
FORMAT_VERSION = 1

_DTYPE_TAGS = {0: np.float32, 1: np.float64}


class CheckpointError(IOError):
    pass


def _atomic_write(path: str, payload: bytes) -> None:
    tmp = path + ".tmp"
    try:
        with open(tmp, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except OSError as e:
        raise CheckpointError(f"failed writing {path}: {e}") from e


# -- dense checkpoint --------------------------------------------------------


def save_dense(path: str, tensors: dict[str, np.ndarray]) -> None:
    parts = [DENSE_MAGIC, struct.pack("<I", FORMAT_VERSION)]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype == np.float32:
            tag = 0
        elif arr.dtype == np.float64:
            tag = 1
        else:
            raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
        nb = name.encode()
        parts.append(struct.pack("<I", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b"")
        parts.append(struct.pack("<B", tag))
        parts.append(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())
    _atomic_write(path, b"".join(parts))


def load_dense(path: str) -> dict[str, np.ndarray]:
    try:
        with open(path, "rb") as f:
            buf = f.read()
    except OSError as e:
        raise CheckpointError(f"failed reading {path}: {e}") from e
    if buf[:8] != DENSE_MAGIC:
        raise CheckpointError(f"{path}: bad magic {buf[:8]!r}")
    (version,) = struct.unpack_from("<I", buf, 8)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    off, out = 12, {}
    while off < len(buf):
        (nlen,) = struct.unpack_from("<I", buf, off); off += 4
        name = buf[off:off + nlen].decode(); off += nlen
        (rank,) = struct.unpack_from("<I", buf, off); off += 4
        dims = struct.unpack_from(f"<{rank}I", buf, off); off += 4 * rank
        (tag,) = struct.unpack_from("<B", buf, off); off += 1
        if tag not in _DTYPE_TAGS:
            raise CheckpointError(f"{path}: unknown dtype tag {tag} for {name}")
        dtype = np.dtype(_DTYPE_TAGS[tag]).newbyteorder("<")
        count = int(np.prod(dims)) if rank else 1
        nbytes = count * dtype.itemsize
        arr = np.frombuffer(buf, dtype=dtype, count=count, offset=off)
        off += nbytes
        out[name] = arr.reshape(dims).astype(_DTYPE_TAGS[tag])
    return out


# -- sparse checkpoint --------------------------------------------------------


@dataclass
class SparseLayer:
    name: str
    rows: int
    cols: int
    bitmap: np.ndarray   # uint8 mask, shape (rows, cols)
    values: np.ndarray   # f32, kept weights in bitmap (row-major) order


def encode_sparse_layer(name: str, weight: np.ndarray, mask: np.ndarray) -> SparseLayer:
    if weight.shape != mask.shape or weight.ndim != 2:
        raise ValueError(f"{name}: weight {weight.shape} / mask {mask.shape} must be equal 2-D")
    mask = (np.asarray(mask) != 0).astype(np.uint8)
    values = weight[mask.astype(bool)].astype(np.float32)
    return SparseLayer(name=name, rows=weight.shape[0], cols=weight.shape[1],
                       bitmap=mask, values=values)


def save_sparse(path: str, layers: list[SparseLayer]) -> None:
    parts = [SPARSE_MAGIC, struct.pack("<II", FORMAT_VERSION, len(layers))]
    for layer in layers:
        nb = layer.name.encode()
        parts.append(struct.pack("<I", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<II", layer.rows, layer.cols))
        bits = np.packbits(layer.bitmap.reshape(-1), bitorder="little")
        parts.append(bits.tobytes())
        kept = int(layer.bitmap.sum())
        if kept != layer.values.size:
            raise CheckpointError(
                f"{layer.name}: bitmap popcount {kept} != value count {layer.values.size}")
        parts.append(struct.pack("<Q", kept))
        parts.append(layer.values.astype("<f4").tobytes())
    _atomic_write(path, b"".join(parts))


def load_sparse(path: str) -> list[SparseLayer]:
    try:
        with open(path, "rb") as f:
            buf = f.read()
    except OSError as e:
        raise CheckpointError(f"failed reading {path}: {e}") from e
    if buf[:8] != SPARSE_MAGIC:
        raise CheckpointError(f"{path}: bad magic {buf[:8]!r}")
    version, count = struct.unpack_from("<II", buf, 8)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    off, layers = 16, []
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", buf, off); off += 4
        name = buf[off:off + nlen].decode(); off += nlen
        rows, cols = struct.unpack_from("<II", buf, off); off += 8
        nbits = rows * cols
        nbytes = (nbits + 7) // 8
        bits = np.frombuffer(buf, dtype=np.uint8, count=nbytes, offset=off)
        off += nbytes
        bitmap = np.unpackbits(bits, bitorder="little")[:nbits].reshape(rows, cols)
        (kept,) = struct.unpack_from("<Q", buf, off); off += 8
        if kept != int(bitmap.sum()):
            raise CheckpointError(f"{path}: {name}: kept count mismatch")
        values = np.frombuffer(buf, dtype="<f4", count=kept, offset=off).astype(np.float32)
        off += 4 * kept
        layers.append(SparseLayer(name=name, rows=rows, cols=cols,
                                  bitmap=bitmap, values=values))
    return layers


def sparse_layer_to_dense(layer: SparseLayer) -> np.ndarray:
    """Reconstruct the masked weight matrix (zeros where pruned)."""
    out = np.zeros((layer.rows, layer.cols), dtype=np.float32)
    out[layer.bitmap.astype(bool)] = layer.values
    return out
