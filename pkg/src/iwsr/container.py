"""IWSR1 on-disk container: a little-endian named-tensor file.

Layout: magic "IWSR"; u8 version = 1; u8 dtype code (0 = float32,
1 = float64); u16 tensor count; then per tensor u16 name length, UTF-8 name,
u8 rank, u64 per-axis sizes, raw row-major payload.  All tensors in one file
share the dtype.  Round-trips are bit-exact.
"""

from __future__ import annotations

import struct

import numpy as np

from .fields import FieldGrid, NormStats, VAR_NAMES

MAGIC = b"IWSR"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


class FormatError(ValueError):
    """Malformed IWSR1 file; the message carries the failing byte offset."""


def save_tensors(path, tensors: dict[str, np.ndarray], dtype=np.float32) -> None:
    dtype = np.dtype(dtype)
    code = _CODES[dtype]
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<BBH", VERSION, code, len(tensors)))
        for name, arr in tensors.items():
            raw = name.encode("utf-8")
            arr = np.ascontiguousarray(arr, dtype=dtype)
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            for s in arr.shape:
                fh.write(struct.pack("<Q", s))
            fh.write(arr.tobytes())


def load_tensors(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        buf = fh.read()

    def need(n: int, offset: int, what: str) -> None:
        if offset + n > len(buf):
            raise FormatError(f"truncated file: {what} at byte {offset} needs {n} bytes")

    need(4, 0, "magic")
    if buf[:4] != MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r} at byte 0 (expected {MAGIC!r})")
    need(4, 4, "header")
    version, code, count = struct.unpack_from("<BBH", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported version {version} at byte 4")
    if code not in _DTYPES:
        raise FormatError(f"unknown dtype code {code} at byte 5")
    dtype = _DTYPES[code]

    tensors: dict[str, np.ndarray] = {}
    off = 8
    for _ in range(count):
        need(2, off, "name length")
        (nlen,) = struct.unpack_from("<H", buf, off)
        off += 2
        need(nlen, off, "name")
        name = buf[off:off + nlen].decode("utf-8")
        off += nlen
        need(1, off, "rank")
        rank = buf[off]
        off += 1
        need(8 * rank, off, "shape")
        shape = struct.unpack_from(f"<{rank}Q", buf, off) if rank else ()
        off += 8 * rank
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if rank else dtype.itemsize
        if rank == 0:
            nbytes = dtype.itemsize
        need(nbytes, off, f"payload of {name!r}")
        tensors[name] = np.frombuffer(buf, dtype=dtype, count=nbytes // dtype.itemsize,
                                      offset=off).reshape(shape).copy()
        off += nbytes
    return tensors


# Grid meta layout: dt, dz, dx, terrain_filled flag, has_norm flag, then
# mean/std pairs for T, S, u, w.
_META_LEN = 5 + 2 * len(VAR_NAMES)


def save_grid(grid: FieldGrid, path) -> None:
    meta = np.zeros(_META_LEN, dtype=np.float64)
    meta[0:3] = (grid.dt, grid.dz, grid.dx)
    meta[3] = 1.0 if grid.terrain_filled else 0.0
    if grid.norm is not None:
        meta[4] = 1.0
        meta[5:] = grid.norm.as_vector()
    dtype = grid.vars["T"].dtype
    tensors = {name: grid.vars[name] for name in VAR_NAMES}
    tensors["terrain"] = grid.terrain.astype(dtype)
    tensors["meta"] = meta
    save_tensors(path, tensors, dtype=dtype)


def load_grid(path) -> FieldGrid:
    tensors = load_tensors(path)
    missing = [n for n in (*VAR_NAMES, "terrain", "meta") if n not in tensors]
    if missing:
        raise FormatError(f"grid file missing tensors {missing}")
    meta = tensors["meta"].astype(np.float64)
    if meta.size < _META_LEN:
        raise FormatError(f"grid meta has {meta.size} entries, expected {_META_LEN}")
    norm = NormStats.from_vector(meta[5:5 + 2 * len(VAR_NAMES)]) if meta[4] else None
    return FieldGrid({n: tensors[n] for n in VAR_NAMES},
                     tensors["terrain"] > 0.5,
                     dt=float(meta[0]), dz=float(meta[1]), dx=float(meta[2]),
                     terrain_filled=bool(meta[3]), norm=norm)
