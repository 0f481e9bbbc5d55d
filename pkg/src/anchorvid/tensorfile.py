"""Binary tensor container and PPM frame export.

Container layout, all little-endian:

    record*   one per tensor:
        magic  b"DMT1"
        u16    format version (1)
        u8     rank
        u32*   dims
        f32*   row-major payload
    index     UTF-8 JSON: {"tensors": {name: {"offset": byte offset}},
                           "meta": {...}}
    u64       byte offset of the index

Writers emit tensors sorted by name and dump the index with sorted keys,
so identical content always produces identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"DMT1"
VERSION = 1


def _pack_tensor(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    if arr.ndim > 255:
        raise ValueError(f"rank {arr.ndim} exceeds container limit")
    head = MAGIC + struct.pack("<HB", VERSION, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b""
    return head + dims + arr.tobytes()


def write_tensors(path, tensors: dict[str, np.ndarray], meta: dict | None = None):
    """Write named tensors (stored as f32) plus a JSON ``meta`` blob."""
    offsets = {}
    body = b""
    for name in sorted(tensors):
        offsets[name] = {"offset": len(body)}
        body += _pack_tensor(tensors[name])
    index = json.dumps(
        {"tensors": offsets, "meta": meta or {}},
        sort_keys=True,
        separators=(",", ":"),
    ).encode()
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(index)
        fh.write(struct.pack("<Q", len(body)))


def read_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read back ``(tensors, meta)`` written by :func:`write_tensors`."""
    blob = Path(path).read_bytes()
    if len(blob) < 8:
        raise ValueError(f"{path}: truncated container")
    (index_off,) = struct.unpack("<Q", blob[-8:])
    if index_off > len(blob) - 8:
        raise ValueError(f"{path}: index offset out of bounds")
    index = json.loads(blob[index_off:-8].decode())
    tensors = {}
    for name, entry in index["tensors"].items():
        off = entry["offset"]
        if blob[off : off + 4] != MAGIC:
            raise ValueError(f"{path}: bad magic for tensor {name!r}")
        version, rank = struct.unpack("<HB", blob[off + 4 : off + 7])
        if version != VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        dims = struct.unpack(f"<{rank}I", blob[off + 7 : off + 7 + 4 * rank])
        start = off + 7 + 4 * rank
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        data = np.frombuffer(blob, dtype="<f4", count=count, offset=start)
        tensors[name] = data.reshape(dims).copy()
    return tensors, index.get("meta", {})


def write_ppm_sequence(directory, frames: np.ndarray, prefix: str = "frame"):
    """Write ``frames`` ([T, H, W, 3] floats in [0, 1]) as numbered P6 files."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    data = np.clip(np.rint(np.asarray(frames, dtype=np.float64) * 255.0), 0, 255)
    data = data.astype(np.uint8)
    paths = []
    for i, frame in enumerate(data):
        h, w, _ = frame.shape
        p = directory / f"{prefix}_{i:05d}.ppm"
        with open(p, "wb") as fh:
            fh.write(f"P6\n{w} {h}\n255\n".encode())
            fh.write(frame.tobytes())
        paths.append(p)
    return paths
