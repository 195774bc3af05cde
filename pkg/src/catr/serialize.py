"""Binary tensor file format and checkpoint manifests.

Layout: magic "CATR", u8 version=1, u8 dtype (0=f32, 1=f64), u8 rank,
one padding byte, rank little-endian u32 dims, then raw little-endian
row-major data. Round-trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"CATR"
FORMAT_VERSION = 1

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES_BY_KIND = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class FormatError(ValueError):
    """Corrupt or unsupported tensor file."""


def save_array(path, arr: np.ndarray) -> None:
    path = Path(path)
    arr = np.asarray(arr, order="C")  # ascontiguousarray would promote rank 0 to rank 1
    if arr.dtype not in _CODES_BY_KIND:
        raise FormatError(f"{path}: dtype {arr.dtype} not storable (f32/f64 only)")
    code = _CODES_BY_KIND[arr.dtype]
    rank = arr.ndim
    if rank > 255:
        raise FormatError(f"{path}: rank {rank} exceeds format limit")
    header = MAGIC + struct.pack("<BBBB", FORMAT_VERSION, code, rank, 0)
    dims = struct.pack(f"<{rank}I", *arr.shape) if rank else b""
    payload = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes(order="C")
    path.write_bytes(header + dims + payload)


def load_array(path) -> np.ndarray:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic")
    version, code, rank, pad = struct.unpack("<BBBB", raw[4:8])
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if code not in _DTYPE_CODES:
        raise FormatError(f"{path}: unknown dtype code {code}")
    if pad != 0:
        raise FormatError(f"{path}: nonzero padding byte")
    dtype = _DTYPE_CODES[code]
    need = 8 + 4 * rank
    if len(raw) < need:
        raise FormatError(f"{path}: truncated dimension header")
    dims = struct.unpack(f"<{rank}I", raw[8:need]) if rank else ()
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    expected = need + count * dtype.itemsize
    if len(raw) != expected:
        raise FormatError(f"{path}: payload length {len(raw) - need} != expected {count * dtype.itemsize}")
    arr = np.frombuffer(raw[need:], dtype=dtype).reshape(dims)
    return arr.astype(arr.dtype.newbyteorder("="), copy=True)


def save_checkpoint(dirpath, params: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """One tensor file per named parameter plus a JSON manifest."""
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    files = {}
    for i, (name, arr) in enumerate(params.items()):
        fname = f"p{i:04d}.t"
        save_array(dirpath / fname, arr)
        files[name] = fname
    manifest = {"checkpoint_version": 1, "params": files, "meta": meta or {}}
    (dirpath / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))


def load_checkpoint(dirpath) -> tuple[dict[str, np.ndarray], dict]:
    dirpath = Path(dirpath)
    manifest_path = dirpath / "manifest.json"
    if not manifest_path.exists():
        raise FormatError(f"{manifest_path}: missing checkpoint manifest")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("checkpoint_version") != 1:
        raise FormatError(f"{manifest_path}: unsupported checkpoint version")
    params = {name: load_array(dirpath / fname) for name, fname in manifest["params"].items()}
    return params, manifest.get("meta", {})
