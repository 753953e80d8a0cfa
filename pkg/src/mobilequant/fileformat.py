"""Versioned binary container for float and quantized models.

Layout (all integers little-endian)::

    b"QFG1" | u16 version | u32 header length | header JSON (UTF-8)
    | zero padding to a 64-byte boundary | tensor payloads, each 64-byte aligned
    | u32 CRC32 of every preceding byte

The header's ``tensors`` table lists ``name``, ``dtype``, ``shape``,
``offset`` (relative to the first payload byte), ``nbytes`` and an optional
``packing``. ``"nibble"`` packing stores 4-bit codes two per byte, low nibble
first; ``shape`` is always the logical (unpacked) shape.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"QFG1"
VERSION = 1
ALIGN = 64
_PREFIX = struct.Struct("<4sHI")
_DTYPES = {"<u1", "<u2", "<i8", "<f8"}
_LABELS = {np.dtype(np.uint8): "<u1", np.dtype(np.uint16): "<u2", np.dtype(np.int64): "<i8",
           np.dtype(np.float64): "<f8"}


class FormatError(IOError):
    """Unreadable, truncated, corrupted or too-new model file."""


def _pad(n: int) -> int:
    return -n % ALIGN


def pack_nibbles(codes: np.ndarray) -> np.ndarray:
    """Two 4-bit codes per byte, element 2i in the low nibble."""
    flat = np.asarray(codes, dtype=np.uint8).reshape(-1)
    if flat.size and flat.max() > 15:
        raise ValueError("nibble packing needs codes in [0, 15]")
    if flat.size % 2:
        flat = np.concatenate([flat, np.zeros(1, np.uint8)])
    return (flat[0::2] | (flat[1::2] << 4)).astype(np.uint8)


def unpack_nibbles(packed: np.ndarray, count: int) -> np.ndarray:
    packed = np.asarray(packed, dtype=np.uint8)
    out = np.empty(packed.size * 2, dtype=np.uint8)
    out[0::2] = packed & 0x0F
    out[1::2] = packed >> 4
    return out[:count]


def encode(header: dict, tensors: dict[str, np.ndarray], packing: dict[str, str] | None = None) -> bytes:
    """Serialize deterministically: same inputs give the same bytes."""
    packing = packing or {}
    table, blobs, offset = [], [], 0
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        kind = packing.get(name)
        if kind == "nibble":
            raw = pack_nibbles(arr).tobytes()
            dtype = "<u1"
        elif kind is None:
            dtype = _LABELS.get(arr.dtype.newbyteorder("="))
            if dtype is None:
                raise ValueError(f"tensor {name}: unsupported dtype {arr.dtype}")
            raw = np.ascontiguousarray(arr, dtype=dtype).tobytes()
        else:
            raise ValueError(f"tensor {name}: unknown packing {kind!r}")
        entry = {"name": name, "dtype": dtype, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
        if kind:
            entry["packing"] = kind
        table.append(entry)
        blobs.append(raw + b"\0" * _pad(len(raw)))
        offset += len(raw) + _pad(len(raw))
    head = json.dumps({**header, "tensors": table}, sort_keys=True, separators=(",", ":")).encode()
    prefix = _PREFIX.pack(MAGIC, VERSION, len(head)) + head
    body = prefix + b"\0" * _pad(len(prefix)) + b"".join(blobs)
    return body + struct.pack("<I", zlib.crc32(body))


def decode(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if len(data) < _PREFIX.size + 4:
        raise FormatError("file too short to be a model container")
    magic, version, head_len = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}; not a model container")
    if version > VERSION:
        raise FormatError(f"file format version {version} is newer than the supported version {VERSION}")
    (crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(data[:-4]) != crc:
        raise FormatError("CRC mismatch; file is corrupted")
    start = _PREFIX.size + head_len
    if start > len(data) - 4:
        raise FormatError("header extends past end of file")
    try:
        header = json.loads(data[_PREFIX.size:start].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable header: {exc}") from exc
    base = start + _pad(start)
    try:
        tensors, spans = _read_tensors(data, header.pop("tensors", []), base, len(data) - 4)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed tensor table: {exc}") from exc
    spans.sort()
    for (_, hi, a), (lo, _, b) in zip(spans, spans[1:]):
        if lo < hi:
            raise FormatError(f"tensors {a} and {b} overlap")
    return header, tensors


def _read_tensors(data: bytes, table: list, base: int, end: int):
    tensors, spans = {}, []
    for entry in table:
        lo, n = base + int(entry["offset"]), int(entry["nbytes"])
        if lo < base or n < 0 or lo + n > end:
            raise FormatError(f"tensor {entry['name']} lies outside the payload")
        spans.append((lo, lo + n, entry["name"]))
        if entry["dtype"] not in _DTYPES:
            raise FormatError(f"tensor {entry['name']}: unsupported dtype {entry['dtype']}")
        flat = np.frombuffer(data, dtype=entry["dtype"], count=n // np.dtype(entry["dtype"]).itemsize, offset=lo)
        shape = tuple(int(x) for x in entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        if entry.get("packing") == "nibble":
            flat = unpack_nibbles(flat, count)
        if flat.size != count:
            raise FormatError(f"tensor {entry['name']}: payload size does not match shape {shape}")
        tensors[entry["name"]] = flat.reshape(shape).copy()
    return tensors, spans


def save(path: str | Path, header: dict, tensors: dict[str, np.ndarray],
         packing: dict[str, str] | None = None) -> bytes:
    data = encode(header, tensors, packing)
    Path(path).write_bytes(data)
    return data


def load(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    return decode(data)


# -- float models ---------------------------------------------------------------------

def save_float_model(path: str | Path, model) -> bytes:
    header = {"kind": "float", "config": model.config.to_dict()}
    return save(path, header, model.params())


def load_float_model(path: str | Path):
    from .model import ModelConfig, ModelGraph

    header, tensors = load(path)
    if header.get("kind") != "float":
        raise FormatError(f"{path} holds a {header.get('kind')!r} model, expected a float model")
    try:
        return ModelGraph.from_params(ModelConfig(**header["config"]), tensors)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: inconsistent float model: {exc}") from exc
