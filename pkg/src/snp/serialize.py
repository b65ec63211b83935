"""Binary model and calibration file formats.

Model file (.snpm):
    magic "SNPM" | u32 version=1 | u64 header length | header JSON (UTF-8)
    | zero padding to a 64-byte boundary | tensor payloads.

The header is canonical JSON (sorted keys, compact separators) holding the
config and a tensor index [{name, shape, offset, length}]. Offsets are
relative to the payload base (the first 64-byte-aligned byte after the
header), and every tensor is 64-byte aligned; payloads are raw little-endian
float32 in the canonical tensor order. The model fingerprint is the sha256
hex digest of the header bytes.

Calibration file (.snpc):
    magic "SNPC" | u32 version=1 | u32 image count | u32 C | u32 H | u32 W
    | images as contiguous little-endian float32.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import DimensionError, FormatError, IntegrityError, TruncatedFileError
from .model import ModelBundle, ModelConfig, expected_shapes

MODEL_MAGIC = b"SNPM"
CALIB_MAGIC = b"SNPC"
VERSION = 1
ALIGN = 64


def canonical_json_bytes(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def dumps_pretty(obj) -> str:
    """Canonical human-facing JSON: sorted keys, two-space indent."""
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _align(offset: int) -> int:
    return (offset + ALIGN - 1) // ALIGN * ALIGN


def _header_dict(model: ModelBundle) -> dict:
    index = []
    offset = 0
    for name, shape in expected_shapes(model.config).items():
        size = int(np.prod(shape)) * 4
        index.append(
            {"name": name, "shape": list(shape), "offset": offset, "length": size}
        )
        offset = _align(offset + size)
    return {"config": model.config.to_dict(), "tensors": index}


def fingerprint(model: ModelBundle) -> str:
    """sha256 of the header this bundle serializes to."""
    return hashlib.sha256(canonical_json_bytes(_header_dict(model))).hexdigest()


def save_model(model: ModelBundle, path: str | Path) -> str:
    """Write a .snpm file; returns the model fingerprint."""
    if model.ln_active is not None:
        raise ValueError("masked bundles are in-memory oracles and cannot be saved")
    model.validate()
    header = canonical_json_bytes(_header_dict(model))
    payload_base = _align(4 + 4 + 8 + len(header))
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        f.write(b"\x00" * (payload_base - (16 + len(header))))
        offset = 0
        for name in expected_shapes(model.config):
            t = np.ascontiguousarray(model.tensors[name], dtype="<f4")
            pad = _align(offset) - offset if offset % ALIGN else 0
            f.write(b"\x00" * pad)
            offset += pad
            f.write(t.tobytes())
            offset += t.nbytes
    return hashlib.sha256(header).hexdigest()


def load_model(path: str | Path) -> tuple[ModelBundle, str]:
    """Read a .snpm file; returns (bundle, fingerprint).

    Validates magic, version, header/payload consistency, and every tensor
    shape against the config before returning.
    """
    data = Path(path).read_bytes()
    if len(data) < 16:
        raise TruncatedFileError(f"{path}: shorter than the fixed header")
    if data[:4] != MODEL_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}, expected {MODEL_MAGIC!r}")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    (header_len,) = struct.unpack_from("<Q", data, 8)
    if 16 + header_len > len(data):
        raise TruncatedFileError(f"{path}: header extends past end of file")
    header = data[16 : 16 + header_len]
    try:
        doc = json.loads(header.decode("utf-8"))
        config = ModelConfig.from_dict(doc["config"])
        index = doc["tensors"]
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed header ({exc})") from exc

    shapes = expected_shapes(config)
    if len(index) != len(shapes):
        raise IntegrityError(
            f"{path}: header lists {len(index)} tensors, config implies {len(shapes)}"
        )
    payload_base = _align(16 + header_len)
    tensors: dict[str, np.ndarray] = {}
    for entry, (name, shape) in zip(index, shapes.items()):
        if entry["name"] != name:
            raise IntegrityError(f"{path}: tensor {entry['name']!r} out of canonical order")
        if tuple(entry["shape"]) != shape:
            raise DimensionError(
                f"{path}: tensor {name} has shape {entry['shape']}, config expects {list(shape)}"
            )
        size = int(np.prod(shape)) * 4
        if entry["length"] != size:
            raise IntegrityError(f"{path}: tensor {name} length {entry['length']} != {size}")
        start = payload_base + entry["offset"]
        if start % ALIGN:
            raise IntegrityError(f"{path}: tensor {name} is not 64-byte aligned")
        if start + size > len(data):
            raise TruncatedFileError(f"{path}: payload of {name} extends past end of file")
        arr = np.frombuffer(data, dtype="<f4", count=size // 4, offset=start)
        tensors[name] = arr.reshape(shape).copy()
    bundle = ModelBundle(config=config, tensors=tensors)
    bundle.validate()
    return bundle, hashlib.sha256(header).hexdigest()


def save_calibration(images: np.ndarray, path: str | Path) -> None:
    """Write a .snpc file from a (count, C, H, W) float32 array."""
    if images.ndim != 4:
        raise DimensionError(f"calibration array must be 4-D, got {images.shape}")
    count, c, h, w = images.shape
    with open(path, "wb") as f:
        f.write(CALIB_MAGIC)
        f.write(struct.pack("<IIIII", VERSION, count, c, h, w))
        f.write(np.ascontiguousarray(images, dtype="<f4").tobytes())


def load_calibration(path: str | Path) -> np.ndarray:
    """Read a .snpc file into a (count, C, H, W) float32 array."""
    data = Path(path).read_bytes()
    if len(data) < 24:
        raise TruncatedFileError(f"{path}: shorter than the fixed header")
    if data[:4] != CALIB_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}, expected {CALIB_MAGIC!r}")
    version, count, c, h, w = struct.unpack_from("<IIIII", data, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    size = count * c * h * w * 4
    if 24 + size > len(data):
        raise TruncatedFileError(f"{path}: payload extends past end of file")
    if 24 + size < len(data):
        raise IntegrityError(f"{path}: {len(data) - 24 - size} trailing bytes after payload")
    arr = np.frombuffer(data, dtype="<f4", count=size // 4, offset=24)
    return arr.reshape(count, c, h, w).copy()
