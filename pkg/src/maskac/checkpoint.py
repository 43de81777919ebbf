"""Binary weight checkpoints with integrity checking.

Layout, all integers little-endian:

    magic    4 bytes   b"MA3C"
    version  u32       currently 1
    config   u32 byte length, then utf-8 key=value lines
    count    u32       number of tensor records
    record   u16 name length, name utf-8, u8 rank, u32 x rank dims,
             float32 little-endian row-major payload
    crc32    u32       checksum of every preceding byte

Payloads are always single precision, so loading a checkpoint written
from a double-precision run reproduces the weights only to float32.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .network import NetworkConfig, weight_names, weight_shapes

MAGIC = b"MA3C"
VERSION = 1

_CONFIG_FIELDS = (
    "input_hw", "fe_channels", "lstm_channels", "branch_channels", "n_actions",
    "policy_mask_enabled", "value_mask_enabled", "conv_kernel", "conv_stride", "conv_padding",
)


class CheckpointError(Exception):
    """The file is not a valid checkpoint (magic, version, checksum, or names)."""


def _encode_config(config):
    lines = []
    for key in _CONFIG_FIELDS:
        value = getattr(config, key)
        if key == "fe_channels":
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key}={value}")
    return "\n".join(lines).encode()


def _decode_config(blob):
    fields = {}
    for line in blob.decode().splitlines():
        key, _, raw = line.partition("=")
        if key == "fe_channels":
            fields[key] = tuple(int(v) for v in raw.split(","))
        elif key in ("policy_mask_enabled", "value_mask_enabled"):
            fields[key] = raw == "true"
        else:
            fields[key] = int(raw)
    missing = set(_CONFIG_FIELDS) - set(fields)
    if missing:
        raise CheckpointError(f"checkpoint config block is missing {sorted(missing)}")
    return NetworkConfig(**fields)


def save_checkpoint(weights, config, path):
    """Write the named tensors (Tensor or ndarray values) as float32 records."""
    arrays = {}
    for name, value in weights.items():
        data = value.data if hasattr(value, "data") else value
        arrays[name] = np.ascontiguousarray(np.asarray(data), dtype="<f4")

    parts = [MAGIC, struct.pack("<I", VERSION)]
    blob = _encode_config(config)
    parts.append(struct.pack("<I", len(blob)))
    parts.append(blob)
    parts.append(struct.pack("<I", len(arrays)))
    for name in sorted(arrays):
        arr = arrays[name]
        encoded = name.encode()
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CheckpointError("checkpoint truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def u16(self):
        return struct.unpack("<H", self.take(2))[0]

    def u8(self):
        return self.take(1)[0]


def load_checkpoint(path):
    """Read and validate a checkpoint; returns (weights dict of float32 arrays, config)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 + 4 + 4:
        raise CheckpointError(f"{path}: too short to be a checkpoint")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CheckpointError(f"{path}: checksum mismatch")

    r = _Reader(body)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    config = _decode_config(r.take(r.u32()))
    count = r.u32()
    weights = {}
    for _ in range(count):
        name = r.take(r.u16()).decode()
        rank = r.u8()
        shape = tuple(r.u32() for _ in range(rank))
        n_bytes = 4 * int(np.prod(shape)) if shape else 4
        data = np.frombuffer(r.take(n_bytes), dtype="<f4").reshape(shape)
        weights[name] = data.astype(np.float32, copy=True)
    if r.pos != len(body):
        raise CheckpointError(f"{path}: trailing bytes after tensor records")

    expected = set(weight_names(config))
    if set(weights) != expected:
        raise CheckpointError(
            f"{path}: tensor names do not match the stored config "
            f"(missing {sorted(expected - set(weights))}, "
            f"extra {sorted(set(weights) - expected)})")
    for name, shape in weight_shapes(config).items():
        if weights[name].shape != shape:
            raise CheckpointError(f"{path}: {name} has shape {weights[name].shape}, "
                                  f"expected {shape}")
    return weights, config
