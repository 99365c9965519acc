"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"LQPT" | u32 version | u64 CRC-64/XZ of payload | payload
    payload = u32 header length | UTF-8 JSON header | float64 tensors

The header is canonical JSON (sorted keys, no whitespace). Tensors follow
``ModelBundle.named_parameters()`` order, each C-contiguous; the header's
``tensors`` list records every name and shape.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from . import _accel
from .core import locale_registry, pt_registry
from .encoder import EncoderConfig
from .models import ModelBundle, VariantKind, create_bundle

MAGIC = b"LQPT"
VERSION = 1
_PREFIX = struct.Struct("<4sIQ")


class CheckpointError(ValueError):
    pass


def _header(bundle: ModelBundle) -> dict:
    return {
        "variant": bundle.variant.value,
        "encoder": bundle.encoder_cfg.to_dict(),
        "locales": bundle.locales.names(),
        "product_types": bundle.pts.names(),
        "tokenizer": {"scheme": "fnv1a64-word-trigram", "n_buckets": bundle.encoder_cfg.n_buckets,
                      "max_len": bundle.encoder_cfg.max_len, "lowercase": True},
        "metadata": bundle.metadata,
        "tensors": [{"name": n, "shape": list(p.value.shape)} for n, p in bundle.named_parameters()],
    }


def to_bytes(bundle: ModelBundle) -> bytes:
    header = json.dumps(_header(bundle), sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode()
    chunks = [struct.pack("<I", len(header)), header]
    for _, p in bundle.named_parameters():
        chunks.append(np.ascontiguousarray(p.value, dtype="<f8").tobytes())
    payload = b"".join(chunks)
    return _PREFIX.pack(MAGIC, VERSION, _accel.crc64(payload)) + payload


def save(bundle: ModelBundle, path):
    Path(path).write_bytes(to_bytes(bundle))


def from_bytes(data: bytes) -> ModelBundle:
    if len(data) < _PREFIX.size + 4:
        raise CheckpointError("truncated checkpoint")
    magic, version, crc = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    payload = data[_PREFIX.size:]
    if _accel.crc64(payload) != crc:
        raise CheckpointError("checksum mismatch: checkpoint is corrupt or truncated")
    (hlen,) = struct.unpack_from("<I", payload)
    try:
        header = json.loads(payload[4:4 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"bad header: {e}") from None
    cfg = EncoderConfig(**header["encoder"])
    bundle = create_bundle(VariantKind(header["variant"]), locale_registry(header["locales"]),
                           pt_registry(header["product_types"]), cfg)
    bundle.metadata = header["metadata"]
    named = bundle.named_parameters()
    specs = header["tensors"]
    if [(s["name"], tuple(s["shape"])) for s in specs] != [(n, p.value.shape) for n, p in named]:
        raise CheckpointError("tensor table does not match the declared architecture")
    offset = 4 + hlen
    for _, p in named:
        nbytes = p.value.size * 8
        if offset + nbytes > len(payload):
            raise CheckpointError("truncated tensor data")
        p.value[...] = np.frombuffer(payload, dtype="<f8", count=p.value.size, offset=offset).reshape(p.value.shape)
        offset += nbytes
    if offset != len(payload):
        raise CheckpointError("trailing bytes after tensor data")
    return bundle


def load(path) -> ModelBundle:
    return from_bytes(Path(path).read_bytes())


def digest(data: bytes) -> str:
    """Hex CRC from a serialized checkpoint's prefix."""
    return f"{_PREFIX.unpack_from(data)[2]:016x}"
