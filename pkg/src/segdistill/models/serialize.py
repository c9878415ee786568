"""Versioned binary model container.

Layout (all integers little-endian)::

    8 bytes   magic b"SEGDIST1"
    1 byte    format version
    u32       topology length, then UTF-8 JSON topology
    repeated  u16 name length, name, u32 byte length, float32 blob
    u32       CRC-32 of every preceding byte

Batch-norm running statistics are stored as blobs named
``<bn>.running_mean`` / ``<bn>.running_var`` next to the parameters.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from pathlib import Path

import numpy as np

from .networks import build_from_topology

MAGIC = b"SEGDIST1"
FORMAT_VERSION = 1
TOPOLOGY_FORMAT = "segdistill-topology/1"


class ModelFormatError(ValueError):
    pass


class BadMagicError(ModelFormatError):
    pass


class UnsupportedVersionError(ModelFormatError):
    pass


class ChecksumError(ModelFormatError):
    pass


class TruncatedError(ModelFormatError):
    pass


def _state(net) -> dict[str, np.ndarray]:
    state = {name: t.data for name, t in net.named_parameters().items()}
    for name, stats in net.named_buffers().items():
        state[f"{name}.running_mean"] = stats.mean
        state[f"{name}.running_var"] = stats.var
    return state


def to_bytes(net) -> bytes:
    topo = dict(net.topology(), format=TOPOLOGY_FORMAT)
    text = json.dumps(topo, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, bytes([FORMAT_VERSION]), struct.pack("<I", len(text)), text]
    for name, arr in _state(net).items():
        key = name.encode("utf-8")
        blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        parts += [struct.pack("<H", len(key)), key, struct.pack("<I", len(blob)), blob]
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def from_bytes(buf: bytes):
    if len(buf) < len(MAGIC) + 1:
        raise TruncatedError(f"model file too short ({len(buf)} bytes)")
    if buf[: len(MAGIC)] != MAGIC:
        raise BadMagicError(f"bad magic {buf[:len(MAGIC)]!r}, expected {MAGIC!r}")
    version = buf[len(MAGIC)]
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"unsupported model format version {version} (this build reads {FORMAT_VERSION})"
        )
    if len(buf) < len(MAGIC) + 1 + 4 + 4:
        raise TruncatedError(f"model file too short ({len(buf)} bytes)")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise ChecksumError("checksum mismatch: file is truncated or corrupted")

    pos = len(MAGIC) + 1
    (tlen,) = struct.unpack_from("<I", body, pos)
    pos += 4
    topo = json.loads(body[pos : pos + tlen].decode("utf-8"))
    pos += tlen
    if topo.get("format") != TOPOLOGY_FORMAT:
        raise UnsupportedVersionError(f"unsupported topology format {topo.get('format')!r}")

    blobs: dict[str, np.ndarray] = {}
    while pos < len(body):
        (klen,) = struct.unpack_from("<H", body, pos)
        pos += 2
        key = body[pos : pos + klen].decode("utf-8")
        pos += klen
        (blen,) = struct.unpack_from("<I", body, pos)
        pos += 4
        if pos + blen > len(body):
            raise TruncatedError(f"blob {key!r} runs past end of file")
        blobs[key] = np.frombuffer(body[pos : pos + blen], dtype="<f4").astype(np.float32)
        pos += blen

    net = build_from_topology(topo)
    _load_state(net, blobs)
    return net


def _load_state(net, blobs: dict[str, np.ndarray]) -> None:
    expected = _state(net)
    missing = sorted(set(expected) - set(blobs))
    extra = sorted(set(blobs) - set(expected))
    if missing or extra:
        raise ModelFormatError(f"parameter set mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
    params = net.named_parameters()
    buffers = net.named_buffers()
    for name, arr in blobs.items():
        if arr.size != expected[name].size:
            raise ModelFormatError(f"blob {name!r} has {arr.size} values, expected {expected[name].size}")
        value = arr.reshape(expected[name].shape)
        if name in params:
            params[name].data = value.copy()
        elif name.endswith(".running_mean"):
            buffers[name[: -len(".running_mean")]].mean = value.copy()
        else:
            buffers[name[: -len(".running_var")]].var = value.copy()


def save_model(net, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(to_bytes(net))
    os.replace(tmp, path)
    return path


def load_model(path):
    return from_bytes(Path(path).read_bytes())


def state_snapshot(net) -> dict[str, np.ndarray]:
    """Deep copy of parameters and running stats (for best-epoch restore)."""
    return {k: v.copy() for k, v in _state(net).items()}


def restore_snapshot(net, snap: dict[str, np.ndarray]) -> None:
    _load_state(net, {k: v.copy() for k, v in snap.items()})
