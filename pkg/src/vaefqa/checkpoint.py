"""Versioned binary checkpoint format.

Layout (all integers little-endian)::

    magic        4 bytes   b"VFQA"
    version      u16
    arch_len     u32       length of the architecture JSON
    arch_json    arch_len  UTF-8, sorted keys, no whitespace
    n_params     u64       number of float32 values in the parameter blob
    n_buffers    u64       number of float32 values in the buffer blob
    params       n_params * 4 bytes, '<f4', tensors in canonical layer order
    buffers      n_buffers * 4 bytes, '<f4', same ordering rule

Tensor order and shapes are implied by the architecture descriptor, so only
the flat blobs are stored.
"""

import hashlib
import json
import struct

import numpy as np

from .vae import CHECKPOINT_VERSION, ArchDescriptor, VaeModel, expected_param_count, network

MAGIC = b"VFQA"
_HEAD = struct.Struct("<4sHI")
_COUNTS = struct.Struct("<QQ")


class CheckpointError(ValueError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


def save_checkpoint(model):
    net = network(model.arch)
    arch_json = json.dumps(model.arch.to_dict(), sort_keys=True, separators=(",", ":")).encode()
    pblob = b"".join(
        np.ascontiguousarray(model.params[name], dtype="<f4").tobytes()
        for name, _, _ in net.param_specs()
    )
    bblob = b"".join(
        np.ascontiguousarray(model.buffers[name], dtype="<f4").tobytes()
        for name, _, _ in net.buffer_specs()
    )
    return b"".join([
        _HEAD.pack(MAGIC, CHECKPOINT_VERSION, len(arch_json)),
        arch_json,
        _COUNTS.pack(len(pblob) // 4, len(bblob) // 4),
        pblob,
        bblob,
    ])


def load_checkpoint(data):
    data = bytes(data)
    if len(data) < _HEAD.size:
        if not MAGIC.startswith(data[:4]):
            raise BadMagicError("not a checkpoint (bad magic)")
        raise TruncatedCheckpointError("checkpoint header truncated")
    magic, version, arch_len = _HEAD.unpack_from(data)
    if magic != MAGIC:
        raise BadMagicError(f"not a checkpoint (magic {magic!r})")
    if version != CHECKPOINT_VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    pos = _HEAD.size
    if len(data) < pos + arch_len + _COUNTS.size:
        raise TruncatedCheckpointError("checkpoint header truncated")
    try:
        arch = ArchDescriptor.from_dict(json.loads(data[pos:pos + arch_len].decode()))
    except (ValueError, TypeError, KeyError) as exc:
        raise CorruptCheckpointError(f"bad architecture descriptor: {exc}") from exc
    pos += arch_len
    n_params, n_buffers = _COUNTS.unpack_from(data, pos)
    pos += _COUNTS.size
    if n_params != expected_param_count(arch):
        raise CorruptCheckpointError(
            f"parameter count {n_params} does not match architecture ({expected_param_count(arch)})"
        )
    net = network(arch)
    n_buf_expected = sum(int(np.prod(shape)) for _, shape, _ in net.buffer_specs())
    if n_buffers != n_buf_expected:
        raise CorruptCheckpointError(
            f"buffer count {n_buffers} does not match architecture ({n_buf_expected})"
        )
    end = pos + 4 * (n_params + n_buffers)
    if len(data) < end:
        raise TruncatedCheckpointError(f"parameter blob truncated ({len(data)} < {end} bytes)")
    if len(data) > end:
        raise CorruptCheckpointError("trailing bytes after parameter blob")
    values = np.frombuffer(data, dtype="<f4", count=n_params + n_buffers, offset=pos)
    out, off = {}, 0
    for name, shape, _ in net.param_specs():
        size = int(np.prod(shape))
        out[name] = values[off:off + size].astype(np.float32).reshape(shape)
        off += size
    bufs = {}
    for name, shape, _ in net.buffer_specs():
        size = int(np.prod(shape))
        bufs[name] = values[off:off + size].astype(np.float32).reshape(shape)
        off += size
    return VaeModel(arch, out, bufs, version)


def model_id(model_or_bytes):
    data = model_or_bytes if isinstance(model_or_bytes, (bytes, bytearray)) else save_checkpoint(model_or_bytes)
    return hashlib.sha256(data).hexdigest()[:16]
