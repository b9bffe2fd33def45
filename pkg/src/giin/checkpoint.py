"""Binary checkpoint files.

Layout (little-endian)::

    magic "GIINCK01" | version u32 | schema hash u64
    topology tag: u16 length + UTF-8 | scale f64
    config text: u32 length + UTF-8 (key = value lines)
    tensor count u32, then per tensor:
        name: u16 length + UTF-8 | ndim u8 | dims u32 * ndim | f64 data
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, TrainConfig, config_from_text, config_to_text
from .errors import ConfigError, FormatError
from .optim import ParamStore
from .schema import DEFAULT_SCHEMA, CategorySchema

MAGIC = b"GIINCK01"
VERSION = 1


def atomic_write(path, data: bytes | str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _str(s: str, width: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<" + width, len(b)) + b


def encode_checkpoint(params: ParamStore, cfg: TrainConfig,
                      schema: CategorySchema = DEFAULT_SCHEMA) -> bytes:
    parts = [MAGIC, struct.pack("<IQ", VERSION, schema.hash64()),
             _str(cfg.topology or "none", "H"), struct.pack("<d", cfg.scale),
             _str(config_to_text(cfg), "I"), struct.pack("<I", len(params))]
    for name, t in params.items():
        parts.append(_str(name, "H"))
        parts.append(struct.pack("<B", t.ndim) + struct.pack(f"<{t.ndim}I", *t.shape))
        parts.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    return b"".join(parts)


def checkpoint_save(params: ParamStore, cfg: TrainConfig, path,
                    schema: CategorySchema = DEFAULT_SCHEMA) -> None:
    atomic_write(path, encode_checkpoint(params, cfg, schema))


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw, self.pos, self.path = raw, 0, path

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.raw):
            raise FormatError(f"{self.path}: truncated checkpoint")
        vals = struct.unpack_from(fmt, self.raw, self.pos)
        self.pos += size
        return vals

    def string(self, width: str) -> str:
        (n,) = self.take("<" + width)
        if self.pos + n > len(self.raw):
            raise FormatError(f"{self.path}: truncated checkpoint")
        s = self.raw[self.pos:self.pos + n]
        self.pos += n
        try:
            return s.decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"{self.path}: invalid UTF-8 in checkpoint") from None


def checkpoint_load(path, schema: CategorySchema = DEFAULT_SCHEMA):
    """Read a checkpoint; returns ``(params, config)``.

    Raises FormatError when the magic, version, schema hash, topology tag
    or tensor layout disagree with what the embedded config implies.
    """
    from .model import GiinModel

    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    r = _Reader(raw, path)
    r.pos = 8
    version, schema_hash = r.take("<IQ")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    if schema_hash != schema.hash64():
        raise FormatError(f"{path}: schema hash mismatch; checkpoint was written for another schema")
    topology = r.string("H")
    (scale,) = r.take("<d")
    try:
        cfg = config_from_text(r.string("I"), ExperimentConfig, str(path))
        cfg.validate()
    except ConfigError as e:
        raise FormatError(f"{path}: embedded config invalid: {e}") from None
    if (cfg.topology or "none") != topology:
        raise FormatError(f"{path}: topology tag {topology!r} disagrees with config "
                          f"({cfg.topology or 'none'})")
    if scale != cfg.scale:
        raise FormatError(f"{path}: scale {scale} disagrees with config ({cfg.scale})")
    (count,) = r.take("<I")
    arrays = {}
    for _ in range(count):
        name = r.string("H")
        (ndim,) = r.take("<B")
        shape = r.take(f"<{ndim}I")
        n = int(np.prod(shape)) if ndim else 1
        if r.pos + 8 * n > len(raw):
            raise FormatError(f"{path}: truncated tensor {name}")
        arrays[name] = np.frombuffer(raw, "<f8", n, r.pos).reshape(shape).astype(np.float64)
        r.pos += 8 * n
    if r.pos != len(raw):
        raise FormatError(f"{path}: {len(raw) - r.pos} trailing bytes")
    expected = GiinModel(cfg, schema).params
    if set(arrays) != set(expected) or any(arrays[k].shape != expected[k].shape for k in arrays):
        raise FormatError(f"{path}: tensors do not match the architecture of the embedded config")
    expected.load(arrays)
    # keep checkpoint order
    params = ParamStore()
    for name in arrays:
        params.add(name, expected[name])
    return params, cfg
