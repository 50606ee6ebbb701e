"""MCAN checkpoint files: a shape table followed by little-endian float64 tensors."""

from __future__ import annotations

import logging
import struct
from pathlib import Path
from typing import Union

import numpy as np

from monocanon.exceptions import ParseError, StructuralError

from .const import CHECKPOINT_HEADER, CHECKPOINT_MAGIC, CHECKPOINT_VERSION

_LOGGER = logging.getLogger(__name__)


def save_checkpoint(path: Union[str, Path], tensors: dict[str, np.ndarray]) -> None:
    """Writes named tensors in sorted name order."""
    names = sorted(tensors)
    parts = [struct.pack(CHECKPOINT_HEADER, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(names))]
    for name in names:
        encoded = name.encode("utf-8")
        shape = np.shape(tensors[name])
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        parts.append(struct.pack(f"<B{len(shape)}I", len(shape), *shape))
    for name in names:
        parts.append(np.ascontiguousarray(tensors[name], dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))
    _LOGGER.debug("Saved %s tensors to %s", len(names), path)


def load_checkpoint(path: Union[str, Path]) -> dict[str, np.ndarray]:
    """Reads a checkpoint written by ``save_checkpoint``."""
    raw = Path(path).read_bytes()
    offset = 0

    def take(fmt: str) -> tuple:
        nonlocal offset
        size = struct.calcsize(fmt)
        if offset + size > len(raw):
            raise ParseError(offset, f"truncated checkpoint {path}")
        values = struct.unpack_from(fmt, raw, offset)
        offset += size
        return values

    magic, version, count = take(CHECKPOINT_HEADER)
    if magic != CHECKPOINT_MAGIC:
        raise ParseError(0, f"bad checkpoint magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise ParseError(4, f"unsupported checkpoint version {version}")
    table = []
    for _ in range(count):
        (length,) = take("<H")
        start = offset
        (name,) = take(f"<{length}s")
        try:
            decoded = name.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(start, "tensor name is not UTF-8") from exc
        (ndim,) = take("<B")
        table.append((decoded, take(f"<{ndim}I")))
    tensors = {}
    for name, shape in table:
        size = int(np.prod(shape, dtype=np.int64))
        if offset + 8 * size > len(raw):
            raise ParseError(offset, f"truncated payload for tensor {name}")
        tensors[name] = np.frombuffer(raw, dtype="<f8", count=size, offset=offset).astype(np.float64).reshape(shape)
        offset += 8 * size
    if offset != len(raw):
        raise ParseError(offset, "trailing bytes after payload")
    return tensors


def assign_parameters(model, tensors: dict[str, np.ndarray], strict: bool = True) -> list[str]:
    """Copies tensors into ``model.parameters()`` in place; returns the names loaded."""
    params = model.parameters()
    missing = sorted(set(params) - set(tensors))
    if strict and missing:
        raise StructuralError(f"checkpoint lacks parameters: {', '.join(missing)}")
    loaded = []
    for name, value in params.items():
        if name not in tensors:
            continue
        if value.shape != tensors[name].shape:
            raise StructuralError(f"{name}: checkpoint shape {tensors[name].shape} != model shape {value.shape}")
        value[...] = tensors[name]
        loaded.append(name)
    model.mark_updated()
    return loaded
