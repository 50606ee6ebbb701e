"""Big-endian IDX files (the MNIST distribution format), optionally gzipped."""

from __future__ import annotations

import gzip
import logging
import struct
from pathlib import Path
from typing import Union

import numpy as np

from monocanon.exceptions import ParseError

from .const import GLYPH_SIZE, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC

_LOGGER = logging.getLogger(__name__)

_GZIP_MAGIC = b"\x1f\x8b"


def _read_bytes(path: Union[str, Path]) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == _GZIP_MAGIC:
        try:
            return gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise ParseError(0, f"corrupt gzip stream in {path}") from exc
    return raw


def read_idx(path: Union[str, Path]) -> np.ndarray:
    """Images as uint8 (count, 28, 28) or labels as uint8 (count,)."""
    _LOGGER.debug(">> read_idx(path=%s)", path)
    raw = _read_bytes(path)
    if len(raw) < 8:
        raise ParseError(len(raw), f"{path}: file too short for an IDX header")
    (magic,) = struct.unpack_from(">I", raw, 0)
    if magic == IDX_IMAGES_MAGIC:
        if len(raw) < 16:
            raise ParseError(len(raw), f"{path}: truncated image header")
        count, rows, cols = struct.unpack_from(">III", raw, 4)
        if (rows, cols) != (GLYPH_SIZE, GLYPH_SIZE):
            raise ParseError(8, f"{path}: expected {GLYPH_SIZE}x{GLYPH_SIZE} images, got {rows}x{cols}")
        offset, shape = 16, (count, rows, cols)
    elif magic == IDX_LABELS_MAGIC:
        (count,) = struct.unpack_from(">I", raw, 4)
        offset, shape = 8, (count,)
    else:
        raise ParseError(0, f"{path}: bad magic 0x{magic:08x}")
    size = int(np.prod(shape))
    if len(raw) < offset + size:
        raise ParseError(len(raw), f"{path}: truncated payload, expected {offset + size} bytes")
    data = np.frombuffer(raw, dtype=np.uint8, count=size, offset=offset).reshape(shape)
    if magic == IDX_LABELS_MAGIC and data.size and data.max() > 9:
        bad = int(np.argmax(data > 9))
        raise ParseError(offset + bad, f"{path}: label {data[bad]} outside 0..9")
    return data.copy()


def write_idx(path: Union[str, Path], data: np.ndarray, compress: bool = False) -> None:
    """Writes uint8 images (count, 28, 28) or labels (count,) in IDX layout."""
    arr = np.asarray(data, dtype=np.uint8)
    if arr.ndim == 3:
        header = struct.pack(">IIII", IDX_IMAGES_MAGIC, *arr.shape)
    elif arr.ndim == 1:
        header = struct.pack(">II", IDX_LABELS_MAGIC, arr.shape[0])
    else:
        raise ValueError(f"cannot write array of shape {arr.shape} as IDX")
    payload = header + arr.tobytes()
    Path(path).write_bytes(gzip.compress(payload, mtime=0) if compress else payload)
