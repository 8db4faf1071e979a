#!/usr/bin/env python
"""
Length-prefixed section files shared by tagger checkpoints and embedding models.

Layout: magic bytes, uint32 section count, then per section a uint32 name
length, the UTF-8 name, a uint64 payload length and the payload. Integers are
little-endian. Arrays are stored row-major as little-endian float32 or int64
behind a small dtype/shape prefix.
"""

import json
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Any, Dict, Iterable, Tuple

import numpy as np

from .errors import InputFormatError

_DTYPES = {b"f": np.dtype("<f4"), b"i": np.dtype("<i8")}


def encode_json(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def decode_json(payload: bytes) -> Any:
    return json.loads(payload.decode("utf-8"))


def encode_array(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    code = b"i" if np.issubdtype(array.dtype, np.integer) else b"f"
    data = np.ascontiguousarray(array, dtype=_DTYPES[code])
    header = code + struct.pack("<I", data.ndim) + struct.pack(f"<{data.ndim}Q", *data.shape)
    return header + data.tobytes(order="C")


def decode_array(payload: bytes) -> np.ndarray:
    code = payload[:1]
    if code not in _DTYPES:
        raise InputFormatError(f"Unknown array dtype code {code!r}")
    (ndim,) = struct.unpack_from("<I", payload, 1)
    shape = struct.unpack_from(f"<{ndim}Q", payload, 5)
    offset = 5 + 8 * ndim
    return np.frombuffer(payload, dtype=_DTYPES[code], offset=offset).reshape(shape).copy()


def write_sections(path: Path, magic: bytes, sections: Iterable[Tuple[str, bytes]]) -> None:
    sections = list(sections)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(magic)
        f.write(struct.pack("<I", len(sections)))
        for name, payload in sections:
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<Q", len(payload)))
            f.write(payload)


def read_sections(path: Path, magic: bytes) -> Dict[str, bytes]:
    data = Path(path).read_bytes()
    if data[:len(magic)] != magic:
        raise InputFormatError(f"{path}: not a {magic.decode()} file")
    offset = len(magic)
    try:
        (count,) = struct.unpack_from("<I", data, offset)
        offset += 4
        sections: Dict[str, bytes] = OrderedDict()
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", data, offset)
            offset += 4
            name = data[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (size,) = struct.unpack_from("<Q", data, offset)
            offset += 8
            sections[name] = data[offset:offset + size]
            offset += size
    except struct.error as e:
        raise InputFormatError(f"{path}: truncated section file ({e})")
    return sections
