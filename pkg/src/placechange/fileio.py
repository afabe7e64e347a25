"""Small file helpers: atomic writes, JSON-lines and the PSDF descriptor blob."""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import ParseError

PSDF_MAGIC = b"PSDF"
_UMASK = os.umask(0)
os.umask(_UMASK)
_PSDF_HEADER = struct.Struct("<4sII")


def atomic_write_bytes(path, data: bytes) -> None:
    """Write ``data`` to ``path`` via a temp file in the same directory plus rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.chmod(tmp, 0o666 & ~_UMASK)  # mkstemp creates 0600
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def dumps(obj) -> str:
    # sort_keys keeps outputs byte-stable across runs
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_jsonl(path, header: dict, records: Iterable[dict]) -> None:
    lines = [dumps(header)]
    lines.extend(dumps(r) for r in records)
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_jsonl(path) -> list[tuple[int, dict]]:
    """Return ``(line_number, object)`` pairs, skipping blank lines."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(path, lineno, f"invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise ParseError(path, lineno, "expected a JSON object")
            out.append((lineno, obj))
    return out


def encode_psdf(descriptors: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(descriptors, dtype="<f4")
    if arr.ndim != 2:
        raise ValueError("descriptor array must be 2-D (count, dim)")
    count, dim = arr.shape
    return _PSDF_HEADER.pack(PSDF_MAGIC, count, dim) + arr.tobytes(order="C")


def decode_psdf(data: bytes, source="<bytes>") -> np.ndarray:
    if len(data) < _PSDF_HEADER.size:
        raise ParseError(source, 0, "descriptor blob shorter than header")
    magic, count, dim = _PSDF_HEADER.unpack_from(data)
    if magic != PSDF_MAGIC:
        raise ParseError(source, 0, f"bad magic {magic!r}")
    expected = _PSDF_HEADER.size + 4 * count * dim
    if len(data) != expected:
        raise ParseError(source, 0, f"blob size {len(data)} != expected {expected}")
    body = np.frombuffer(data, dtype="<f4", offset=_PSDF_HEADER.size, count=count * dim)
    return body.reshape(count, dim).astype(np.float32)


def write_psdf(path, descriptors: np.ndarray) -> None:
    atomic_write_bytes(path, encode_psdf(descriptors))


def read_psdf(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_psdf(fh.read(), source=path)
