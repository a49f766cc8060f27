"""Versioned binary containers for embedding matrices and model parameters.

Two layouts share the magic ``KGSR``:

* single matrix: magic, version (u32 LE), row count (u32), dimension (u32),
  then row-major float32 values;
* section table: magic, version, section count (u32), then per section a
  UTF-8 name (u16 length prefix), rows (u32), cols (u32), float32 payload.

Index snapshots use magic ``KGSI`` and append a trailing CRC32 (see
:mod:`kgrec.index`).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import CorruptSnapshot

MAGIC_MODEL = b"KGSR"
FORMAT_VERSION = 1


def save_matrix(path: str | Path, matrix: np.ndarray) -> None:
    m = np.ascontiguousarray(matrix, dtype=np.float32)
    if m.ndim != 2:
        raise ValueError(f"expected 2-d matrix, got shape {matrix.shape}")
    with open(path, "wb") as fh:
        fh.write(MAGIC_MODEL)
        fh.write(struct.pack("<III", FORMAT_VERSION, m.shape[0], m.shape[1]))
        fh.write(m.tobytes())


def load_matrix(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16 or blob[:4] != MAGIC_MODEL:
        raise CorruptSnapshot(f"{path}: bad magic")
    version, rows, cols = struct.unpack("<III", blob[4:16])
    if version != FORMAT_VERSION:
        raise CorruptSnapshot(f"{path}: unsupported version {version}")
    expected = 16 + 4 * rows * cols
    if len(blob) != expected:
        raise CorruptSnapshot(f"{path}: truncated payload ({len(blob)} != {expected})")
    data = np.frombuffer(blob, dtype="<f4", offset=16)
    return data.reshape(rows, cols).astype(np.float64)


def save_sections(path: str | Path, sections: dict[str, np.ndarray]) -> None:
    """Write named parameter blocks; 1-d arrays are stored as single rows."""
    with open(path, "wb") as fh:
        fh.write(MAGIC_MODEL)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(sections)))
        for name in sorted(sections):
            arr = np.ascontiguousarray(np.atleast_2d(sections[name]), dtype=np.float32)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
            fh.write(arr.tobytes())


def load_sections(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != MAGIC_MODEL:
        raise CorruptSnapshot(f"{path}: bad magic")
    version, count = struct.unpack("<II", blob[4:12])
    if version != FORMAT_VERSION:
        raise CorruptSnapshot(f"{path}: unsupported version {version}")
    offset = 12
    sections: dict[str, np.ndarray] = {}
    for _ in range(count):
        try:
            (name_len,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            name = blob[offset:offset + name_len].decode("utf-8")
            offset += name_len
            rows, cols = struct.unpack_from("<II", blob, offset)
            offset += 8
            nbytes = 4 * rows * cols
            data = np.frombuffer(blob, dtype="<f4", count=rows * cols, offset=offset)
            offset += nbytes
        except (struct.error, ValueError):
            raise CorruptSnapshot(f"{path}: truncated section table") from None
        sections[name] = data.reshape(rows, cols).astype(np.float64)
    if offset != len(blob):
        raise CorruptSnapshot(f"{path}: trailing bytes after section table")
    return sections


def save_id_map(path: str | Path, ids: list[str]) -> None:
    """Adjacent TSV mapping id -> row index."""
    with open(path, "w", encoding="utf-8") as fh:
        for row, eid in enumerate(ids):
            fh.write(f"{eid}\t{row}\n")


def load_id_map(path: str | Path) -> list[str]:
    ids: list[tuple[int, str]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise CorruptSnapshot(f"{path}:{lineno}: expected 2 fields")
            ids.append((int(parts[1]), parts[0]))
    ids.sort()
    return [eid for _, eid in ids]
