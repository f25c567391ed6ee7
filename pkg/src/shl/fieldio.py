"""SHF1 binary field files with JSON sidecars.

Layout: 8-byte magic ``SHF1\\0\\0\\0\\0``, ``u32 d``, ``u32 kind``, ``u64 n``,
``f64 h`` (little-endian, 32 bytes in total), then the values as little-endian
f64 in row-major order, component-major for edge and plaquette fields.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .lattice import FIELD_CLASSES, KIND_SCALAR, PeriodicGrid, n_components
from .util import to_jsonable

MAGIC = b"SHF1\0\0\0\0"
_HEADER = struct.Struct("<8sIIQd")


class FieldFormatError(ValueError):
    pass


def write_field(path, grid: PeriodicGrid, values: np.ndarray, kind: int = KIND_SCALAR,
                provenance: dict | None = None) -> Path:
    path = Path(path)
    values = np.asarray(values, dtype="<f8")
    expected = FIELD_CLASSES[kind].expected_shape(grid)
    if values.shape != expected:
        raise FieldFormatError(f"values of shape {values.shape} do not match {expected}")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, grid.d, kind, grid.n, grid.h))
        fh.write(np.ascontiguousarray(values).tobytes())
    meta = {"grid": grid.as_dict(), "kind": kind, "components": n_components(grid, kind)}
    if provenance:
        meta["provenance"] = to_jsonable(provenance)
    sidecar = path.with_suffix(path.suffix + ".json")
    sidecar.write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    return path


def read_field(path):
    """Return ``(grid, kind, values, sidecar_dict_or_None)``."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise FieldFormatError("file too short for an SHF1 header")
    magic, d, kind, n, h = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FieldFormatError("bad magic; not an SHF1 file")
    grid = PeriodicGrid(d, n, h)
    shape = FIELD_CLASSES[kind].expected_shape(grid)
    payload = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if payload.size != int(np.prod(shape)):
        raise FieldFormatError("payload size does not match the header")
    sidecar = path.with_suffix(path.suffix + ".json")
    meta = json.loads(sidecar.read_text()) if sidecar.exists() else None
    return grid, kind, payload.reshape(shape).astype(float), meta
