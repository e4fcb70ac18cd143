"""Object voxel file formats.

Binary ``.pkvx`` layout (all integers little-endian)::

    offset  size  field
    0       4     magic b"PKVX"
    4       2     version (u16, currently 1)
    6       12    dims nx, ny, nz (3 x u32)
    18      4     cell size in micrometers (u32)
    22      ...   occupancy bits, ceil(nx*ny*nz / 8) bytes

Voxel ``(x, y, z)`` has linear index ``x + nx * (y + ny * z)`` (x fastest).  Bit
``k`` lives in byte ``k // 8`` at bit position ``k % 8`` (least significant bit
first).  Padding bits in the last byte are zero.

JSON mirror (for hand-written fixtures)::

    {"format": "pkvx-json", "version": 1, "dims": [nx, ny, nz],
     "cell_size_um": 2000,
     "layers": [[row_y0, row_y1, ...], ...]}

``layers[z][y]`` is a string of ``nx`` characters, ``#`` for occupied and ``.``
for empty, character ``x`` giving voxel ``(x, y, z)``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .geometry import VoxelGrid

MAGIC = b"PKVX"
VERSION = 1
_HEADER = struct.Struct("<4sH3II")


class VoxelFormatError(ValueError):
    pass


def _cell_um(cell_size: float) -> int:
    um = cell_size * 1000.0
    if abs(um - round(um)) > 1e-6:
        raise VoxelFormatError(f"cell size {cell_size} mm is not a whole number of micrometers")
    return int(round(um))


def to_bytes(grid: VoxelGrid) -> bytes:
    nx, ny, nz = grid.dims
    flat = grid.occupancy.reshape(-1, order="F")
    bits = np.packbits(flat, bitorder="little")
    return _HEADER.pack(MAGIC, VERSION, nx, ny, nz, _cell_um(grid.cell_size)) + bits.tobytes()


def from_bytes(data: bytes) -> VoxelGrid:
    if len(data) < _HEADER.size:
        raise VoxelFormatError("truncated header")
    magic, version, nx, ny, nz, cell_um = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise VoxelFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise VoxelFormatError(f"unsupported version {version}")
    n = nx * ny * nz
    payload = np.frombuffer(data, dtype=np.uint8, offset=_HEADER.size)
    if len(payload) != (n + 7) // 8:
        raise VoxelFormatError(f"expected {(n + 7) // 8} occupancy bytes, got {len(payload)}")
    flat = np.unpackbits(payload, bitorder="little", count=n).astype(bool)
    if n % 8 and np.unpackbits(payload[-1:], bitorder="little")[n % 8:].any():
        raise VoxelFormatError("non-zero padding bits")
    return VoxelGrid(flat.reshape((nx, ny, nz), order="F"), cell_um / 1000.0)


def to_json(grid: VoxelGrid) -> dict:
    nx, ny, nz = grid.dims
    occ = grid.occupancy
    layers = [
        ["".join("#" if occ[x, y, z] else "." for x in range(nx)) for y in range(ny)]
        for z in range(nz)
    ]
    return {
        "format": "pkvx-json",
        "version": VERSION,
        "dims": [nx, ny, nz],
        "cell_size_um": _cell_um(grid.cell_size),
        "layers": layers,
    }


def from_json(doc: dict) -> VoxelGrid:
    if doc.get("format") != "pkvx-json":
        raise VoxelFormatError("not a pkvx-json document")
    if doc.get("version") != VERSION:
        raise VoxelFormatError(f"unsupported version {doc.get('version')}")
    nx, ny, nz = (int(d) for d in doc["dims"])
    layers = doc["layers"]
    if len(layers) != nz or any(len(layer) != ny for layer in layers):
        raise VoxelFormatError("layer count does not match dims")
    occ = np.zeros((nx, ny, nz), dtype=bool)
    for z, layer in enumerate(layers):
        for y, row in enumerate(layer):
            if len(row) != nx or set(row) - {"#", "."}:
                raise VoxelFormatError(f"bad row at z={z}, y={y}: {row!r}")
            occ[:, y, z] = [c == "#" for c in row]
    return VoxelGrid(occ, int(doc["cell_size_um"]) / 1000.0)


def save(grid: VoxelGrid, path: str | Path) -> None:
    path = Path(path)
    if path.suffix == ".json":
        path.write_text(json.dumps(to_json(grid), indent=1) + "\n")
    else:
        path.write_bytes(to_bytes(grid))


def load(path: str | Path) -> VoxelGrid:
    path = Path(path)
    if path.suffix == ".json":
        return from_json(json.loads(path.read_text()))
    return from_bytes(path.read_bytes())
