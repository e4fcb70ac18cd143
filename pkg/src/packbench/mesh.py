"""Triangle-mesh ingestion: ASCII STL / triangle-soup JSON to voxel grids.

Triangle-soup JSON::

    {"units": "mm", "triangles": [[[x, y, z], [x, y, z], [x, y, z]], ...]}

Vertices are matched by exact coordinate equality when checking closedness.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from pathlib import Path

import numpy as np

from .geometry import VoxelGrid


class MeshError(ValueError):
    """Mesh is not a closed, consistently oriented surface."""


def read_ascii_stl(text: str) -> np.ndarray:
    tris: list[list[list[float]]] = []
    current: list[list[float]] = []
    for line in text.splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "vertex":
            current.append([float(v) for v in parts[1:4]])
        elif parts[0] == "endfacet":
            if len(current) != 3:
                raise MeshError(f"facet with {len(current)} vertices")
            tris.append(current)
            current = []
    if not tris:
        raise MeshError("no facets found")
    return np.asarray(tris, dtype=float)


def read_triangle_json(doc: dict) -> np.ndarray:
    if doc.get("units", "mm") != "mm":
        raise MeshError("triangle soup must be in millimeters")
    tris = np.asarray(doc["triangles"], dtype=float)
    if tris.ndim != 3 or tris.shape[1:] != (3, 3):
        raise MeshError(f"expected (n, 3, 3) triangles, got {tris.shape}")
    return tris


def load_mesh(path: str | Path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".stl":
        return read_ascii_stl(path.read_text())
    return read_triangle_json(json.loads(path.read_text()))


def check_closed(triangles: np.ndarray) -> None:
    """Raise ``MeshError`` unless every edge is shared by exactly two faces with opposite directions."""
    _, inv = np.unique(triangles.reshape(-1, 3), axis=0, return_inverse=True)
    faces = inv.reshape(-1, 3)
    directed = Counter()
    for a, b, c in faces:
        if a == b or b == c or a == c:
            raise MeshError("degenerate face with repeated vertex")
        for e in ((a, b), (b, c), (c, a)):
            directed[e] += 1
    for (a, b), n in directed.items():
        if n > 1:
            raise MeshError(f"edge {a}->{b} used {n} times in the same direction (flipped or non-manifold face)")
        if directed.get((b, a), 0) != 1:
            raise MeshError(f"edge {a}-{b} has no opposite half-edge (open boundary)")


def _owns(e: np.ndarray, dx: float, dy: float) -> np.ndarray:
    # points on an edge belong to the triangle only for "top-left" edges, so
    # rays through a shared edge or vertex are counted once
    if dy < 0 or (dy == 0 and dx > 0):
        return e >= 0
    return e > 0


def voxelize_mesh(triangles, cell_size: float) -> VoxelGrid:
    """Voxel is occupied iff its center is inside the mesh (vertical-ray parity)."""
    tris = np.asarray(triangles, dtype=float)
    if tris.ndim != 3 or tris.shape[1:] != (3, 3) or len(tris) < 4:
        raise MeshError("need at least four triangles shaped (n, 3, 3)")
    check_closed(tris)
    lo = np.floor(tris.reshape(-1, 3).min(axis=0) / cell_size) * cell_size
    hi = tris.reshape(-1, 3).max(axis=0)
    dims = [max(1, int(math.ceil((h - l) / cell_size - 1e-9))) for l, h in zip(lo, hi)]
    nx, ny, nz = dims
    hit_cols: list[np.ndarray] = []
    hit_z: list[np.ndarray] = []
    for a, b, c in tris:
        area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if area == 0:
            continue  # vertical face: parallel to every ray
        if area < 0:
            b, c = c, b
            area = -area
        xmin, xmax = min(a[0], b[0], c[0]), max(a[0], b[0], c[0])
        ymin, ymax = min(a[1], b[1], c[1]), max(a[1], b[1], c[1])
        i0 = max(0, int(math.ceil((xmin - lo[0]) / cell_size - 0.5)))
        i1 = min(nx - 1, int(math.floor((xmax - lo[0]) / cell_size - 0.5)))
        j0 = max(0, int(math.ceil((ymin - lo[1]) / cell_size - 0.5)))
        j1 = min(ny - 1, int(math.floor((ymax - lo[1]) / cell_size - 0.5)))
        if i0 > i1 or j0 > j1:
            continue
        ii, jj = np.meshgrid(np.arange(i0, i1 + 1), np.arange(j0, j1 + 1), indexing="ij")
        px = lo[0] + (ii + 0.5) * cell_size
        py = lo[1] + (jj + 0.5) * cell_size
        inside = np.ones(ii.shape, dtype=bool)
        weights = []
        for p, q in ((a, b), (b, c), (c, a)):
            e = (q[0] - p[0]) * (py - p[1]) - (q[1] - p[1]) * (px - p[0])
            inside &= _owns(e, q[0] - p[0], q[1] - p[1])
            weights.append(e)
        if not inside.any():
            continue
        # weights[k] is the edge opposite vertex (k + 2) % 3
        z = (weights[1] * a[2] + weights[2] * b[2] + weights[0] * c[2]) / area
        hit_cols.append((ii * ny + jj)[inside])
        hit_z.append(z[inside])
    occ = np.zeros((nx, ny, nz), dtype=bool)
    if hit_cols:
        cols = np.concatenate(hit_cols)
        zs = np.concatenate(hit_z)
        centers = lo[2] + (np.arange(nz) + 0.5) * cell_size
        order = np.lexsort((zs, cols))
        cols, zs = cols[order], zs[order]
        bounds = np.flatnonzero(np.diff(cols)) + 1
        for seg_cols, seg_z in zip(np.split(cols, bounds), np.split(zs, bounds)):
            above = len(seg_z) - np.searchsorted(seg_z, centers, side="right")
            occ[seg_cols[0] // ny, seg_cols[0] % ny, :] = above % 2 == 1
    grid = VoxelGrid(occ, cell_size)
    if grid.is_empty():
        raise MeshError("mesh encloses no voxel centers at this cell size")
    return grid.cropped()
