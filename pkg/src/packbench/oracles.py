"""Voxel-space reference checks, independent of the heightmap shortcuts.

These work directly on 3D occupancy and are slow; they exist to validate the
fast paths on small instances and to audit finished episodes.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .geometry import OrientationGrid, VoxelGrid, cell_quanta, quarter_turns, rotate_voxels


def descending_drop(terrain_q: np.ndarray, grid: VoxelGrid, corner: tuple[int, int]) -> int:
    """Lower the voxel object one height quantum at a time until the next step would collide.

    ``terrain_q`` holds solid column heights (quanta) under the object's
    footprint placed at ``corner``; the object starts above the highest column.
    """
    q = cell_quanta(grid.cell_size)
    occ = np.repeat(grid.occupancy, q, axis=2)  # z resolution: one quantum
    nx, ny, nz = occ.shape
    u, v = corner
    cols = terrain_q[u : u + nx, v : v + ny]
    if cols.shape != (nx, ny):
        raise ValueError("object leaves the terrain")
    top = int(cols.max())
    solid = np.arange(top + nz)[None, None, :] < cols[:, :, None]
    z = top
    while z > 0 and not (solid[:, :, z - 1 : z - 1 + nz] & occ).any():
        z -= 1
    return z


def placed_voxels(grid: VoxelGrid, orientations: OrientationGrid, index: tuple[int, int]) -> VoxelGrid:
    roll, pitch, yaw = orientations.euler(*index)
    if any(quarter_turns(a) is None for a in (roll, pitch, yaw)):
        raise ValueError("voxel audit supports right-angle orientations only")
    return rotate_voxels(grid, roll, pitch, yaw)


def find_violations(
    box_cells: tuple[int, int],
    h_max_q: int,
    items: Sequence[tuple[VoxelGrid, tuple[int, int], int]],
) -> list[str]:
    """Interpenetrations, wall breaches and height-cap breaches among placed voxel objects.

    ``items`` are ``(oriented grid, footprint corner, z in quanta)``.
    """
    problems: list[str] = []
    if not items:
        return problems
    qs = [cell_quanta(g.cell_size) for g, _, _ in items]
    unit = math.gcd(*qs, *(z for _, _, z in items), h_max_q)
    depth = max(z + g.dims[2] * q for (g, _, z), q in zip(items, qs))
    counts = np.zeros((box_cells[0], box_cells[1], depth // unit + 1), dtype=np.int16)
    for k, ((g, (u, v), z), q) in enumerate(zip(items, qs)):
        nx, ny, nz = g.dims
        if u < 0 or v < 0 or u + nx > box_cells[0] or v + ny > box_cells[1]:
            problems.append(f"item {k} crosses a box wall")
            continue
        if z < 0:
            problems.append(f"item {k} below the floor")
            continue
        if z + nz * q > h_max_q:
            problems.append(f"item {k} exceeds the height cap")
        occ = np.repeat(g.occupancy, q // unit, axis=2)
        counts[u : u + nx, v : v + ny, z // unit : z // unit + occ.shape[2]] += occ
    if (counts > 1).any():
        problems.append(f"{int((counts > 1).sum())} voxel units occupied twice")
    return problems
