import numpy as np
import pytest
import torch

from packbench.geometry import ObjectModel, VoxelGrid, column_maps
from packbench.placement import PackingState


def box_grid(nx: int, ny: int, nz: int, cell: float = 2.0) -> VoxelGrid:
    return VoxelGrid(np.ones((nx, ny, nz), dtype=bool), cell)


def cuboid_model(nx: int, ny: int, nz: int, cell: float = 2.0, oid: str = "c") -> ObjectModel:
    return ObjectModel.from_grid(oid, box_grid(nx, ny, nz, cell))


def random_blob(rng: np.random.Generator, max_dim: int = 4) -> VoxelGrid:
    """Random tight, non-empty voxel object (not necessarily connected)."""
    while True:
        dims = tuple(int(d) for d in rng.integers(1, max_dim + 1, size=3))
        occ = rng.random(dims) < 0.6
        if occ.any():
            return VoxelGrid(occ, 1.0).cropped()


def heights_by_scan(grid: VoxelGrid) -> tuple[np.ndarray, np.ndarray]:
    """Per-column (top, bottom) in cells by explicit loops; bottom -1 for empty columns."""
    nx, ny, nz = grid.dims
    top = np.zeros((nx, ny), dtype=int)
    bottom = np.full((nx, ny), -1)
    for x in range(nx):
        for y in range(ny):
            zs = [z for z in range(nz) if grid.occupancy[x, y, z]]
            if zs:
                top[x, y], bottom[x, y] = max(zs) + 1, min(zs)
    return top, bottom


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)
    yield


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def empty_state(cells: int = 10, cell: float = 10.0, height: float = 100.0, ids=("a", "b", "c")) -> PackingState:
    return PackingState.empty((cells * cell, cells * cell, height), cell, list(ids))


__all__ = ["box_grid", "cuboid_model", "random_blob", "heights_by_scan", "empty_state", "column_maps"]
