"""Network inputs: manager candidate planes and worker orientation planes.

Planes live on a coarse grid of ``ceil(X / f) x ceil(Y / f)`` cells for an
integer input factor ``f``; legality and drop heights stay full resolution.
Heights are divided by the box height cap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..geometry import EMPTY, VIEW_NAMES, ObjectModel, OrientedShape
from ..placement import PackingState, drop_map, legality_from_drop
from ..planners import bbox_sequence

WORKER_CHANNELS = 8
MANAGER_CHANNELS = 1 + len(VIEW_NAMES)


def input_factor(box_shape: tuple[int, int], resolution: int) -> int:
    """Smallest integer factor that brings the box grid down to at most ``resolution`` per side."""
    return max(1, math.ceil(max(box_shape) / resolution))


def block_reduce(a: np.ndarray, f: int, fn, fill) -> np.ndarray:
    """Reduce trailing 2D blocks of ``f x f`` cells with ``fn``; edges are padded with ``fill``."""
    if f == 1:
        return a
    *lead, X, Y = a.shape
    rx, ry = -(-X // f), -(-Y // f)
    padded = np.full((*lead, rx * f, ry * f), fill, dtype=a.dtype)
    padded[..., :X, :Y] = a
    blocks = padded.reshape(*lead, rx, f, ry, f)
    return fn(blocks, axis=(-3, -1))


def paste_centered(canvas_shape: tuple[int, int], patch: np.ndarray) -> np.ndarray:
    """Place ``patch`` so its center cell sits on the canvas center cell; overflow is cropped."""
    X, Y = canvas_shape
    w, l = patch.shape
    out = np.zeros(canvas_shape, dtype=np.float64)
    u, v = X // 2 - w // 2, Y // 2 - l // 2
    a0, b0 = max(0, -u), max(0, -v)
    a1, b1 = min(w, X - u), min(l, Y - v)
    out[u + a0 : u + a1, v + b0 : v + b1] = patch[a0:a1, b0:b1]
    return out


def contact_map(box: np.ndarray, footprint: tuple[int, int], z: np.ndarray) -> np.ndarray:
    """Fraction of the footprint's bounding-box perimeter touching a wall or a
    column that rises above the drop height, per footprint-center cell."""
    X, Y = box.shape
    w, l = footprint
    wall = np.iinfo(np.int64).max
    padded = np.full((X + w + 1, Y + l + 1), wall, dtype=np.int64)
    # padded[a + w//2 + 1, b + l//2 + 1] == box[a, b]; the center at (x, y) has its
    # footprint corner at (x - w//2, y - l//2), i.e. padded[x + 1, y + 1].
    padded[w // 2 + 1 : w // 2 + 1 + X, l // 2 + 1 : l // 2 + 1 + Y] = box
    count = np.zeros((X, Y), dtype=np.int64)
    for d in range(w):
        count += padded[1 + d : 1 + d + X, 0:Y] > z
        count += padded[1 + d : 1 + d + X, l + 1 : l + 1 + Y] > z
    for d in range(l):
        count += padded[0:X, 1 + d : 1 + d + Y] > z
        count += padded[w + 1 : w + 1 + X, 1 + d : 1 + d + Y] > z
    return count / (2 * (w + l))


@dataclass
class WorkerInput:
    planes: np.ndarray  # (n_orient, WORKER_CHANNELS, rx, ry) float32
    legal: np.ndarray  # (n_orient, X, Y) bool, full resolution
    z: np.ndarray  # (n_orient, X, Y) int64 drop heights in quanta
    shapes: list[OrientedShape]
    factor: int

    @property
    def coarse_legal(self) -> np.ndarray:
        return block_reduce(self.legal, self.factor, np.any, False)


def worker_features(state: PackingState, shapes: Sequence[OrientedShape], factor: int = 1) -> WorkerInput:
    """Per orientation: box map, drop height, resulting object top, legality, the
    object's top and bottom maps centered on the box grid, the resulting
    stack height (box maximum after the placement) and side contact."""
    box = state.box.heights
    hmax = float(state.h_max_q)
    n = len(shapes)
    X, Y = box.shape
    legal = np.zeros((n, X, Y), dtype=bool)
    zs = np.zeros((n, X, Y), dtype=np.int64)
    full = np.zeros((n, WORKER_CHANNELS, X, Y), dtype=np.float64)
    box_max = int(box.max())
    for k, shape in enumerate(shapes):
        z = drop_map(state.box, shape.h_b)
        ok = legality_from_drop(z, shape.height_q, state.h_max_q)
        legal[k], zs[k] = ok, z
        full[k, 0] = box / hmax
        full[k, 1] = np.where(ok, z / hmax, 1.0)
        full[k, 2] = np.where(ok, (z + shape.height_q) / hmax, 1.0)
        full[k, 3] = ok
        full[k, 4] = paste_centered((X, Y), shape.h_t.heights / hmax)
        hb = shape.h_b.heights
        full[k, 5] = paste_centered((X, Y), np.where(hb == EMPTY, 0, hb) / hmax)
        full[k, 6] = np.where(ok, np.maximum(box_max, z + shape.height_q) / hmax, 1.0)
        full[k, 7] = np.where(ok, contact_map(box, shape.footprint, z), 0.0)
    if factor > 1:
        reduced = np.stack(
            [
                block_reduce(full[:, 0], factor, np.max, 0.0),
                block_reduce(full[:, 1], factor, np.min, 1.0),
                block_reduce(full[:, 2], factor, np.min, 1.0),
                block_reduce(full[:, 3], factor, np.mean, 0.0),
                block_reduce(full[:, 4], factor, np.max, 0.0),
                block_reduce(full[:, 5], factor, np.max, 0.0),
                block_reduce(full[:, 6], factor, np.min, 1.0),
                block_reduce(full[:, 7], factor, np.max, 0.0),
            ],
            axis=1,
        )
    else:
        reduced = full
    return WorkerInput(reduced.astype(np.float32), legal, zs, list(shapes), factor)


@dataclass
class ManagerInput:
    planes: np.ndarray  # (K, MANAGER_CHANNELS, rx, ry) float32; absent slots are all zero
    ids: list[str | None]

    @property
    def live(self) -> np.ndarray:
        return np.array([i is not None for i in self.ids], dtype=bool)


def top_k(models: Sequence[ObjectModel], k: int) -> list[ObjectModel]:
    return bbox_sequence(models)[:k]


def manager_features(
    state: PackingState, candidates: Sequence[ObjectModel], k: int, factor: int = 1
) -> ManagerInput:
    """One slot per candidate (at most ``k``, in the given order): box map plus the six views."""
    if len(candidates) > k:
        raise ValueError(f"{len(candidates)} candidates for {k} slots")
    X, Y = state.box.shape
    hmax = float(state.h_max_q)
    rx, ry = -(-X // factor), -(-Y // factor)
    planes = np.zeros((k, MANAGER_CHANNELS, rx, ry), dtype=np.float32)
    box = block_reduce(state.box.heights / hmax, factor, np.max, 0.0)
    ids: list[str | None] = [None] * k
    for s, model in enumerate(candidates):
        ids[s] = model.id
        planes[s, 0] = box
        for c, name in enumerate(VIEW_NAMES, start=1):
            view = paste_centered((X, Y), model.principal_views[name].heights / hmax)
            planes[s, c] = block_reduce(view, factor, np.max, 0.0)
    return ManagerInput(planes, ids)
