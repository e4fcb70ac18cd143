"""Placement geometry: drop heights, legality masks and packing-state updates.

A placement is addressed by the box cell ``(x, y)`` under the object's
footprint center.  For a footprint of ``w x l`` cells, object column ``(a, b)``
lands on box cell ``(x - w // 2 + a, y - l // 2 + b)``; this is the offset range
``s in [-floor(w/2), ceil(w/2) - 1]`` of the drop-height formula.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from .geometry import EMPTY, Heightmap, OrientedShape, to_mm, to_quanta

# brute_force_best refuses instances with more candidates than this
BRUTE_FORCE_CAP = 250_000


class IllegalPlacement(ValueError):
    pass


class NoSpace(Exception):
    """No legal placement exists."""


@dataclass(frozen=True)
class Placement:
    object_id: str
    orientation: tuple[int, int]
    position: tuple[int, int]
    z_q: int
    score: float = 0.0
    footprint: tuple[int, int] = (0, 0)
    stable: bool | None = None
    fallback: bool = False

    @property
    def z(self) -> float:
        """Drop height in millimeters."""
        return to_mm(self.z_q)

    @property
    def corner(self) -> tuple[int, int]:
        w, l = self.footprint
        return self.position[0] - w // 2, self.position[1] - l // 2


@dataclass(frozen=True)
class PackingState:
    box: Heightmap
    h_max_q: int
    packed: tuple[Placement, ...] = ()
    unpacked: frozenset[str] = frozenset()
    volumes: tuple[float, ...] = ()

    @classmethod
    def empty(
        cls, box_mm: tuple[float, float, float], cell_size: float, object_ids: Sequence[str] = ()
    ) -> PackingState:
        L, W, H = box_mm
        nx, ny = round(L / cell_size), round(W / cell_size)
        if abs(nx * cell_size - L) > 1e-6 or abs(ny * cell_size - W) > 1e-6:
            raise ValueError(f"box {L}x{W} mm is not a whole number of {cell_size} mm cells")
        return cls(Heightmap.flat(nx, ny, cell_size), to_quanta(H), (), frozenset(object_ids), ())

    @property
    def box_dims(self) -> tuple[float, float, float]:
        c = self.box.cell_size
        return (self.box.width_cells * c, self.box.length_cells * c, to_mm(self.h_max_q))

    @property
    def packed_volume(self) -> float:
        return float(sum(self.volumes))


def _center_range(n_box: int, w: int) -> tuple[int, int]:
    """Inclusive range of footprint-center indices that keep a width-``w`` footprint inside."""
    return w // 2, n_box - (w - w // 2)


def fits(box: Heightmap, footprint: tuple[int, int], x: int, y: int) -> bool:
    (x0, x1), (y0, y1) = _center_range(box.shape[0], footprint[0]), _center_range(box.shape[1], footprint[1])
    return x0 <= x <= x1 and y0 <= y <= y1


def drop_height_q(box: Heightmap, h_b: Heightmap, x: int, y: int) -> int:
    """Lowest collision-free height (quanta) of a vertically dropped object at ``(x, y)``."""
    w, l = h_b.shape
    if not fits(box, (w, l), x, y):
        raise IllegalPlacement(f"footprint {w}x{l} at ({x}, {y}) leaves the {box.shape} box")
    u, v = x - w // 2, y - l // 2
    region = box.heights[u : u + w, v : v + l]
    occ = h_b.heights != EMPTY
    return max(0, int((region[occ] - h_b.heights[occ]).max()))


def compute_z(box: Heightmap, h_b: Heightmap, x: int, y: int) -> float:
    """Drop height in millimeters; see :func:`drop_height_q`."""
    return to_mm(drop_height_q(box, h_b, x, y))


def _filter_max(a: np.ndarray, mask: np.ndarray) -> np.ndarray:
    if mask.all():
        return ndimage.maximum_filter(a, size=mask.shape, mode="constant", cval=-1)
    return ndimage.maximum_filter(a, footprint=mask, mode="constant", cval=-1)


def drop_map(box: Heightmap, h_b: Heightmap) -> np.ndarray:
    """Drop height (quanta) for every footprint-center cell; -1 where the footprint leaves the box.

    Footprint cells are grouped by bottom height so each group is one
    maximum filter over the box map.
    """
    hb = h_b.heights
    out = np.full(box.shape, -1, dtype=np.int64)
    w, l = hb.shape
    (x0, x1), (y0, y1) = _center_range(box.shape[0], w), _center_range(box.shape[1], l)
    if x1 < x0 or y1 < y0:
        return out
    z = np.zeros((x1 - x0 + 1, y1 - y0 + 1), dtype=np.int64)
    for level in np.unique(hb[hb != EMPTY]):
        filtered = _filter_max(box.heights, hb == level)
        np.maximum(z, filtered[x0 : x1 + 1, y0 : y1 + 1] - level, out=z)
    out[x0 : x1 + 1, y0 : y1 + 1] = z
    return out


def legality_from_drop(z: np.ndarray, height_q: int, h_max_q: int) -> np.ndarray:
    return (z >= 0) & (z + height_q <= h_max_q)


def legality_mask(box: Heightmap, h_t: Heightmap, h_b: Heightmap, h_max: float) -> np.ndarray:
    """Cells where the footprint fits inside the walls and the object stays under ``h_max`` mm."""
    z = drop_map(box, h_b)
    return legality_from_drop(z, int(h_t.heights.max()), to_quanta(h_max))


def covered_sum(box: Heightmap, h_t: Heightmap) -> np.ndarray:
    """Sum of box heights under the object's occupied columns, per footprint-center cell."""
    occ = (h_t.heights > 0).astype(np.int64)
    return ndimage.correlate(box.heights, occ, mode="constant", cval=0)


def added_volume_map(box: Heightmap, shape: OrientedShape, z: np.ndarray) -> np.ndarray:
    """Increase of the summed box heightmap (quanta x cells) for each candidate center."""
    h_t = shape.h_t.heights
    n_occ = int((h_t > 0).sum())
    return n_occ * z + int(h_t.sum()) - covered_sum(box, shape.h_t)


def apply_heights(box: Heightmap, h_t: Heightmap, corner: tuple[int, int], z_q: int) -> Heightmap:
    w, l = h_t.shape
    u, v = corner
    new = box.heights.copy()
    region = new[u : u + w, v : v + l]
    occ = h_t.heights > 0
    region[occ] = np.maximum(region[occ], z_q + h_t.heights[occ])
    return Heightmap(new, box.cell_size)


def apply_placement(
    state: PackingState, p: Placement, h_t: Heightmap, h_b: Heightmap, *, volume: float
) -> PackingState:
    """Return the state after dropping the object; raises ``IllegalPlacement`` if ``p`` is not legal."""
    if h_t.shape != h_b.shape:
        raise ValueError("top and bottom maps must share a footprint")
    if p.object_id not in state.unpacked:
        raise IllegalPlacement(f"object {p.object_id!r} is not unpacked")
    x, y = p.position
    z = drop_height_q(state.box, h_b, x, y)
    if z != p.z_q:
        raise IllegalPlacement(f"placement z={p.z_q} does not match drop height {z}")
    if z + int(h_t.heights.max()) > state.h_max_q:
        raise IllegalPlacement("object would exceed the box height")
    if p.footprint != h_t.shape:
        p = replace(p, footprint=h_t.shape)
    box = apply_heights(state.box, h_t, p.corner, z)
    return PackingState(
        box=box,
        h_max_q=state.h_max_q,
        packed=state.packed + (p,),
        unpacked=state.unpacked - {p.object_id},
        volumes=state.volumes + (float(volume),),
    )


def place(state: PackingState, object_id: str, shape: OrientedShape, x: int, y: int, score: float = 0.0) -> Placement:
    """Build the placement record for ``shape`` centered at ``(x, y)`` with its drop height."""
    z = drop_height_q(state.box, shape.h_b, x, y)
    return Placement(object_id, shape.index, (int(x), int(y)), z, float(score), shape.footprint)


@dataclass
class ScoreMatrix:
    """Per-orientation score grids with illegal cells forced to exactly zero."""

    scores: np.ndarray  # (n_orientations, X, Y)
    legality: np.ndarray
    indices: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.scores.shape != self.legality.shape:
            raise ValueError("scores and legality must have the same shape")
        self.scores = np.where(self.legality, self.scores, 0.0)

    def best(self) -> tuple[int, int, int]:
        """Highest-scoring legal (orientation, x, y); ties go to the first in index order."""
        if not self.legality.any():
            raise NoSpace("no legal cell in any orientation")
        masked = np.where(self.legality, self.scores, -np.inf)
        flat = int(np.argmax(masked))  # first maximum in C order
        return tuple(int(v) for v in np.unravel_index(flat, masked.shape))  # type: ignore[return-value]


def brute_force_best(
    state: PackingState,
    object_id: str,
    shapes: Sequence[OrientedShape],
    objective: Callable[[PackingState], float],
) -> Placement:
    """Exhaustive argmax of ``objective`` over every legal (orientation, x, y).

    Meant as a test oracle: every candidate is applied and scored, so instance
    size is capped at ``BRUTE_FORCE_CAP`` candidates.  Ties keep the smallest
    ``(i, j, x, y)``.  Raises ``NoSpace`` when nothing is legal.
    """
    n = len(shapes) * state.box.width_cells * state.box.length_cells
    if n > BRUTE_FORCE_CAP:
        raise ValueError(f"{n} candidates exceeds the brute-force cap of {BRUTE_FORCE_CAP}")
    best: tuple[float, tuple] | None = None
    best_p: Placement | None = None
    for shape in sorted(shapes, key=lambda s: s.index):
        for x, y in itertools.product(range(state.box.width_cells), range(state.box.length_cells)):
            if not fits(state.box, shape.footprint, x, y):
                continue
            p = place(state, object_id, shape, x, y)
            if p.z_q + shape.height_q > state.h_max_q:
                continue
            value = float(objective(apply_placement(state, p, shape.h_t, shape.h_b, volume=shape.volume)))
            key = (shape.index[0], shape.index[1], x, y)
            if best is None or value > best[0] or (value == best[0] and key < best[1]):
                best = (value, key)
                best_p = replace(p, score=value)
    if best_p is None:
        raise NoSpace(f"no legal placement for {object_id}")
    return best_p
