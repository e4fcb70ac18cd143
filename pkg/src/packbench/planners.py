"""Baseline sequence and placement planners.

All searches break ties lexicographically on ``(i, j, x, y)`` so plans are a
pure function of (state, seed).
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .geometry import (
    ObjectModel,
    OrientationGrid,
    OrientedShape,
    VoxelGrid,
    bbox_volume,
    orient_object,
    quarter_turns,
    to_mm,
    unique_shapes,
)
from .placement import (
    NoSpace,
    PackingState,
    Placement,
    added_volume_map,
    drop_map,
    legality_from_drop,
    place,
)
from .rewards import stability_check

SEQUENCE_RULES = ("random", "bbox_volume_desc", "learned")
PLACEMENT_RULES = ("random", "hm", "packit_blb", "learned")


@dataclass(frozen=True)
class PlannerConfig:
    sequence_rule: str = "bbox_volume_desc"
    placement_rule: str = "hm"
    stability_constrained: bool = False
    hm_downsample: int = 50
    seed: int = 0

    def __post_init__(self) -> None:
        if self.sequence_rule not in SEQUENCE_RULES:
            raise ValueError(f"sequence_rule must be one of {SEQUENCE_RULES}")
        if self.placement_rule not in PLACEMENT_RULES:
            raise ValueError(f"placement_rule must be one of {PLACEMENT_RULES}")
        if self.hm_downsample < 1:
            raise ValueError("hm_downsample must be positive")


PRESETS = {
    "random": PlannerConfig("random", "random"),
    "hm": PlannerConfig("bbox_volume_desc", "hm"),
    "packit": PlannerConfig("bbox_volume_desc", "packit_blb"),
    "stable_hm": PlannerConfig("bbox_volume_desc", "hm", stability_constrained=True),
    "learned": PlannerConfig("learned", "learned"),
    "bbox_learned": PlannerConfig("bbox_volume_desc", "learned"),
    "learned_hm": PlannerConfig("learned", "hm"),
}


@functools.lru_cache(maxsize=4096)
def _oriented(grid: VoxelGrid, orientations: OrientationGrid) -> tuple[OrientedShape, ...]:
    # keyed on voxel content, so identical objects across episodes share the work
    return tuple(orient_object(ObjectModel.from_grid("", grid), orientations))


class ShapeCache:
    """Lazily computed oriented shapes per object for one orientation grid."""

    def __init__(self, objects: Iterable[ObjectModel], orientations: OrientationGrid):
        self.models = {m.id: m for m in objects}
        self.orientations = orientations
        self._all: dict[str, list[OrientedShape]] = {}
        self._unique: dict[str, list[OrientedShape]] = {}

    def all(self, object_id: str) -> list[OrientedShape]:
        if object_id not in self._all:
            self._all[object_id] = list(_oriented(self.models[object_id].grid, self.orientations))
        return self._all[object_id]

    def unique(self, object_id: str) -> list[OrientedShape]:
        if object_id not in self._unique:
            self._unique[object_id] = unique_shapes(self.all(object_id))
        return self._unique[object_id]

    def get(self, object_id: str, index: tuple[int, int]) -> OrientedShape:
        i, j = index
        return self.all(object_id)[i * self.orientations.shape[1] + j]


def bbox_sequence(objects: Iterable[ObjectModel]) -> list[ObjectModel]:
    """Descending bounding-box volume, ties by object id."""
    return sorted(objects, key=lambda m: (-bbox_volume(m), m.id))


def lattice_mask(shape: tuple[int, int], downsample: int) -> np.ndarray:
    """Candidate centers of a ``downsample``-per-side coarse lattice (block centers)."""
    mask = np.zeros(shape, dtype=bool)
    sx, sy = max(1, shape[0] // downsample), max(1, shape[1] // downsample)
    mask[sx // 2 :: sx, sy // 2 :: sy] = True
    return mask


@dataclass
class _Candidates:
    """Flattened candidate table sorted by (added volume, max height, i, j, x, y)."""

    keys: np.ndarray  # (n, 6) int64
    shapes: dict[tuple[int, int], OrientedShape]

    def __len__(self) -> int:
        return len(self.keys)


def _hm_candidates(state: PackingState, shapes: Sequence[OrientedShape], downsample: int | None) -> _Candidates:
    box = state.box
    box_max = int(box.heights.max())
    rows = []
    lattice = None if downsample is None else lattice_mask(box.shape, downsample)
    by_index = {}
    maps = []
    for shape in shapes:
        z = drop_map(box, shape.h_b)
        legal = legality_from_drop(z, shape.height_q, state.h_max_q)
        maps.append((shape, z, legal))
    use_lattice = lattice is not None and any((legal & lattice).any() for _, _, legal in maps)
    for shape, z, legal in maps:
        cand = legal & lattice if use_lattice else legal
        if not cand.any():
            continue
        xs, ys = np.nonzero(cand)
        zc = z[xs, ys]
        added = added_volume_map(box, shape, z)[xs, ys]
        top = zc + shape.height_q
        i, j = shape.index
        rows.append(np.column_stack([added, top, np.full_like(xs, i), np.full_like(xs, j), xs, ys]))
        by_index[shape.index] = shape
    if not rows:
        return _Candidates(np.zeros((0, 6), dtype=np.int64), by_index)
    keys = np.concatenate(rows).astype(np.int64)
    order = np.lexsort(keys.T[::-1])
    return _Candidates(keys[order], by_index)


def _neighbour_candidates(state: PackingState, shape: OrientedShape, x: int, y: int) -> np.ndarray:
    """Full-resolution (added, top, i, j, x, y) rows within one cell of ``(x, y)``."""
    box = state.box
    z = drop_map(box, shape.h_b)
    legal = legality_from_drop(z, shape.height_q, state.h_max_q)
    x0, x1 = max(0, x - 1), min(box.shape[0], x + 2)
    y0, y1 = max(0, y - 1), min(box.shape[1], y + 2)
    sub = np.zeros_like(legal)
    sub[x0:x1, y0:y1] = True
    xs, ys = np.nonzero(legal & sub)
    added = added_volume_map(box, shape, z)[xs, ys]
    top = z[xs, ys] + shape.height_q
    i, j = shape.index
    keys = np.column_stack([added, top, np.full_like(xs, i), np.full_like(xs, j), xs, ys]).astype(np.int64)
    return keys[np.lexsort(keys.T[::-1])]


def _to_placement(state: PackingState, object_id: str, shape: OrientedShape, row: np.ndarray) -> Placement:
    p = place(state, object_id, shape, int(row[4]), int(row[5]))
    # lower is better for HM; report the negated added volume as the score
    return replace(p, score=-float(row[0]))


def hm_place(
    state: PackingState,
    object_id: str,
    shapes: Sequence[OrientedShape],
    downsample: int | None = 50,
    refine: bool = True,
) -> Placement:
    """Heightmap minimization: least added heightmap volume, then lowest top of the placed object.

    Candidates are block centers of a ``downsample``-per-side lattice (all cells
    when ``downsample`` is None or no lattice cell is legal), refined over the
    full-resolution cells adjacent to the winner.
    """
    cands = _hm_candidates(state, shapes, downsample)
    if not len(cands):
        raise NoSpace(f"no legal placement for {object_id}")
    best = cands.keys[0]
    shape = cands.shapes[(int(best[2]), int(best[3]))]
    if refine and downsample is not None:
        local = _neighbour_candidates(state, shape, int(best[4]), int(best[5]))
        if len(local) and tuple(local[0]) < tuple(best):
            best = local[0]
    return _to_placement(state, object_id, shape, best)


def stable_hm_place(
    state: PackingState,
    object_id: str,
    shapes: Sequence[OrientedShape],
    downsample: int | None = 50,
    refine: bool = True,
) -> Placement:
    """HM restricted to statically stable candidates; falls back to plain HM flagged unstable."""
    cands = _hm_candidates(state, shapes, downsample)
    if not len(cands):
        raise NoSpace(f"no legal placement for {object_id}")

    def stable(shape: OrientedShape, row: np.ndarray) -> bool:
        p = place(state, object_id, shape, int(row[4]), int(row[5]))
        return bool(stability_check(state.box, p, shape.h_b, shape.com))

    for row in cands.keys:
        shape = cands.shapes[(int(row[2]), int(row[3]))]
        if stable(shape, row):
            best = row
            if refine and downsample is not None:
                for local in _neighbour_candidates(state, shape, int(row[4]), int(row[5])):
                    if tuple(local) >= tuple(best):
                        break
                    if stable(shape, local):
                        best = local
                        break
            return replace(_to_placement(state, object_id, shape, best), stable=True)
    p = hm_place(state, object_id, shapes, downsample, refine)
    return replace(p, fallback=True, stable=False)


def _packit_order(model_dims: tuple[float, float, float], shapes: Sequence[OrientedShape]) -> list[OrientedShape]:
    """Right-angle shapes, those with extents sorted descending along (x, y, z) first."""
    target = sorted(model_dims, reverse=True)
    right = [s for s in shapes if all(quarter_turns(a) is not None for a in s.euler)]

    def extents(s: OrientedShape) -> list[float]:
        c = s.h_t.cell_size
        return [s.footprint[0] * c, s.footprint[1] * c, to_mm(s.height_q)]

    preferred = [s for s in right if np.allclose(extents(s), target)]
    rest = [s for s in right if s not in preferred]
    return preferred + rest


def packit_place(state: PackingState, model: ObjectModel, shapes: Sequence[OrientedShape]) -> Placement:
    """Longest extent along x, then y, then z; first legal cell by (z, y, x)."""
    for shape in _packit_order(model.bbox_dims, shapes):
        z = drop_map(state.box, shape.h_b)
        legal = legality_from_drop(z, shape.height_q, state.h_max_q)
        if not legal.any():
            continue
        xs, ys = np.nonzero(legal)
        k = np.lexsort((xs, ys, z[xs, ys]))[0]
        return place(state, model.id, shape, int(xs[k]), int(ys[k]))
    raise NoSpace(f"no legal placement for {model.id}")


def random_place(state: PackingState, object_id: str, shapes: Sequence[OrientedShape], rng: np.random.Generator) -> Placement:
    """Uniform over every legal (i, j, x, y) of the orientation grid."""
    legal_maps = []
    cache: dict = {}
    for shape in shapes:
        key = shape.key()
        if key not in cache:
            z = drop_map(state.box, shape.h_b)
            cache[key] = legality_from_drop(z, shape.height_q, state.h_max_q)
        legal_maps.append(cache[key])
    counts = np.array([int(m.sum()) for m in legal_maps])
    total = int(counts.sum())
    if total == 0:
        raise NoSpace(f"no legal placement for {object_id}")
    k = int(rng.integers(total))
    o = int(np.searchsorted(np.cumsum(counts), k, side="right"))
    k -= int(counts[:o].sum())
    xs, ys = np.nonzero(legal_maps[o])
    return place(state, object_id, shapes[o], int(xs[k]), int(ys[k]))


def random_plan_step(
    state: PackingState, live: Sequence[str], cache: ShapeCache, rng: np.random.Generator
) -> tuple[str, Placement]:
    """Uniform object from ``live`` and a uniform legal placement for it."""
    if not live:
        raise NoSpace("nothing left to pack")
    object_id = sorted(live)[int(rng.integers(len(live)))]
    try:
        return object_id, random_place(state, object_id, cache.all(object_id), rng)
    except NoSpace as exc:
        raise NoSpace(object_id) from exc


class HeuristicPlanner:
    """Combines a sequence rule with a placement rule."""

    def __init__(self, config: PlannerConfig, name: str | None = None):
        if "learned" in (config.sequence_rule, config.placement_rule):
            raise ValueError("learned rules need hrl.LearnedPlanner")
        self.config = config
        self.name = name or f"{config.sequence_rule}+{config.placement_rule}"

    def reset(self, ctx) -> None:
        self._order = [m.id for m in bbox_sequence(ctx.episode.objects)]

    def select(self, ctx, state: PackingState, live: Sequence[str]) -> str:
        if self.config.sequence_rule == "random":
            return sorted(live)[int(ctx.rng.integers(len(live)))]
        live_set = set(live)
        return next(o for o in self._order if o in live_set)

    def place(self, ctx, state: PackingState, object_id: str) -> Placement:
        cfg = self.config
        cache: ShapeCache = ctx.cache
        ds = None if cfg.hm_downsample >= max(state.box.shape) else cfg.hm_downsample
        if cfg.placement_rule == "random":
            return random_place(state, object_id, cache.all(object_id), ctx.rng)
        if cfg.placement_rule == "packit_blb":
            return packit_place(state, cache.models[object_id], cache.unique(object_id))
        if cfg.stability_constrained:
            return stable_hm_place(state, object_id, cache.unique(object_id), ds)
        return hm_place(state, object_id, cache.unique(object_id), ds)
