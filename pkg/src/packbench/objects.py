"""Procedural packable objects and seeded episode pools."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .geometry import ObjectModel, VoxelGrid

CONVEX_FAMILIES = ("cuboid", "cylinder", "sphere-cap")
CONCAVE_FAMILIES = ("bowl", "U-channel", "plate", "T-solid")
OTHER_FAMILIES = ("L-solid", "peg")
FAMILIES = CONVEX_FAMILIES + CONCAVE_FAMILIES + OTHER_FAMILIES

# parameter names per family, millimeters
PARAM_NAMES: dict[str, tuple[str, ...]] = {
    "cuboid": ("width", "length", "height"),
    "cylinder": ("radius", "height"),
    "sphere-cap": ("radius", "height"),
    "L-solid": ("width", "length", "height", "thickness"),
    "T-solid": ("width", "length", "height", "thickness"),
    "U-channel": ("width", "length", "height", "thickness"),
    "bowl": ("radius", "height", "wall"),
    "plate": ("radius", "thickness"),
    "peg": ("shaft_radius", "height", "head_radius", "head_height"),
}

SCALE_RANGE = (0.8, 1.2)


@dataclass(frozen=True)
class ShapeSpec:
    family: str
    params: tuple[float, ...]
    # a single factor, or one per axis when per-axis scaling is enabled
    scale: float | tuple[float, float, float] = 1.0

    def __post_init__(self) -> None:
        if self.family not in PARAM_NAMES:
            raise ValueError(f"unknown shape family {self.family!r}")
        if len(self.params) != len(PARAM_NAMES[self.family]):
            raise ValueError(f"{self.family} takes params {PARAM_NAMES[self.family]}")
        if any(p <= 0 for p in self.params):
            raise ValueError("shape params must be positive")
        for s in self.scales:
            if not SCALE_RANGE[0] - 1e-12 <= s <= SCALE_RANGE[1] + 1e-12:
                raise ValueError(f"scale {s} outside {SCALE_RANGE}")

    @property
    def scales(self) -> tuple[float, float, float]:
        if isinstance(self.scale, tuple):
            return self.scale
        return (self.scale, self.scale, self.scale)

    def extents(self) -> tuple[float, float, float]:
        """Scaled bounding extents in millimeters."""
        ex = _EXTENTS[self.family](*self.params)
        return tuple(e * s for e, s in zip(ex, self.scales))  # type: ignore[return-value]

    def to_dict(self) -> dict:
        return {"family": self.family, "params": list(self.params), "scale": self.scale}

    @classmethod
    def from_dict(cls, d: dict) -> ShapeSpec:
        scale = d.get("scale", 1.0)
        if isinstance(scale, list):
            scale = tuple(scale)
        return cls(d["family"], tuple(float(p) for p in d["params"]), scale)


def _sphere_cap_halfwidth(r: float, h: float) -> float:
    return math.sqrt(h * (2 * r - h)) if h < r else r


_EXTENTS: dict[str, Callable[..., tuple[float, float, float]]] = {
    "cuboid": lambda w, l, h: (w, l, h),
    "cylinder": lambda r, h: (2 * r, 2 * r, h),
    "sphere-cap": lambda r, h: (2 * _sphere_cap_halfwidth(r, h),) * 2 + (min(h, 2 * r),),
    "L-solid": lambda w, l, h, t: (w, l, h),
    "T-solid": lambda w, l, h, t: (w, l, h),
    "U-channel": lambda w, l, h, t: (w, l, h),
    "bowl": lambda r, h, t: (2 * r, 2 * r, h),
    "plate": lambda r, t: (2 * r, 2 * r, t),
    "peg": lambda rs, h, rh, hh: (2 * max(rs, rh),) * 2 + (h,),
}


def _inside(family: str, params: tuple[float, ...], ex: tuple[float, float, float], x, y, z):
    """Membership of canonical-frame points; ``ex`` are unscaled extents."""
    cx, cy = ex[0] / 2, ex[1] / 2
    d = np.hypot(x - cx, y - cy)
    if family == "cuboid":
        return np.ones(np.broadcast(x, y, z).shape, dtype=bool)
    if family == "cylinder":
        return d <= params[0]
    if family == "sphere-cap":
        r, h = params
        return np.sqrt(d**2 + (z - (h - r)) ** 2) <= r
    if family == "L-solid":
        t = params[3]
        return (z <= t) | (x <= t)
    if family == "T-solid":
        w, l, _, t = params
        return (y >= l - t) | (np.abs(x - w / 2) <= t / 2)
    if family == "U-channel":
        w, _, _, t = params
        return (z <= t) | (x <= t) | (x >= w - t)
    if family == "bowl":
        r, _, t = params
        return (d <= r) & ((z <= t) | (d >= r - t))
    if family == "plate":
        return d <= params[0]
    if family == "peg":
        rs, _, rh, hh = params
        return (d <= rs) | ((d <= rh) & (z <= hh))
    raise ValueError(family)


def build_shape(spec: ShapeSpec, cell_size: float, object_id: str | None = None) -> ObjectModel:
    """Voxelize a procedural shape: a voxel is occupied iff its center is inside."""
    raw = _EXTENTS[spec.family](*spec.params)
    scaled = spec.extents()
    dims = [int(math.ceil(e / cell_size - 1e-9)) for e in scaled]
    if min(dims) < 2:
        raise ValueError(f"{spec.family} with extents {scaled} is under 2 cells on some axis")
    axes = [(np.arange(n) + 0.5) * cell_size / s for n, s in zip(dims, spec.scales)]
    x, y, z = np.meshgrid(*axes, indexing="ij")
    occ = _inside(spec.family, spec.params, raw, x, y, z)
    occ &= (x <= raw[0]) & (y <= raw[1]) & (z <= raw[2])
    grid = VoxelGrid(occ, cell_size)
    if grid.is_empty():
        raise ValueError(f"{spec.family} voxelized to nothing")
    tight = grid.cropped()
    if min(tight.dims) < 2:
        raise ValueError(f"{spec.family} voxelized under 2 cells on some axis")
    if object_id is None:
        object_id = f"{spec.family}-" + "-".join(f"{p:g}" for p in spec.params)
    return ObjectModel.from_grid(object_id, tight)


def _draw_params(family: str, rng: np.random.Generator, min_thick: float) -> tuple[float, ...]:
    u = lambda lo, hi: float(rng.uniform(lo, hi))  # noqa: E731
    thick = lambda lo, hi: max(u(lo, hi), min_thick)  # noqa: E731
    if family == "cuboid":
        return (u(50, 150), u(50, 150), u(50, 150))
    if family == "cylinder":
        return (u(30, 65), u(50, 150))
    if family == "sphere-cap":
        r = u(45, 80)
        return (r, u(0.4, 1.0) * r)
    if family == "L-solid":
        return (u(65, 150), u(65, 150), u(50, 130), thick(12, 30))
    if family == "T-solid":
        return (u(80, 150), u(80, 150), u(50, 130), thick(20, 45))
    if family == "U-channel":
        return (u(80, 150), u(65, 150), u(50, 120), thick(10, 20))
    if family == "bowl":
        return (u(50, 90), u(40, 80), thick(5, 10))
    if family == "plate":
        return (u(65, 120), thick(8, 15))
    if family == "peg":
        return (thick(10, 20), u(80, 150), u(30, 50), thick(10, 20))
    raise ValueError(family)


@dataclass
class EpisodeSet:
    objects: list[ObjectModel]
    specs: list[ShapeSpec]
    seed: int
    difficulty: str
    cell_size: float
    box_mm: tuple[float, float, float] = (400.0, 400.0, 300.0)
    by_id: dict[str, ObjectModel] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.by_id = {m.id: m for m in self.objects}
        if len(self.by_id) != len(self.objects):
            raise ValueError("duplicate object ids in episode")

    def __len__(self) -> int:
        return len(self.objects)

    def manifest(self) -> dict:
        return {
            "seed": self.seed,
            "difficulty": self.difficulty,
            "pool_size": len(self.objects),
            "cell_size": self.cell_size,
            "box_mm": list(self.box_mm),
            "objects": [{"id": m.id, **s.to_dict()} for m, s in zip(self.objects, self.specs)],
        }

    def manifest_json(self) -> str:
        return json.dumps(self.manifest(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_manifest(cls, doc: dict) -> EpisodeSet:
        cell = float(doc["cell_size"])
        specs = [ShapeSpec.from_dict(o) for o in doc["objects"]]
        objects = [build_shape(s, cell, o["id"]) for s, o in zip(specs, doc["objects"])]
        return cls(objects, specs, int(doc["seed"]), doc["difficulty"], cell, tuple(doc["box_mm"]))


def fits_empty_box(m: ObjectModel, box_mm: tuple[float, float, float]) -> bool:
    """True if some right-angle pose of ``m`` fits inside an empty box.

    Right-angle orientations realize every permutation of the bounding extents.
    """
    bw, bl, bh = box_mm
    w, l, h = m.bbox_dims
    perms = [(w, l, h), (w, h, l), (l, w, h), (l, h, w), (h, w, l), (h, l, w)]
    return any(a <= bw + 1e-9 and b <= bl + 1e-9 and c <= bh + 1e-9 for a, b, c in perms)


def _family_plan(difficulty: str, n: int) -> tuple[int, tuple[str, ...]]:
    if difficulty == "easy":
        return math.ceil(0.7 * n), CONVEX_FAMILIES
    if difficulty == "hard":
        return math.ceil(0.5 * n), CONCAVE_FAMILIES
    raise ValueError(f"difficulty must be 'easy' or 'hard', got {difficulty!r}")


def generate_episode(
    seed: int,
    difficulty: str = "easy",
    pool_size: int = 50,
    cell_size: float = 2.0,
    box_mm: tuple[float, float, float] = (400.0, 400.0, 300.0),
    per_axis_scale: bool = False,
) -> EpisodeSet:
    """Seeded random pool of scaled procedural objects.

    Easy pools draw at least 70% of objects from convex families, hard pools at
    least 50% from concave or thin families; the remainder is drawn from all
    families.  Objects that cannot be placed in the empty box are redrawn.
    """
    if pool_size < 0:
        raise ValueError("pool_size must be non-negative")
    rng = np.random.default_rng(seed)
    n_pref, preferred = _family_plan(difficulty, pool_size)
    families = [preferred[int(rng.integers(len(preferred)))] for _ in range(n_pref)]
    families += [FAMILIES[int(rng.integers(len(FAMILIES)))] for _ in range(pool_size - n_pref)]
    order = rng.permutation(pool_size)
    families = [families[k] for k in order]

    specs: list[ShapeSpec] = []
    objects: list[ObjectModel] = []
    for k, family in enumerate(families):
        for _attempt in range(100):
            if per_axis_scale:
                scale: float | tuple = tuple(float(v) for v in rng.uniform(*SCALE_RANGE, size=3))
                smin = min(scale)
            else:
                scale = float(rng.uniform(*SCALE_RANGE))
                smin = scale
            params = _draw_params(family, rng, min_thick=2.0 * cell_size / smin + 1e-6)
            spec = ShapeSpec(family, params, scale)
            try:
                model = build_shape(spec, cell_size, f"obj{k:03d}")
            except ValueError:
                continue
            if fits_empty_box(model, box_mm):
                break
        else:
            raise RuntimeError(f"could not draw a placeable {family} after 100 attempts")
        specs.append(spec)
        objects.append(model)
    return EpisodeSet(objects, specs, int(seed), difficulty, cell_size, tuple(float(v) for v in box_mm))


def cube_episode(
    seed: int, sizes_mm: tuple[float, ...], pool_size: int, cell_size: float, box_mm=(100.0, 100.0, 100.0)
) -> EpisodeSet:
    """Pool of cubes with side lengths drawn uniformly from ``sizes_mm``."""
    rng = np.random.default_rng(seed)
    specs = [ShapeSpec("cuboid", (s, s, s)) for s in rng.choice(sizes_mm, size=pool_size)]
    objects = [build_shape(s, cell_size, f"obj{k:03d}") for k, s in enumerate(specs)]
    return EpisodeSet(objects, specs, int(seed), "toy", cell_size, tuple(float(v) for v in box_mm))
