"""Voxel and heightmap primitives.

All heights are stored as integers in units of ``QUANTUM_MM`` (0.1 mm) so that
drop heights, legality and contact tests are exact.  Lattice cells are indexed
``[x, y]`` for heightmaps and ``[x, y, z]`` for voxel grids.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable

import numpy as np

QUANTUM_MM = 0.1
QUANTA_PER_MM = 10
# Bottom-view value of an empty column; larger than any box height.
EMPTY = 1 << 40

HALF_PI = math.pi / 2
TWO_PI = 2 * math.pi

VIEW_NAMES = ("front", "rear", "left", "right", "top", "bottom")


def to_quanta(mm: float) -> int:
    """Convert millimeters to the nearest whole height quantum."""
    return int(round(mm * QUANTA_PER_MM))


def to_mm(q) -> float:
    return q / QUANTA_PER_MM


def cell_quanta(cell_size: float) -> int:
    """Height quanta spanned by one lattice cell; the cell must be a whole number of quanta."""
    q = cell_size / QUANTUM_MM
    qi = int(round(q))
    if qi <= 0 or abs(q - qi) > 1e-6:
        raise ValueError(f"cell size {cell_size} mm is not a positive multiple of {QUANTUM_MM} mm")
    return qi


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Heightmap:
    """Grid of column heights in quanta, shape ``(width_cells, length_cells)``."""

    heights: np.ndarray
    cell_size: float

    def __post_init__(self) -> None:
        h = np.asarray(self.heights)
        if h.ndim != 2 or h.shape[0] < 1 or h.shape[1] < 1:
            raise ValueError(f"heightmap must be a non-empty 2D grid, got shape {h.shape}")
        if not np.issubdtype(h.dtype, np.integer):
            raise TypeError("heightmap heights must be integer quanta; use Heightmap.from_mm")
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        if h.size and h.min() < 0:
            raise ValueError("heights must be non-negative")
        object.__setattr__(self, "heights", _readonly(h.astype(np.int64)))

    @classmethod
    def from_mm(cls, heights_mm, cell_size: float) -> Heightmap:
        q = np.rint(np.asarray(heights_mm, dtype=float) * QUANTA_PER_MM).astype(np.int64)
        return cls(q, cell_size)

    @classmethod
    def flat(cls, width_cells: int, length_cells: int, cell_size: float, height_mm: float = 0.0) -> Heightmap:
        return cls(np.full((width_cells, length_cells), to_quanta(height_mm), dtype=np.int64), cell_size)

    @property
    def width_cells(self) -> int:
        return int(self.heights.shape[0])

    @property
    def length_cells(self) -> int:
        return int(self.heights.shape[1])

    @property
    def shape(self) -> tuple[int, int]:
        return self.heights.shape  # type: ignore[return-value]

    @property
    def mm(self) -> np.ndarray:
        """Heights in millimeters (sentinel cells are scaled like any other)."""
        return self.heights / QUANTA_PER_MM

    def max_mm(self) -> float:
        return int(self.heights.max()) / QUANTA_PER_MM

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Heightmap):
            return NotImplemented
        return (
            self.cell_size == other.cell_size
            and self.heights.shape == other.heights.shape
            and bool(np.array_equal(self.heights, other.heights))
        )

    def __hash__(self) -> int:
        return hash((self.cell_size, self.heights.shape, self.heights.tobytes()))


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """Boolean occupancy over an ``(nx, ny, nz)`` lattice of cubic cells."""

    occupancy: np.ndarray
    cell_size: float

    def __post_init__(self) -> None:
        occ = np.asarray(self.occupancy, dtype=bool)
        if occ.ndim != 3 or min(occ.shape) < 1:
            raise ValueError(f"voxel grid must be 3D with positive dims, got {occ.shape}")
        cell_quanta(self.cell_size)
        object.__setattr__(self, "occupancy", _readonly(occ))

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(d) for d in self.occupancy.shape)  # type: ignore[return-value]

    @property
    def count(self) -> int:
        return int(self.occupancy.sum())

    @property
    def volume(self) -> float:
        return self.count * self.cell_size**3

    def is_empty(self) -> bool:
        return not self.occupancy.any()

    def is_tight(self) -> bool:
        occ = self.occupancy
        if not occ.any():
            return False
        return all(
            occ.take(0, axis=a).any() and occ.take(-1, axis=a).any() for a in range(3)
        )

    def cropped(self) -> VoxelGrid:
        """Smallest grid holding every occupied voxel."""
        occ = self.occupancy
        if not occ.any():
            raise ValueError("cannot crop an empty voxel grid")
        idx = np.nonzero(occ)
        sl = tuple(slice(int(i.min()), int(i.max()) + 1) for i in idx)
        return VoxelGrid(occ[sl], self.cell_size)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, VoxelGrid):
            return NotImplemented
        return self.cell_size == other.cell_size and bool(np.array_equal(self.occupancy, other.occupancy))

    def __hash__(self) -> int:
        return hash((self.cell_size, self.occupancy.shape, np.packbits(self.occupancy).tobytes()))


@dataclass(frozen=True)
class ObjectModel:
    """Rigid voxelized object in its canonical stable pose."""

    id: str
    grid: VoxelGrid
    bbox_dims: tuple[float, float, float]
    volume: float
    principal_views: dict[str, Heightmap] = field(compare=False, repr=False)

    @classmethod
    def from_grid(cls, object_id: str, grid: VoxelGrid) -> ObjectModel:
        tight = grid.cropped()
        dims = tuple(d * tight.cell_size for d in tight.dims)
        return cls(
            id=str(object_id),
            grid=tight,
            bbox_dims=dims,  # type: ignore[arg-type]
            volume=tight.volume,
            principal_views=render_principal_views(tight),
        )


def bbox_volume(m: ObjectModel) -> float:
    w, l, h = m.bbox_dims
    return w * l * h


def _norm_angle(a: float) -> float:
    a = math.fmod(a, TWO_PI)
    if a < 0:
        a += TWO_PI
    if abs(a - TWO_PI) < 1e-9:
        a = 0.0
    return a


def quarter_turns(angle: float) -> int | None:
    """Number of quarter turns if ``angle`` is a right-angle multiple, else None."""
    k = angle / HALF_PI
    kr = round(k)
    if abs(k - kr) < 1e-9:
        return int(kr) % 4
    return None


def _same_angle(a: float, b: float) -> bool:
    d = abs(_norm_angle(a) - _norm_angle(b))
    return min(d, TWO_PI - d) < 1e-9


@dataclass(frozen=True)
class OrientationGrid:
    """Discrete orientation set: (roll, pitch) pairs crossed with equally spaced yaws.

    Index pair ``(i, j)`` addresses ``rp_set[i]`` and ``yaw_set[j]``.
    """

    rp_set: tuple[tuple[float, float], ...]
    yaw_set: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.rp_set or not self.yaw_set:
            raise ValueError("orientation grid needs at least one (roll, pitch) and one yaw")
        if self.yaw_set[0] != 0:
            raise ValueError("first yaw must be 0")
        for a in [v for rp in self.rp_set for v in rp] + list(self.yaw_set):
            if not 0 <= a < TWO_PI:
                raise ValueError(f"angle {a} outside [0, 2pi)")
        if len(self.yaw_set) > 1:
            steps = np.diff(list(self.yaw_set) + [TWO_PI])
            if not np.allclose(steps, steps[0], atol=1e-9):
                raise ValueError("yaw values must be equally spaced")
        if len({(round(r, 9), round(p, 9)) for r, p in self.rp_set}) != len(self.rp_set):
            raise ValueError("duplicate (roll, pitch) pair")

    @classmethod
    def from_intervals(cls, rp_interval: float = HALF_PI, yaw_interval: float = HALF_PI) -> OrientationGrid:
        def steps(interval: float) -> list[float]:
            n = TWO_PI / interval
            if abs(n - round(n)) > 1e-9 or round(n) < 1:
                raise ValueError(f"interval {interval} does not divide 2pi")
            return [k * interval for k in range(int(round(n)))]

        rolls = steps(rp_interval)
        return cls(
            rp_set=tuple((r, p) for r in rolls for p in steps(rp_interval)),
            yaw_set=tuple(steps(yaw_interval)),
        )

    @classmethod
    def identity(cls) -> OrientationGrid:
        return cls(rp_set=((0.0, 0.0),), yaw_set=(0.0,))

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.rp_set), len(self.yaw_set)

    def indices(self) -> Iterable[tuple[int, int]]:
        for i in range(len(self.rp_set)):
            for j in range(len(self.yaw_set)):
                yield i, j

    def euler(self, i: int, j: int) -> tuple[float, float, float]:
        roll, pitch = self.rp_set[i]
        return roll, pitch, self.yaw_set[j]

    def contains_rp(self, roll: float, pitch: float) -> bool:
        return any(_same_angle(roll, r) and _same_angle(pitch, p) for r, p in self.rp_set)

    def contains_yaw(self, yaw: float) -> bool:
        return any(_same_angle(yaw, y) for y in self.yaw_set)


def rotation_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """``Rz(yaw) @ Ry(pitch) @ Rx(roll)``; integer-valued when all angles are right angles."""
    turns = [quarter_turns(a) for a in (roll, pitch, yaw)]
    if all(t is not None for t in turns):
        c = [(1, 0, -1, 0)[t] for t in turns]  # type: ignore[index]
        s = [(0, 1, 0, -1)[t] for t in turns]  # type: ignore[index]
        dtype = np.int64
    else:
        c = [math.cos(a) for a in (roll, pitch, yaw)]
        s = [math.sin(a) for a in (roll, pitch, yaw)]
        dtype = np.float64
    rx = np.array([[1, 0, 0], [0, c[0], -s[0]], [0, s[0], c[0]]], dtype=dtype)
    ry = np.array([[c[1], 0, s[1]], [0, 1, 0], [-s[1], 0, c[1]]], dtype=dtype)
    rz = np.array([[c[2], -s[2], 0], [s[2], c[2], 0], [0, 0, 1]], dtype=dtype)
    return rz @ ry @ rx


def rotate_voxels(grid: VoxelGrid, roll: float = 0.0, pitch: float = 0.0, yaw: float = 0.0) -> VoxelGrid:
    """Rigidly rotate the occupied set and re-rasterize onto the lattice (tight).

    Right-angle rotations permute voxels exactly.  Other angles map each occupied
    voxel center to its nearest cell; no hole filling is performed.
    """
    if grid.is_empty():
        raise ValueError("cannot rotate an empty voxel grid")
    rot = rotation_matrix(roll, pitch, yaw)
    idx = np.argwhere(grid.occupancy)
    dims = np.array(grid.dims)
    if rot.dtype == np.int64:
        # doubled, centered coordinates stay integral under signed permutations
        doubled = 2 * idx + 1 - dims
        moved = doubled @ rot.T
        new_idx = (moved - moved.min(axis=0)) // 2
    else:
        centers = idx + 0.5 - dims / 2.0
        moved = centers @ rot.T
        new_idx = np.floor(moved - moved.min(axis=0) + 0.5).astype(np.int64)
    shape = tuple(int(v) + 1 for v in new_idx.max(axis=0))
    occ = np.zeros(shape, dtype=bool)
    occ[new_idx[:, 0], new_idx[:, 1], new_idx[:, 2]] = True
    return VoxelGrid(occ, grid.cell_size).cropped()


def _axis_extents(occ: np.ndarray, axis: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-ray (lowest index, highest index + 1, hit mask) along ``axis``."""
    hit = occ.any(axis=axis)
    n = occ.shape[axis]
    lo = np.argmax(occ, axis=axis)
    hi = n - np.argmax(np.flip(occ, axis=axis), axis=axis)
    return lo, hi, hit


def render_principal_views(grid: VoxelGrid) -> dict[str, Heightmap]:
    """Six axis-aligned depth maps over the object's tight bounding box.

    Each map measures, per ray, the distance from the bounding-box face opposite
    the viewer to the first occupied surface the viewer sees; rays that miss the
    object read 0.  Map axes: top/bottom ``[x, y]``, front/rear ``[x, z]``,
    left/right ``[y, z]``.  Viewers sit at +z (top), -z (bottom), -y (front),
    +y (rear), -x (left) and +x (right).
    """
    if grid.is_empty():
        raise ValueError("cannot render views of an empty voxel grid")
    tight = grid.cropped()
    occ = tight.occupancy
    q = cell_quanta(tight.cell_size)
    nx, ny, nz = tight.dims
    views: dict[str, Heightmap] = {}
    for axis, n, (near_name, far_name) in (
        (1, ny, ("front", "rear")),
        (0, nx, ("left", "right")),
        (2, nz, ("bottom", "top")),
    ):
        lo, hi, hit = _axis_extents(occ, axis)
        # viewer on the low side sees the lowest voxel; zero-plane is the high face
        views[near_name] = Heightmap(np.where(hit, (n - lo) * q, 0), tight.cell_size)
        views[far_name] = Heightmap(np.where(hit, hi * q, 0), tight.cell_size)
    return {name: views[name] for name in VIEW_NAMES}


def column_maps(grid: VoxelGrid) -> tuple[Heightmap, Heightmap]:
    """Top (``H_t``) and bottom (``H_b``) maps of a grid resting on its lowest plane."""
    tight = grid.cropped()
    q = cell_quanta(tight.cell_size)
    lo, hi, hit = _axis_extents(tight.occupancy, 2)
    h_t = np.where(hit, hi * q, 0)
    h_b = np.where(hit, lo * q, EMPTY)
    return Heightmap(h_t, tight.cell_size), Heightmap(h_b, tight.cell_size)


def oriented_views(
    grid: VoxelGrid,
    roll: float,
    pitch: float,
    rp_set: Iterable[tuple[float, float]] | OrientationGrid | None = None,
) -> tuple[Heightmap, Heightmap]:
    """Top and bottom heightmaps of the object after rolling and pitching it.

    When ``rp_set`` is given, ``(roll, pitch)`` must be one of its members.
    """
    if rp_set is not None:
        pairs = rp_set.rp_set if isinstance(rp_set, OrientationGrid) else tuple(rp_set)
        if not any(_same_angle(roll, r) and _same_angle(pitch, p) for r, p in pairs):
            raise ValueError(f"(roll={roll}, pitch={pitch}) is not in the discretized set")
    if grid.is_empty():
        raise ValueError("cannot scan an empty voxel grid")
    return column_maps(rotate_voxels(grid, roll, pitch, 0.0))


def _resample_yaw(h_t: np.ndarray, h_b: np.ndarray, psi: float):
    """Nearest-cell yaw resampling; returns maps plus the frame transform used."""
    w, l = h_t.shape
    c, s = math.cos(psi), math.sin(psi)
    out_w = max(1, int(math.ceil(abs(w * c) + abs(l * s) - 1e-9)))
    out_l = max(1, int(math.ceil(abs(w * s) + abs(l * c) - 1e-9)))
    u, v = np.meshgrid(np.arange(out_w) + 0.5 - out_w / 2, np.arange(out_l) + 0.5 - out_l / 2, indexing="ij")
    # inverse rotation back into the source frame
    sx = c * u + s * v + w / 2
    sy = -s * u + c * v + l / 2
    ix = np.floor(sx).astype(np.int64)
    iy = np.floor(sy).astype(np.int64)
    inside = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < l)
    ixc = np.clip(ix, 0, w - 1)
    iyc = np.clip(iy, 0, l - 1)
    new_t = np.where(inside, h_t[ixc, iyc], 0)
    new_b = np.where(inside, h_b[ixc, iyc], EMPTY)
    occupied = new_t > 0
    if not occupied.any():
        raise ValueError("yaw resampling lost every column")
    xs = np.nonzero(occupied.any(axis=1))[0]
    ys = np.nonzero(occupied.any(axis=0))[0]
    sl = (slice(xs[0], xs[-1] + 1), slice(ys[0], ys[-1] + 1))
    return new_t[sl], new_b[sl], (out_w, out_l, int(xs[0]), int(ys[0]))


def rotate_yaw(h_pair: tuple[Heightmap, Heightmap], psi: float) -> tuple[Heightmap, Heightmap]:
    """Rotate a (top, bottom) heightmap pair about the vertical axis by ``psi``.

    Right angles are exact lattice permutations.  Other angles resample each
    output cell from the nearest source cell about the footprint center; the
    output is the rotated bounding rectangle trimmed of empty border lines.
    """
    h_t, h_b = h_pair
    if h_t.shape != h_b.shape:
        raise ValueError("top and bottom maps must share a footprint")
    k = quarter_turns(psi)
    if k is not None:
        return (
            Heightmap(np.rot90(h_t.heights, k), h_t.cell_size),
            Heightmap(np.rot90(h_b.heights, k), h_b.cell_size),
        )
    new_t, new_b, _ = _resample_yaw(h_t.heights, h_b.heights, psi)
    return Heightmap(new_t, h_t.cell_size), Heightmap(new_b, h_b.cell_size)


def center_of_mass(grid: VoxelGrid) -> tuple[Fraction, Fraction, Fraction]:
    """Exact centroid of the occupied voxels, in cell units from the grid corner."""
    idx = np.argwhere(grid.occupancy)
    n = len(idx)
    if n == 0:
        raise ValueError("empty grid has no center of mass")
    sums = idx.sum(axis=0)
    return tuple(Fraction(int(2 * s + n), 2 * n) for s in sums)  # type: ignore[return-value]


@dataclass(frozen=True, eq=False)
class OrientedShape:
    """An object's column maps and center of mass in one grid orientation.

    ``com`` is in cell units relative to the footprint corner (z from the lowest
    plane); exact fractions for right-angle orientations.
    """

    index: tuple[int, int]
    euler: tuple[float, float, float]
    h_t: Heightmap
    h_b: Heightmap
    com: tuple
    volume: float

    @property
    def footprint(self) -> tuple[int, int]:
        return self.h_t.shape

    @property
    def height_q(self) -> int:
        return int(self.h_t.heights.max())

    def key(self) -> tuple:
        return (self.h_t.shape, self.h_t.heights.tobytes(), self.h_b.heights.tobytes(), tuple(self.com))


def _yaw_com(com: tuple, dims: tuple[int, int], psi: float, frame) -> tuple:
    x, y, z = com
    w, l = dims
    k = quarter_turns(psi)
    if k is not None:
        for _ in range(k):
            x, y = l - y, x
            w, l = l, w
        return (x, y, z)
    out_w, out_l, ox, oy = frame
    c, s = math.cos(psi), math.sin(psi)
    dx, dy = float(x) - w / 2, float(y) - l / 2
    return (c * dx - s * dy + out_w / 2 - ox, s * dx + c * dy + out_l / 2 - oy, float(z))


def orient_object(model: ObjectModel, grid: OrientationGrid) -> list[OrientedShape]:
    """Column maps for every ``(i, j)`` of the grid, in index order.

    Roll and pitch are applied to the voxels; yaw is applied to the maps.
    """
    shapes: list[OrientedShape] = []
    for i, (roll, pitch) in enumerate(grid.rp_set):
        rp_grid = rotate_voxels(model.grid, roll, pitch, 0.0)
        pair = column_maps(rp_grid)
        if quarter_turns(roll) is not None and quarter_turns(pitch) is not None:
            com = center_of_mass(rp_grid)
        else:
            com = tuple(float(v) for v in center_of_mass(rp_grid))
        dims = pair[0].shape
        for j, yaw in enumerate(grid.yaw_set):
            if quarter_turns(yaw) is not None:
                h_t, h_b = rotate_yaw(pair, yaw)
                frame = None
            else:
                t, b, frame = _resample_yaw(pair[0].heights, pair[1].heights, yaw)
                h_t, h_b = Heightmap(t, model.grid.cell_size), Heightmap(b, model.grid.cell_size)
            shapes.append(
                OrientedShape(
                    index=(i, j),
                    euler=(roll, pitch, yaw),
                    h_t=h_t,
                    h_b=h_b,
                    com=_yaw_com(com, dims, yaw, frame),
                    volume=model.volume,
                )
            )
    return shapes


def unique_shapes(shapes: Iterable[OrientedShape]) -> list[OrientedShape]:
    """Drop orientations whose maps and COM repeat an earlier (lexicographically smaller) index."""
    seen: set = set()
    out = []
    for sh in shapes:
        k = sh.key()
        if k not in seen:
            seen.add(k)
            out.append(sh)
    return out
