"""Packing objective, step reward and the quasi-static stability test."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .geometry import EMPTY, Heightmap, to_mm
from .placement import PackingState, Placement


@dataclass(frozen=True)
class ObjectiveWeights:
    alpha: float = 0.75
    beta: float = 0.25
    gamma: float = 0.25

    def __post_init__(self) -> None:
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("objective weights must be non-negative")


@dataclass(frozen=True)
class StabilityThresholds:
    # Kept for a dynamics backend; the static test below does not use them.
    pos_tol: float = 20.0
    ang_tol: float = math.pi / 6

    def __post_init__(self) -> None:
        if self.pos_tol <= 0 or self.ang_tol <= 0:
            raise ValueError("stability thresholds must be positive")


@dataclass(frozen=True)
class MetricsRecord:
    C: float
    P: float
    S: float
    packed_count: int
    latency_per_object: float | None = None

    def as_dict(self) -> dict:
        return {
            "C": self.C,
            "P": self.P,
            "S": self.S,
            "packed_count": self.packed_count,
            "latency_s": self.latency_per_object,
        }


def compactness(state: PackingState) -> float:
    """Packed volume over the box base area times the current stack height."""
    h = state.box.max_mm()
    if not state.packed or h <= 0:
        return 0.0
    L, W, _ = state.box_dims
    return state.packed_volume / (L * W * h)


def pyramidality(state: PackingState) -> float:
    """Packed volume over the volume under the box heightmap."""
    if not state.packed:
        return 0.0
    under = to_mm(int(state.box.heights.sum())) * state.box.cell_size**2
    if under <= 0:
        return 0.0
    return state.packed_volume / under


def mean_stability(state: PackingState) -> float:
    flags = [p.stable for p in state.packed if p.stable is not None]
    return sum(flags) / len(flags) if flags else 0.0


def latest_stability(state: PackingState) -> float:
    for p in reversed(state.packed):
        if p.stable is not None:
            return float(p.stable)
    return 0.0


def objective(state: PackingState, weights: ObjectiveWeights = ObjectiveWeights(), stability: str = "mean") -> float:
    """``alpha * C + beta * P + gamma * S``; ``stability`` picks the episode mean or the latest flag."""
    if not state.packed:
        return 0.0
    if stability == "mean":
        s = mean_stability(state)
    elif stability == "latest":
        s = latest_stability(state)
    else:
        raise ValueError(f"stability must be 'mean' or 'latest', got {stability!r}")
    return weights.alpha * compactness(state) + weights.beta * pyramidality(state) + weights.gamma * s


def step_reward(j_next: float, j_curr: float) -> float:
    return j_next - j_curr


def metrics(state: PackingState, latency_per_object: float | None = None) -> MetricsRecord:
    return MetricsRecord(
        C=compactness(state),
        P=pyramidality(state),
        S=mean_stability(state),
        packed_count=len(state.packed),
        latency_per_object=latency_per_object,
    )


# -- support polygon --------------------------------------------------------


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points: Sequence[tuple]) -> list[tuple]:
    """Monotone-chain hull, counter-clockwise, collinear points dropped."""
    pts = sorted(set(points))
    if len(pts) <= 2:
        return pts
    lower: list[tuple] = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[tuple] = []
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1]
    if len(hull) == 2 and hull[0] == hull[1]:
        return hull[:1]
    return hull


def in_hull(hull: list[tuple], p: tuple) -> bool:
    """Point-in-convex-polygon including the boundary; handles point and segment hulls."""
    if not hull:
        return False
    if len(hull) == 1:
        return tuple(p) == tuple(hull[0])
    if len(hull) == 2:
        a, b = hull
        if _cross(a, b, p) != 0:
            return False
        return min(a[0], b[0]) <= p[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= p[1] <= max(a[1], b[1])
    return all(_cross(hull[k], hull[(k + 1) % len(hull)], p) >= 0 for k in range(len(hull)))


def contact_cells(box_before: Heightmap, placement: Placement, h_b: Heightmap) -> np.ndarray:
    """Footprint cells (local indices) where the object rests on the box surface."""
    w, l = h_b.shape
    u = placement.position[0] - w // 2
    v = placement.position[1] - l // 2
    region = box_before.heights[u : u + w, v : v + l]
    hb = h_b.heights
    occ = hb != EMPTY
    touching = occ & (region - np.where(occ, hb, 0) == placement.z_q)
    return np.argwhere(touching)


def stability_check(
    box_before: Heightmap,
    placement: Placement,
    h_b: Heightmap,
    com: Sequence,
    thresholds: StabilityThresholds = StabilityThresholds(),
) -> int:
    """1 if the center of mass projects into the support polygon of the contact cells, else 0.

    ``com`` is in footprint-local cell units (x, y[, z]); exact fractions give
    exact boundary decisions.
    """
    cells = contact_cells(box_before, placement, h_b)
    assert len(cells), "a dropped object always touches something"
    # only the per-row extremes can be hull vertices
    pts = []
    for s in np.unique(cells[:, 0]):
        ts = cells[cells[:, 0] == s, 1]
        pts.append((Fraction(2 * int(s) + 1, 2), Fraction(2 * int(ts.min()) + 1, 2)))
        pts.append((Fraction(2 * int(s) + 1, 2), Fraction(2 * int(ts.max()) + 1, 2)))
    cx, cy = (c if isinstance(c, Fraction) else Fraction(c) for c in com[:2])
    return int(in_hull(convex_hull(pts), (cx, cy)))
