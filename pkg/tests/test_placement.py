import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import box_grid, cuboid_model, random_blob
from packbench.geometry import EMPTY, Heightmap, ObjectModel, OrientationGrid, VoxelGrid, column_maps, orient_object
from packbench.oracles import descending_drop, find_violations
from packbench.placement import (
    BRUTE_FORCE_CAP,
    IllegalPlacement,
    NoSpace,
    PackingState,
    ScoreMatrix,
    apply_placement,
    brute_force_best,
    compute_z,
    drop_height_q,
    drop_map,
    legality_mask,
    place,
)
from packbench.rewards import compactness


def hm(mm, cell=1.0):
    return Heightmap.from_mm(np.asarray(mm, dtype=float), cell)


def test_compute_z_examples():
    flat_b = hm(np.zeros((2, 2)))
    assert compute_z(hm(np.zeros((4, 4))), flat_b, 1, 1) == 0.0
    assert compute_z(hm(np.full((4, 4), 50.0)), flat_b, 2, 2) == 50.0
    # footprint center (1, 1) of a 2x2 footprint covers cells 0..1
    assert compute_z(hm([[5, 0], [0, 0]]), hm([[0, 0], [0, 3]]), 1, 1) == 5.0


def test_compute_z_ignores_empty_columns():
    box = hm([[9, 0], [0, 0]])
    h_b = Heightmap(np.array([[EMPTY, 0], [0, 0]]), 1.0)
    assert compute_z(box, h_b, 1, 1) == 0.0


def test_compute_z_out_of_bounds():
    with pytest.raises(IllegalPlacement):
        compute_z(hm(np.zeros((3, 3))), hm(np.zeros((2, 2))), 0, 0)


def test_table_drop_matches_voxel_oracle():
    occ = np.zeros((5, 2, 3), dtype=bool)
    occ[:, :, 2] = True
    occ[[0, 4], :, :] = True
    g = VoxelGrid(occ, 1.0)
    _, h_b = column_maps(g)
    box = np.zeros((7, 4), dtype=np.int64)
    box[3, 1:3] = 15  # a 1.5 mm bump between the legs
    z = drop_height_q(Heightmap(box, 1.0), h_b, 3, 2)
    assert z == 0
    assert z == descending_drop(box, g, (1, 1))


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_drop_map_agrees_with_pointwise_and_oracle(seed):
    rng = np.random.default_rng(seed)
    g = random_blob(rng, 4)
    h_t, h_b = column_maps(g)
    X, Y = int(rng.integers(g.dims[0], 9)), int(rng.integers(g.dims[1], 9))
    terrain = rng.integers(0, 5, size=(X, Y)) * 10 + rng.integers(0, 3, size=(X, Y))
    box = Heightmap(terrain, 1.0)
    zmap = drop_map(box, h_b)
    w, l = h_b.shape
    for x in range(X):
        for y in range(Y):
            u, v = x - w // 2, y - l // 2
            inside = u >= 0 and v >= 0 and u + w <= X and v + l <= Y
            if not inside:
                assert zmap[x, y] == -1
                continue
            z = drop_height_q(box, h_b, x, y)
            assert zmap[x, y] == z
            assert z == descending_drop(terrain, g, (u, v))


def test_legality_mask_examples():
    box = Heightmap.flat(200, 200, 2.0)
    h_t, h_b = column_maps(box_grid(10, 10, 5, 2.0))
    mask = legality_mask(box, h_t, h_b, 300.0)
    assert mask.sum() == 191 * 191
    xs, ys = np.nonzero(mask)
    assert (xs.min(), xs.max(), ys.min(), ys.max()) == (5, 195, 5, 195)
    tall_t, tall_b = column_maps(box_grid(2, 2, 200, 2.0))
    assert not legality_mask(box, tall_t, tall_b, 300.0).any()
    full = Heightmap.flat(200, 200, 2.0, 300.0)
    assert not legality_mask(full, h_t, h_b, 300.0).any()


def test_apply_placement_stacks_cubes():
    m = cuboid_model(2, 2, 2, 10.0, "a")
    m2 = cuboid_model(2, 2, 2, 10.0, "b")
    shape = orient_object(m, OrientationGrid.identity())[0]
    s = PackingState.empty((100, 100, 100), 10.0, ["a", "b"])
    p = place(s, "a", shape, 3, 3)
    s1 = apply_placement(s, p, shape.h_t, shape.h_b, volume=m.volume)
    assert s1.box.mm[2:4, 2:4].tolist() == [[20.0, 20.0], [20.0, 20.0]]
    assert s1.box.mm.sum() == 80.0
    p2 = place(s1, "b", shape, 3, 3)
    assert p2.z == 20.0
    s2 = apply_placement(s1, p2, shape.h_t, shape.h_b, volume=m2.volume)
    assert s2.box.max_mm() == 40.0
    assert s2.unpacked == frozenset()
    assert np.all(s2.box.heights >= s1.box.heights)


def test_apply_placement_rejections():
    m = cuboid_model(2, 2, 2, 10.0, "a")
    shape = orient_object(m, OrientationGrid.identity())[0]
    s = PackingState.empty((100, 100, 30), 10.0, ["a"])
    p = place(s, "a", shape, 3, 3)
    with pytest.raises(IllegalPlacement):
        apply_placement(s, p.__class__(**{**p.__dict__, "z_q": 10}), shape.h_t, shape.h_b, volume=1.0)
    s1 = apply_placement(s, p, shape.h_t, shape.h_b, volume=m.volume)
    with pytest.raises(IllegalPlacement):
        apply_placement(s1, p, shape.h_t, shape.h_b, volume=m.volume)  # already packed
    t = PackingState(s1.box, s1.h_max_q, s1.packed, frozenset(["z"]), s1.volumes)
    with pytest.raises(IllegalPlacement):
        apply_placement(t, place(t, "z", shape, 3, 3), shape.h_t, shape.h_b, volume=1.0)  # 40 mm > 30 mm cap


def test_plate_on_bowl_rim():
    bowl = np.zeros((5, 5, 3), dtype=bool)
    bowl[:, :, 0] = True
    bowl[[0, 4], :, :] = True
    bowl[:, [0, 4], :] = True
    plate = box_grid(5, 5, 1, 1.0)
    s = PackingState.empty((9, 9, 20), 1.0, ["bowl", "plate"])
    bt, bb = column_maps(VoxelGrid(bowl, 1.0))
    s = apply_placement(s, place(s, "bowl", _shape(bt, bb), 4, 4), bt, bb, volume=float(bowl.sum()))
    pt, pb = column_maps(plate)
    p = place(s, "plate", _shape(pt, pb), 4, 4)
    assert p.z == 3.0
    s2 = apply_placement(s, p, pt, pb, volume=25.0)
    assert np.all(s2.box.mm[2:7, 2:7] == 4.0)
    outside = np.ones((9, 9), dtype=bool)
    outside[2:7, 2:7] = False
    assert np.array_equal(s2.box.heights[outside], s.box.heights[outside])
    items = [
        (VoxelGrid(bowl, 1.0), (2, 2), 0),
        (plate, (2, 2), p.z_q),
    ]
    assert find_violations((9, 9), s.h_max_q, items) == []


def _shape(h_t, h_b):
    from packbench.geometry import OrientedShape

    return OrientedShape((0, 0), (0.0, 0.0, 0.0), h_t, h_b, (0, 0, 0), 1.0)


def test_overlap_oracle_detects_collisions():
    g = box_grid(2, 2, 2, 1.0)
    assert find_violations((4, 4), 100, [(g, (0, 0), 0), (g, (1, 1), 10)])
    assert find_violations((4, 4), 100, [(g, (3, 0), 0)]) == ["item 0 crosses a box wall"]
    assert find_violations((4, 4), 15, [(g, (0, 0), 0)]) == ["item 0 exceeds the height cap"]
    assert find_violations((4, 4), 100, [(g, (0, 0), 0), (g, (0, 0), 20)]) == []


def test_score_matrix_zeroes_illegal_cells():
    legal = np.zeros((2, 3, 3), dtype=bool)
    legal[1, 2, 0] = True
    sm = ScoreMatrix(np.full((2, 3, 3), 5.0), legal)
    assert np.all(sm.scores[~legal] == 0.0)
    assert sm.best() == (1, 2, 0)
    with pytest.raises(NoSpace):
        ScoreMatrix(np.zeros((1, 2, 2)), np.zeros((1, 2, 2), dtype=bool)).best()


def test_score_matrix_ties_are_lexicographic():
    legal = np.ones((2, 3, 3), dtype=bool)
    assert ScoreMatrix(np.ones((2, 3, 3)), legal).best() == (0, 0, 0)


def test_brute_force_single_cube_tie():
    m = cuboid_model(2, 2, 2, 10.0, "a")
    shapes = orient_object(m, OrientationGrid.identity())
    s = PackingState.empty((60, 60, 60), 10.0, ["a"])
    p = brute_force_best(s, "a", shapes, lambda st: -st.box.max_mm())
    assert p.position == (1, 1)


def test_brute_force_hand_enumeration():
    # 5x5-cell box, a 2x2 cube already in the corner; compactness is maximized by
    # any floor placement (same max height), and ties go to the smallest (x, y)
    m = cuboid_model(2, 2, 2, 10.0, "b")
    shape = orient_object(m, OrientationGrid.identity())[0]
    s = PackingState.empty((50, 50, 50), 10.0, ["a", "b"])
    s = apply_placement(s, place(s, "a", shape, 1, 1), shape.h_t, shape.h_b, volume=m.volume)
    values = {}
    for x in range(1, 5):
        for y in range(1, 5):
            p = place(s, "b", shape, x, y)
            values[(x, y)] = compactness(apply_placement(s, p, shape.h_t, shape.h_b, volume=m.volume))
    best = max(values.values())
    expected = min(k for k, v in values.items() if v == best)
    assert best == pytest.approx(16000 / (50 * 50 * 20))
    assert brute_force_best(s, "b", [shape], compactness).position == expected == (1, 3)


def test_brute_force_full_box_and_cap():
    m = cuboid_model(1, 1, 1, 10.0, "a")
    shapes = orient_object(m, OrientationGrid.identity())
    full = PackingState(Heightmap.flat(3, 3, 10.0, 50.0), 500, (), frozenset(["a"]), ())
    with pytest.raises(NoSpace):
        brute_force_best(full, "a", shapes, compactness)
    n = int(BRUTE_FORCE_CAP**0.5) + 1
    big = PackingState.empty((n * 1.0, n * 1.0, 10.0), 1.0, ["a"])
    with pytest.raises(ValueError):
        brute_force_best(big, "a", shapes * 2, compactness)


def test_legality_completeness(rng):
    for _ in range(20):
        g = random_blob(rng, 3)
        m = ObjectModel.from_grid("o", g)
        shape = orient_object(m, OrientationGrid.identity())[0]
        terrain = rng.integers(0, 4, size=(6, 6)) * 10
        s = PackingState(Heightmap(terrain, 1.0), 50, (), frozenset(["o"]), ())
        mask = legality_mask(s.box, shape.h_t, shape.h_b, 5.0)
        w, l = shape.footprint
        for x in range(6):
            for y in range(6):
                fits = x - w // 2 >= 0 and y - l // 2 >= 0 and x - w // 2 + w <= 6 and y - l // 2 + l <= 6
                if mask[x, y]:
                    s2 = apply_placement(s, place(s, "o", shape, x, y), shape.h_t, shape.h_b, volume=m.volume)
                    assert s2.box.heights.max() <= s.h_max_q
                elif fits:
                    assert drop_height_q(s.box, shape.h_b, x, y) + shape.height_q > s.h_max_q
