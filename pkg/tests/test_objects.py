import json
import math

import numpy as np
import pytest
from scipy.spatial import ConvexHull

from conftest import heights_by_scan
from packbench import voxio
from packbench.geometry import VoxelGrid
from packbench.mesh import MeshError, check_closed, load_mesh, read_ascii_stl, voxelize_mesh
from packbench.objects import (
    CONCAVE_FAMILIES,
    CONVEX_FAMILIES,
    FAMILIES,
    EpisodeSet,
    ShapeSpec,
    build_shape,
    fits_empty_box,
    generate_episode,
)


def test_cuboid_build():
    m = build_shape(ShapeSpec("cuboid", (40.0, 40.0, 40.0)), 2.0)
    assert m.grid.dims == (20, 20, 20)
    assert m.grid.count == 8000
    assert m.volume == 64000.0


def test_build_is_deterministic():
    spec = ShapeSpec("bowl", (30.0, 20.0, 4.0), 1.1)
    a, b = build_shape(spec, 2.0), build_shape(spec, 2.0)
    assert voxio.to_bytes(a.grid) == voxio.to_bytes(b.grid)


def test_bowl_views():
    m = build_shape(ShapeSpec("bowl", (30.0, 20.0, 4.0)), 2.0)
    assert m.volume < m.bbox_dims[0] * m.bbox_dims[1] * m.bbox_dims[2]
    top, bottom = heights_by_scan(m.grid)
    nx, ny = top.shape
    # rim is full height, the center only the floor thickness
    assert top[nx // 2, ny // 2] < top.max()
    assert top[0, ny // 2] == top.max()
    occupied = top > 0
    assert np.all(bottom[occupied] == 0)


def test_sphere_cap_volume_close_to_analytic():
    r, h = 40.0, 30.0
    m = build_shape(ShapeSpec("sphere-cap", (r, h)), 2.0)  # cell <= r/10
    analytic = math.pi * h * h * (3 * r - h) / 3
    assert abs(m.volume - analytic) / analytic < 0.05


def test_degenerate_shapes_rejected():
    with pytest.raises(ValueError):
        build_shape(ShapeSpec("cuboid", (2.0, 40.0, 40.0)), 2.0)
    with pytest.raises(ValueError):
        ShapeSpec("cuboid", (1.0, 1.0))
    with pytest.raises(ValueError):
        ShapeSpec("cuboid", (1.0, 1.0, 1.0), 1.5)


@pytest.mark.parametrize("family", FAMILIES)
def test_every_family_builds(family):
    rng = np.random.default_rng(1)
    from packbench.objects import _draw_params

    spec = ShapeSpec(family, _draw_params(family, rng, min_thick=4.0 + 1e-6))
    m = build_shape(spec, 2.0)
    assert m.grid.is_tight()
    assert np.allclose(m.bbox_dims, np.array(m.grid.dims) * 2.0)


def test_episode_determinism_and_manifest_round_trip():
    a = generate_episode(7, "hard", 12, 4.0)
    b = generate_episode(7, "hard", 12, 4.0)
    assert a.manifest_json() == b.manifest_json()
    assert [voxio.to_bytes(m.grid) for m in a.objects] == [voxio.to_bytes(m.grid) for m in b.objects]
    c = EpisodeSet.from_manifest(json.loads(a.manifest_json()))
    assert [m.grid for m in c.objects] == [m.grid for m in a.objects]


@pytest.mark.parametrize("seed", range(3))
def test_family_ratios(seed):
    easy = generate_episode(seed, "easy", 50, 4.0)
    hard = generate_episode(seed, "hard", 50, 4.0)
    assert sum(s.family in CONVEX_FAMILIES for s in easy.specs) >= 35
    assert sum(s.family in CONCAVE_FAMILIES for s in hard.specs) >= 25
    for ep in (easy, hard):
        assert all(0.8 <= s.scale <= 1.2 for s in ep.specs)
        assert all(fits_empty_box(m, ep.box_mm) for m in ep.objects)


def test_small_pools():
    assert len(generate_episode(0, "easy", 0)) == 0
    assert len(generate_episode(0, "easy", 1)) == 1
    with pytest.raises(ValueError):
        generate_episode(0, "medium", 3)


def test_per_axis_scale_flag():
    ep = generate_episode(3, "easy", 5, 4.0, per_axis_scale=True)
    assert all(isinstance(s.scale, tuple) and len(s.scale) == 3 for s in ep.specs)


# -- voxel file formats -----------------------------------------------------


def test_pkvx_layout_bit_exact():
    occ = np.zeros((3, 2, 2), dtype=bool)
    occ[0, 0, 0] = True  # linear index 0
    occ[1, 1, 0] = True  # 1 + 3*1 = 4
    occ[2, 1, 1] = True  # 2 + 3*(1 + 2*1) = 11
    data = voxio.to_bytes(VoxelGrid(occ, 2.0))
    assert data[:4] == b"PKVX"
    assert data[4:6] == (1).to_bytes(2, "little")
    assert data[6:18] == b"".join(v.to_bytes(4, "little") for v in (3, 2, 2))
    assert data[18:22] == (2000).to_bytes(4, "little")
    assert data[22:] == bytes([0b00010001, 0b00001000])
    assert voxio.from_bytes(data) == VoxelGrid(occ, 2.0)


def test_pkvx_rejects_corruption():
    data = voxio.to_bytes(VoxelGrid(np.ones((2, 2, 2), dtype=bool), 1.0))
    with pytest.raises(voxio.VoxelFormatError):
        voxio.from_bytes(b"XXXX" + data[4:])
    with pytest.raises(voxio.VoxelFormatError):
        voxio.from_bytes(data[:-1])


def test_json_mirror_round_trip(tmp_path, rng):
    occ = rng.random((3, 4, 2)) < 0.5
    occ[0, 0, 0] = True
    g = VoxelGrid(occ, 2.0)
    doc = voxio.to_json(g)
    assert doc["layers"][0][0][0] == "#"
    assert voxio.from_json(json.loads(json.dumps(doc))) == g
    voxio.save(g, tmp_path / "g.pkvx")
    assert voxio.load(tmp_path / "g.pkvx") == g


# -- meshes -----------------------------------------------------------------


def box_mesh(sx: float, sy: float, sz: float) -> np.ndarray:
    v = np.array([[x, y, z] for x in (0, sx) for y in (0, sy) for z in (0, sz)], dtype=float)
    return oriented_hull(v)


def oriented_hull(points: np.ndarray) -> np.ndarray:
    hull = ConvexHull(points)
    center = points.mean(axis=0)
    tris = []
    for a, b, c in hull.simplices:
        pa, pb, pc = points[a], points[b], points[c]
        if np.dot(np.cross(pb - pa, pc - pa), pa - center) < 0:
            pb, pc = pc, pb
        tris.append([pa, pb, pc])
    return np.array(tris)


def test_box_mesh_matches_cuboid():
    g = voxelize_mesh(box_mesh(20, 20, 20), 2.0)
    assert g == build_shape(ShapeSpec("cuboid", (20.0, 20.0, 20.0)), 2.0).grid


def test_flipped_face_rejected():
    tris = box_mesh(10, 10, 10)
    tris[0] = tris[0][[0, 2, 1]]
    with pytest.raises(MeshError):
        check_closed(tris)
    with pytest.raises(MeshError):
        voxelize_mesh(tris, 1.0)


def test_open_mesh_rejected():
    with pytest.raises(MeshError):
        voxelize_mesh(box_mesh(10, 10, 10)[1:], 1.0)


def test_sphere_volume():
    rng = np.random.default_rng(0)
    n = 800
    k = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * k / n)
    theta = math.pi * (1 + 5**0.5) * k
    pts = 10.0 * np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], axis=1)
    pts += rng.normal(0, 1e-6, pts.shape)  # avoid degenerate coplanar facets
    g = voxelize_mesh(oriented_hull(pts), 1.0)
    analytic = 4 / 3 * math.pi * 10.0**3
    assert abs(g.volume - analytic) / analytic < 0.05


def test_ascii_stl_reader(tmp_path):
    tris = box_mesh(4, 4, 4)
    lines = ["solid box"]
    for t in tris:
        lines += ["facet normal 0 0 0", "outer loop"] + [f"vertex {p[0]} {p[1]} {p[2]}" for p in t]
        lines += ["endloop", "endfacet"]
    lines.append("endsolid box")
    path = tmp_path / "box.stl"
    path.write_text("\n".join(lines))
    assert np.allclose(load_mesh(path), tris)
    with pytest.raises(MeshError):
        read_ascii_stl("solid empty\nendsolid empty\n")
