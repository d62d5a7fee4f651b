"""Sparse octree vs a plain python-set oracle, and visibility behaviour."""

import time

import numpy as np
import pytest

from ogmap.camera import Camera
from ogmap.morton import MAX_COORD, morton_encode
from ogmap.octree import SparseOctree, VoxelGrid, voxelize_depth_frame
from ogmap.synth import generate

from conftest import simple_camera


def naive_voxel_set(depth, camera, grid, level):
    """Back-project every valid pixel and collect voxel codes in a set."""
    size = grid.voxel_size(level)
    out = set()
    rot = camera.rotation
    pos = camera.position
    for i in range(camera.height):
        for j in range(camera.width):
            d = float(depth[i, j])
            if not np.isfinite(d) or d <= 0:
                continue
            ray = np.array(
                [(j + 0.5 - camera.cx) / camera.fx, (i + 0.5 - camera.cy) / camera.fy, 1.0]
            )
            p = pos + rot @ (ray * d)
            c = np.floor((p - grid.origin) / size).astype(np.int64)
            out.add(int(morton_encode(int(c[0]), int(c[1]), int(c[2]))))
    return out


def test_voxelize_matches_set_oracle_50_frames():
    ds = generate("room", frames=10, width=24, height=24)
    grid = VoxelGrid.around(ds.camera(0).position, 0.1)
    rng = np.random.default_rng(42)
    t0 = time.perf_counter()
    checked = 0
    for trial in range(50):
        frame_idx = int(rng.integers(0, len(ds)))
        cam = ds.camera(frame_idx)
        depth = ds.frames[frame_idx].depth.astype(np.float64).copy()
        # poke random invalid holes so the mask path is exercised
        holes = rng.random(depth.shape) < 0.1
        depth[holes] = 0.0
        level = int(rng.integers(0, 3))
        codes = voxelize_depth_frame(depth, cam, grid, level=level)
        oracle = naive_voxel_set(depth, cam, grid, level)
        assert set(int(c) for c in codes) == oracle
        assert np.all(np.diff(codes.astype(np.int64)) > 0)  # sorted unique
        checked += len(oracle)
    elapsed = time.perf_counter() - t0
    assert checked > 0
    assert elapsed < 10.0, f"50-frame oracle comparison took {elapsed:.1f}s"


def test_insert_dedup_and_id_assignment():
    grid = VoxelGrid((0.0, 0.0, 0.0), 1.0)
    tree = SparseOctree(grid)
    ids1 = tree.insert([9, 3, 3, 7], level=0)
    assert ids1.tolist() == [0, 1, 2]  # unique-sorted: 3, 7, 9
    assert tree.codes.tolist() == [3, 7, 9]
    ids2 = tree.insert([7, 1], level=0)
    assert ids2.tolist() == [3]  # only 1 is new
    assert tree.codes.tolist() == [3, 7, 9, 1]
    # same code at another level is a different anchor
    ids3 = tree.insert([3], level=1)
    assert ids3.tolist() == [4]
    assert tree.anchor_count(0) == 4
    assert tree.anchor_count(1) == 1


def test_remove_remaps_ids():
    grid = VoxelGrid((0.0, 0.0, 0.0), 1.0)
    tree = SparseOctree(grid)
    tree.insert([1, 2, 3, 4], level=0)
    remap = tree.remove(np.array([1, 2]))
    assert remap.tolist() == [0, -1, -1, 1]
    assert tree.codes.tolist() == [1, 4]
    assert tree.get(1, 0) == 0 and tree.get(4, 0) == 1
    assert tree.get(2, 0) is None


def test_restore_preserves_id_order():
    grid = VoxelGrid((0.0, 0.0, 0.0), 1.0)
    tree = SparseOctree(grid)
    tree.insert([5, 2], level=0)
    tree.insert([9], level=1)
    tree.insert([1], level=0)
    clone = SparseOctree.restore(grid, tree.codes, tree.levels)
    assert clone.codes.tolist() == tree.codes.tolist()
    assert clone.levels.tolist() == tree.levels.tolist()
    for lvl in range(3):
        assert clone._maps[lvl] == tree._maps[lvl]


def test_visibility_margin_none_returns_all():
    grid = VoxelGrid((-10.0, -10.0, -10.0), 0.5)
    tree = SparseOctree(grid)
    pts = np.array([[0.0, 0.0, 2.0], [0.0, 0.0, -5.0], [8.0, 0.0, 1.0]])
    tree.insert(grid.encode(pts, 0), level=0)
    cam = simple_camera(32, 32)
    assert len(tree.visible(cam, margin_scale=None)) == 3
    vis = tree.visible(cam, margin_scale=2.0)
    # only the point in front and inside the frustum survives
    assert len(vis) == 1
    center = grid.centers(tree.codes[vis], 0)[0]
    assert center[2] > 0


def test_visibility_margin_tolerates_just_outside():
    grid = VoxelGrid((-10.0, -10.0, -10.0), 0.5)
    tree = SparseOctree(grid)
    cam = simple_camera(32, 32)  # fx=16
    # voxel center (1.75, 0.25, 1.25) projects to u=38.4, off a 32px image,
    # but within the 2-voxel margin (12.8px at that depth)
    near_miss = np.array([[1.6, 0.1, 1.1]])
    far_miss = np.array([[6.0, 0.1, 1.1]])
    tree.insert(grid.encode(near_miss, 0), 0)
    tree.insert(grid.encode(far_miss, 0), 0)
    vis = tree.visible(cam, margin_scale=2.0)
    assert len(vis) == 1
    assert len(tree.visible(cam, margin_scale=0.0)) == 0


def test_visibility_level_filter():
    grid = VoxelGrid((-10.0, -10.0, -10.0), 0.5)
    tree = SparseOctree(grid)
    p = np.array([[0.0, 0.0, 2.0]])
    tree.insert(grid.encode(p, 0), 0)
    tree.insert(grid.encode(p, 1), 1)
    cam = simple_camera(32, 32)
    assert len(tree.visible(cam)) == 2
    assert len(tree.visible(cam, level=0)) == 1
    assert len(tree.visible(cam, level=1)) == 1


def test_centers_invert_encode():
    grid = VoxelGrid((-3.0, -4.0, -5.0), 0.25)
    rng = np.random.default_rng(3)
    pts = rng.uniform(-2.0, 2.0, size=(100, 3))
    for level in range(3):
        codes = grid.encode(pts, level)
        centers = grid.centers(codes, level)
        assert np.array_equal(grid.encode(centers, level), codes)
        assert np.all(np.abs(centers - pts) <= grid.voxel_size(level) * 0.5 + 1e-12)


def test_around_brackets_position_at_all_levels():
    pos = (2.0, -7.3, 1.4)
    grid = VoxelGrid.around(pos, 0.1, max_level=2)
    p = np.asarray(pos)[None, :]
    for level in range(3):
        coords = grid.quantize(p, level)
        assert np.all(coords >= 0) and np.all(coords < MAX_COORD)
        # room to move a few hundred meters in any direction
        margin = 1000.0 / grid.voxel_size(level)
        assert np.all(coords >= margin)
        assert np.all(coords <= MAX_COORD - margin)


def test_quantize_rejects_out_of_grid():
    grid = VoxelGrid((0.0, 0.0, 0.0), 1.0)
    with pytest.raises(ValueError):
        grid.quantize(np.array([[-0.5, 0.0, 0.0]]), 0)
    with pytest.raises(ValueError):
        grid.quantize(np.array([[np.nan, 0.0, 0.0]]), 0)
