"""Sparse multi-level voxel octree keyed by Morton codes.

The "octree" is stored flat: one hash map per level from Morton code to
anchor id. Level l voxels have edge length gamma_0 / 4**l, all levels share
one origin, and quantisation is floor((p - origin) / edge). There is no
pointer structure to rebalance; existence of a key is the only state, which
makes insertion idempotent and set semantics exact.

Anchor ids are dense row indices [0, N) into whatever per-anchor arrays the
caller maintains; `remove` compacts ids and returns the remap so those
arrays can be compacted the same way.
"""

from __future__ import annotations

from typing import Iterable, Optional

import numpy as np

from .camera import Camera
from .morton import MAX_COORD, morton_decode, morton_encode


class VoxelGrid:
    """Origin + base edge length; pure coordinate arithmetic, no storage."""

    def __init__(self, origin, base_voxel_size: float, max_level: int = 2):
        self.origin = np.asarray(origin, dtype=np.float64).reshape(3)
        self.base_voxel_size = float(base_voxel_size)
        self.max_level = int(max_level)
        if self.base_voxel_size <= 0:
            raise ValueError("voxel size must be positive")

    @classmethod
    def around(cls, position, base_voxel_size: float, max_level: int = 2) -> "VoxelGrid":
        """Grid whose address space is centered on `position`.

        The position snaps to the level-0 lattice and the origin backs off by
        half the addressable extent of the *finest* level, so every level's
        21-bit coordinate range brackets the starting camera.
        """
        base = float(base_voxel_size)
        snapped = np.floor(np.asarray(position, dtype=np.float64) / base) * base
        finest = base / 4.0**max_level
        origin = snapped - (MAX_COORD // 2) * finest
        return cls(origin, base, max_level)

    def voxel_size(self, level: int) -> float:
        return self.base_voxel_size / 4.0**level

    def quantize(self, points: np.ndarray, level: int) -> np.ndarray:
        """Floor-quantise (N, 3) world points to integer voxel coords."""
        size = self.voxel_size(level)
        coords = np.floor((np.asarray(points, dtype=np.float64) - self.origin) / size)
        if np.any(~np.isfinite(coords)):
            raise ValueError("cannot quantise non-finite points")
        if np.any((coords < 0) | (coords >= MAX_COORD)):
            raise ValueError("point outside the 21-bit addressable grid range")
        return coords.astype(np.int64)

    def encode(self, points: np.ndarray, level: int) -> np.ndarray:
        c = self.quantize(points, level)
        return morton_encode(c[:, 0], c[:, 1], c[:, 2])

    def centers(self, codes: np.ndarray, level) -> np.ndarray:
        """World-space centers of voxels given codes and level(s)."""
        x, y, z = morton_decode(np.asarray(codes, dtype=np.uint64))
        coords = np.stack([x, y, z], axis=-1).astype(np.float64)
        if np.isscalar(level):
            size = self.voxel_size(level)
        else:
            size = (self.base_voxel_size / 4.0 ** np.asarray(level, dtype=np.float64))[:, None]
        return self.origin + (coords + 0.5) * size


class SparseOctree:
    def __init__(self, grid: VoxelGrid):
        self.grid = grid
        self._maps: list[dict[int, int]] = [dict() for _ in range(grid.max_level + 1)]
        self._codes: list[int] = []
        self._levels: list[int] = []
        self._cache: Optional[tuple[np.ndarray, np.ndarray]] = None

    @classmethod
    def restore(cls, grid: VoxelGrid, codes, levels) -> "SparseOctree":
        """Rebuild from saved (code, level) rows, preserving anchor id order."""
        tree = cls(grid)
        tree._codes = [int(c) for c in np.asarray(codes, dtype=np.uint64)]
        tree._levels = [int(l) for l in levels]
        for i, (c, l) in enumerate(zip(tree._codes, tree._levels)):
            tree._maps[l][c] = i
        return tree

    def __len__(self) -> int:
        return len(self._codes)

    def anchor_count(self, level: Optional[int] = None) -> int:
        if level is None:
            return len(self._codes)
        return len(self._maps[level])

    @property
    def codes(self) -> np.ndarray:
        self._refresh()
        return self._cache[0]

    @property
    def levels(self) -> np.ndarray:
        self._refresh()
        return self._cache[1]

    def _refresh(self) -> None:
        if self._cache is None:
            self._cache = (
                np.asarray(self._codes, dtype=np.uint64),
                np.asarray(self._levels, dtype=np.int64),
            )

    def contains(self, code: int, level: int) -> bool:
        return int(code) in self._maps[level]

    def get(self, code: int, level: int) -> Optional[int]:
        return self._maps[level].get(int(code))

    def insert(self, codes: Iterable[int] | np.ndarray, level: int) -> np.ndarray:
        """Insert codes at one level; returns ids of the newly created anchors.

        Duplicate and already-present codes are skipped, and new ids are
        assigned in ascending code order so insertion is deterministic for a
        given key set regardless of input ordering.
        """
        table = self._maps[level]
        fresh = np.unique(np.asarray(list(codes) if not isinstance(codes, np.ndarray) else codes, dtype=np.uint64))
        new_ids = []
        for code in fresh.tolist():
            if code in table:
                continue
            idx = len(self._codes)
            table[code] = idx
            self._codes.append(code)
            self._levels.append(level)
            new_ids.append(idx)
        if new_ids:
            self._cache = None
        return np.asarray(new_ids, dtype=np.int64)

    def find(self, point, level: int) -> Optional[int]:
        """Anchor id of the level-`level` voxel containing `point`, if any."""
        code = self.grid.encode(np.asarray(point, dtype=np.float64).reshape(1, 3), level)[0]
        return self._maps[level].get(int(code))

    def remove(self, ids: np.ndarray) -> np.ndarray:
        """Delete anchors; returns an old-id -> new-id remap (-1 for removed)."""
        n = len(self._codes)
        drop = np.zeros(n, dtype=bool)
        drop[np.asarray(ids, dtype=np.int64)] = True
        remap = np.full(n, -1, dtype=np.int64)
        remap[~drop] = np.arange(int((~drop).sum()), dtype=np.int64)
        codes = [c for c, d in zip(self._codes, drop) if not d]
        levels = [l for l, d in zip(self._levels, drop) if not d]
        self._codes = codes
        self._levels = levels
        for lvl, table in enumerate(self._maps):
            self._maps[lvl] = {c: int(remap[i]) for c, i in table.items() if not drop[i]}
        self._cache = None
        return remap

    def visible(
        self,
        camera: Camera,
        level: Optional[int] = None,
        margin_scale: Optional[float] = 2.0,
        near: float = 1e-2,
    ) -> np.ndarray:
        """Ids of anchors whose voxel center projects into the image.

        The image rectangle is dilated by `margin_scale * voxel_size(level)`
        world units at the anchor's depth, so anchors just outside the view
        still count as visible. `margin_scale=None` skips the frustum test
        entirely and returns every anchor (at the requested level).
        """
        self._refresh()
        codes, levels = self._cache
        ids = np.arange(len(codes), dtype=np.int64)
        if level is not None:
            keep = levels == level
            codes, levels, ids = codes[keep], levels[keep], ids[keep]
        if len(ids) == 0 or margin_scale is None:
            return ids
        centers = self.grid.centers(codes, levels)
        uv, z = camera.project(centers)
        sizes = self.grid.base_voxel_size / 4.0**levels.astype(np.float64)
        zsafe = np.where(z > near, z, 1.0)
        mx = camera.fx * (margin_scale * sizes) / zsafe
        my = camera.fy * (margin_scale * sizes) / zsafe
        ok = (
            (z > near)
            & (uv[:, 0] >= -mx)
            & (uv[:, 0] <= camera.width + mx)
            & (uv[:, 1] >= -my)
            & (uv[:, 1] <= camera.height + my)
        )
        return ids[ok]


def voxelize_depth_frame(
    depth: np.ndarray, camera: Camera, grid: VoxelGrid, level: int = 0
) -> np.ndarray:
    """Unique Morton codes of the voxels hit by a depth frame's back-projection.

    Pixels with depth <= 0 or non-finite depth are invalid and ignored.
    Returns a sorted uint64 code array (a set, in array clothing).
    """
    d = np.asarray(depth, dtype=np.float64)
    points = camera.backproject(d)
    valid = np.isfinite(points).all(axis=1)
    if not np.any(valid):
        return np.empty(0, dtype=np.uint64)
    return np.unique(grid.encode(points[valid], level))
