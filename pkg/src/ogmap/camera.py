"""Pinhole camera model shared by the voxeliser, splatter, and generator.

Conventions, fixed across the whole library:
  * camera space is right-handed with +z looking forward;
  * poses are 4x4 camera-to-world matrices, row-major;
  * pixel (row i, col j) samples the image plane at (j + 0.5, i + 0.5);
  * depth images store camera-space z in meters, not ray length.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ROTATION_TOL = 1e-4


@dataclass
class Camera:
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    c2w: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        self.c2w = np.asarray(self.c2w, dtype=np.float64)
        if self.c2w.shape != (4, 4) or not np.all(np.isfinite(self.c2w)):
            raise ValueError("pose must be a finite 4x4 camera-to-world matrix")
        r = self.c2w[:3, :3]
        if np.max(np.abs(r @ r.T - np.eye(3))) > ROTATION_TOL:
            raise ValueError("pose rotation is not orthonormal")

    @property
    def position(self) -> np.ndarray:
        return self.c2w[:3, 3]

    @property
    def rotation(self) -> np.ndarray:
        """Camera-to-world rotation (columns are the camera axes in world)."""
        return self.c2w[:3, :3]

    def world_to_cam(self, points: np.ndarray) -> np.ndarray:
        """Map (N, 3) world points into camera coordinates."""
        return (points - self.position) @ self.rotation

    def cam_to_world(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.position

    def pixel_dirs(self) -> np.ndarray:
        """(H, W, 3) camera-space ray directions with z = 1, one per pixel."""
        u = (np.arange(self.width, dtype=np.float64) + 0.5 - self.cx) / self.fx
        v = (np.arange(self.height, dtype=np.float64) + 0.5 - self.cy) / self.fy
        dirs = np.empty((self.height, self.width, 3), dtype=np.float64)
        dirs[..., 0] = u[None, :]
        dirs[..., 1] = v[:, None]
        dirs[..., 2] = 1.0
        return dirs

    def backproject(self, depth: np.ndarray) -> np.ndarray:
        """Lift a (H, W) depth image to (H, W, 3) world points.

        Invalid pixels (depth <= 0 or non-finite) come back as NaN rows so
        callers can mask them out without losing the pixel grid layout.
        """
        d = np.asarray(depth, dtype=np.float64)
        if d.shape != (self.height, self.width):
            raise ValueError("depth shape does not match camera dims")
        valid = np.isfinite(d) & (d > 0)
        z = np.where(valid, d, np.nan)
        pts_cam = self.pixel_dirs() * z[..., None]
        return pts_cam.reshape(-1, 3) @ self.rotation.T + self.position

    def project(self, points: np.ndarray):
        """Project (N, 3) world points; returns (uv (N, 2), z (N,))."""
        pc = self.world_to_cam(np.asarray(points, dtype=np.float64))
        z = pc[:, 2]
        zsafe = np.where(z != 0, z, 1.0)
        uv = np.stack(
            [self.fx * pc[:, 0] / zsafe + self.cx, self.fy * pc[:, 1] / zsafe + self.cy],
            axis=1,
        )
        return uv, z
