"""Synthetic RGB-D sequences by ray casting analytic scenes.

A scene is a textured axis-aligned room seen from inside, plus optional
textured spheres and boxes. Rays go through pixel centers; the stored depth
is camera-space z (the ray parameter for unnormalised directions with unit
camera z), which matches the mapping pipeline's back-projection convention
exactly. Textures are view-independent albedo, so a perfect reconstruction
of geometry + color reproduces the frames bit for bit.

Presets:
    room    textured box with a sphere and a block, circular outward-looking
            trajectory; the desk-scale convergence scene.
    hifreq  fine checkerboard walls that level-0 anchors cannot resolve;
            exercises anchor growth.
    sweep   elongated room, yaw sweep there and back; the two visibility
            clusters separate local from global keyframes and the return leg
            punishes forgetting.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .camera import Camera
from .datasets import Dataset, Frame, save_dataset
from .rng import stream

_EPS = 1e-9


# ----- textures ----------------------------------------------------------------


@dataclass
class Solid:
    color: tuple

    def color_at(self, p: np.ndarray) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.color, dtype=np.float64), p.shape).copy()


@dataclass
class Checker:
    scale: float
    c1: tuple
    c2: tuple

    def color_at(self, p: np.ndarray) -> np.ndarray:
        parity = np.floor(p / self.scale).sum(axis=-1).astype(np.int64) & 1
        c1 = np.asarray(self.c1, dtype=np.float64)
        c2 = np.asarray(self.c2, dtype=np.float64)
        return np.where(parity[..., None] == 0, c1, c2)


@dataclass
class Gradient:
    axis: int
    c1: tuple
    c2: tuple
    lo: float
    hi: float

    def color_at(self, p: np.ndarray) -> np.ndarray:
        t = np.clip((p[..., self.axis] - self.lo) / (self.hi - self.lo), 0.0, 1.0)
        c1 = np.asarray(self.c1, dtype=np.float64)
        c2 = np.asarray(self.c2, dtype=np.float64)
        return c1 + (c2 - c1) * t[..., None]


# ----- geometry ------------------------------------------------------------------


@dataclass
class Room:
    bmin: tuple
    bmax: tuple
    # face textures indexed x-, x+, y-, y+, z-, z+
    faces: tuple

    def exit_hits(self, origin: np.ndarray, dirs: np.ndarray):
        """(t, face_index) of the wall each inside ray exits through."""
        bmin = np.asarray(self.bmin, dtype=np.float64)
        bmax = np.asarray(self.bmax, dtype=np.float64)
        d = np.where(np.abs(dirs) < _EPS, _EPS, dirs)
        bound = np.where(d > 0, bmax, bmin)
        t_axis = (bound - origin) / d  # (N, 3)
        axis = np.argmin(t_axis, axis=-1)
        t = np.take_along_axis(t_axis, axis[:, None], axis=-1)[:, 0]
        sign = np.take_along_axis(dirs, axis[:, None], axis=-1)[:, 0] > 0
        face = axis * 2 + sign.astype(np.int64)
        return t, face


@dataclass
class Sphere:
    center: tuple
    radius: float
    texture: object

    def hit(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        oc = origin - np.asarray(self.center, dtype=np.float64)
        a = np.sum(dirs * dirs, axis=-1)
        b = 2.0 * np.sum(dirs * oc, axis=-1)
        c = np.sum(oc * oc) - self.radius**2
        disc = b * b - 4 * a * c
        ok = disc > 0
        sq = np.sqrt(np.where(ok, disc, 0.0))
        t1 = (-b - sq) / (2 * a)
        t2 = (-b + sq) / (2 * a)
        t = np.where(t1 > _EPS, t1, t2)
        return np.where(ok & (t > _EPS), t, np.inf)


@dataclass
class Block:
    bmin: tuple
    bmax: tuple
    texture: object

    def hit(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        bmin = np.asarray(self.bmin, dtype=np.float64)
        bmax = np.asarray(self.bmax, dtype=np.float64)
        d = np.where(np.abs(dirs) < _EPS, _EPS, dirs)
        t1 = (bmin - origin) / d
        t2 = (bmax - origin) / d
        t_near = np.minimum(t1, t2).max(axis=-1)
        t_far = np.maximum(t1, t2).min(axis=-1)
        ok = (t_near <= t_far) & (t_near > _EPS)
        return np.where(ok, t_near, np.inf)


@dataclass
class SceneSpec:
    room: Room
    objects: tuple = ()


# ----- trajectories --------------------------------------------------------------


def look_at_pose(position, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Camera-to-world pose, CV convention: x right, y down, z forward."""
    pos = np.asarray(position, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - pos
    fwd = fwd / np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=np.float64))
    right = right / np.linalg.norm(right)
    down = np.cross(fwd, right)
    pose = np.eye(4)
    pose[:3, 0] = right
    pose[:3, 1] = down
    pose[:3, 2] = fwd
    pose[:3, 3] = pos
    return pose


def circle_poses(center, radius: float, height: float, n: int, arc: float = None) -> list:
    """Outward-looking poses around a horizontal circle.

    A full circle (the default) spaces n poses without duplicating the wrap;
    an explicit arc (radians) spaces them endpoint-inclusive, which keeps
    consecutive views overlapping when the arc is short.
    """
    cx, cy = center
    if arc is None:
        angles = 2.0 * np.pi * np.arange(n) / n
    else:
        angles = np.linspace(0.0, arc, n)
    poses = []
    for a in angles:
        pos = np.array([cx + radius * np.cos(a), cy + radius * np.sin(a), height])
        target = np.array([cx + 2.0 * radius * np.cos(a), cy + 2.0 * radius * np.sin(a), height])
        poses.append(look_at_pose(pos, target))
    return poses


def sweep_poses(position, yaw_start: float, yaw_end: float, n: int) -> list:
    """Yaw there and back again from a fixed position (n total frames)."""
    pos = np.asarray(position, dtype=np.float64)
    half = (n + 1) // 2
    out = np.linspace(yaw_start, yaw_end, half)
    back = np.linspace(yaw_end, yaw_start, n - half + 1)[1:]
    poses = []
    for yaw in np.concatenate([out, back]):
        target = pos + np.array([np.cos(yaw), np.sin(yaw), 0.0])
        poses.append(look_at_pose(pos, target))
    return poses


# ----- rendering -----------------------------------------------------------------


def render_frame(spec: SceneSpec, camera: Camera):
    """Ray-cast one view; returns (color (H,W,3), depth (H,W) in camera z)."""
    origin = camera.position
    bmin = np.asarray(spec.room.bmin)
    bmax = np.asarray(spec.room.bmax)
    if np.any(origin <= bmin) or np.any(origin >= bmax):
        raise ValueError("camera must be strictly inside the room")
    dirs = camera.pixel_dirs().reshape(-1, 3) @ camera.rotation.T
    t_room, face = spec.room.exit_hits(origin, dirs)
    t_best = t_room.copy()
    winner = np.full(len(dirs), -1, dtype=np.int64)  # -1 = room wall
    for oi, obj in enumerate(spec.objects):
        t_obj = obj.hit(origin, dirs)
        closer = t_obj < t_best
        t_best = np.where(closer, t_obj, t_best)
        winner = np.where(closer, oi, winner)

    points = origin + t_best[:, None] * dirs
    color = np.zeros((len(dirs), 3), dtype=np.float64)
    wall = winner == -1
    for f in range(6):
        m = wall & (face == f)
        if m.any():
            color[m] = spec.room.faces[f].color_at(points[m])
    for oi, obj in enumerate(spec.objects):
        m = winner == oi
        if m.any():
            color[m] = obj.texture.color_at(points[m])
    h, w = camera.height, camera.width
    return (
        color.reshape(h, w, 3).astype(np.float32),
        t_best.reshape(h, w).astype(np.float32),
    )


# ----- presets -------------------------------------------------------------------


def preset_spec(name: str) -> tuple:
    """Returns (SceneSpec, poses_fn(frames) -> list of 4x4)."""
    if name == "room":
        spec = SceneSpec(
            room=Room(
                bmin=(0.0, 0.0, 0.0),
                bmax=(3.2, 3.2, 2.4),
                faces=(
                    Gradient(2, (0.82, 0.40, 0.28), (0.95, 0.78, 0.55), 0.0, 2.4),
                    Gradient(1, (0.30, 0.45, 0.75), (0.70, 0.85, 0.92), 0.0, 3.2),
                    Checker(0.55, (0.72, 0.68, 0.45), (0.38, 0.35, 0.22)),
                    Gradient(0, (0.35, 0.65, 0.40), (0.85, 0.92, 0.70), 0.0, 3.2),
                    Checker(0.8, (0.50, 0.42, 0.36), (0.28, 0.24, 0.20)),
                    Solid((0.88, 0.88, 0.84)),
                ),
            ),
            objects=(
                Sphere((2.35, 2.3, 0.95), 0.45, Checker(0.3, (0.85, 0.30, 0.25), (0.92, 0.85, 0.30))),
                Block((0.55, 2.25, 0.0), (1.15, 2.85, 0.85), Gradient(2, (0.25, 0.28, 0.60), (0.65, 0.70, 0.95), 0.0, 0.85)),
            ),
        )
        # 150 degree arc: consecutive views overlap enough that only every
        # second frame or so becomes a keyframe, keeping online runs fast
        return spec, lambda n: circle_poses((1.6, 1.6), 0.55, 1.2, n, arc=np.deg2rad(150.0))
    if name == "hifreq":
        fine = Checker(0.09, (0.08, 0.08, 0.12), (0.93, 0.90, 0.85))
        spec = SceneSpec(
            room=Room(
                bmin=(0.0, 0.0, 0.0),
                bmax=(2.8, 2.8, 2.2),
                faces=(
                    fine,
                    fine,
                    Checker(0.09, (0.85, 0.20, 0.15), (0.95, 0.92, 0.88)),
                    Checker(0.09, (0.12, 0.30, 0.70), (0.92, 0.90, 0.86)),
                    Checker(0.13, (0.30, 0.26, 0.22), (0.62, 0.56, 0.48)),
                    Solid((0.9, 0.9, 0.88)),
                ),
            ),
        )
        return spec, lambda n: circle_poses((1.4, 1.4), 0.5, 1.1, n)
    if name == "sweep":
        spec = SceneSpec(
            room=Room(
                bmin=(0.0, 0.0, 0.0),
                bmax=(4.4, 2.6, 2.2),
                faces=(
                    Checker(0.35, (0.80, 0.30, 0.20), (0.95, 0.88, 0.75)),
                    Gradient(2, (0.20, 0.35, 0.70), (0.75, 0.88, 0.95), 0.0, 2.2),
                    Gradient(0, (0.30, 0.60, 0.35), (0.90, 0.92, 0.70), 0.0, 4.4),
                    Checker(0.45, (0.70, 0.62, 0.40), (0.35, 0.30, 0.20)),
                    Checker(0.7, (0.46, 0.40, 0.34), (0.26, 0.22, 0.18)),
                    Solid((0.86, 0.87, 0.84)),
                ),
            ),
        )
        return spec, lambda n: sweep_poses((2.2, 1.3, 1.15), np.pi, 0.0, n)
    raise ValueError(f"unknown preset {name!r}")


def generate(
    name: str,
    frames: int = 20,
    width: int = 64,
    height: int = 64,
    seed: int = 0,
    depth_noise: float = 0.0,
    out_dir: Optional[str] = None,
) -> Dataset:
    """Render a preset to an in-memory dataset, optionally writing it out.

    With depth_noise > 0, Gaussian noise of that sigma (meters) lands on the
    stored depth, drawn from the seeded "synth-noise" stream.
    """
    spec, poses_fn = preset_spec(name)
    fx = width / 2.0
    fy = fx
    ds = Dataset(
        width=width,
        height=height,
        fx=fx,
        fy=fy,
        cx=width / 2.0,
        cy=height / 2.0,
        depth_scale=1.0,
        frames=[],
    )
    noise_rng = stream(seed, "synth-noise")
    for pose in poses_fn(frames):
        cam = Camera(width, height, fx, fy, ds.cx, ds.cy, pose)
        color, depth = render_frame(spec, cam)
        if depth_noise > 0:
            depth = depth + noise_rng.normal(0.0, depth_noise, size=depth.shape).astype(
                np.float32
            )
            depth = np.maximum(depth, 0.05)
        ds.frames.append(Frame(color=color, depth=depth, pose=pose))
    if out_dir is not None:
        save_dataset(out_dir, ds)
    return ds
