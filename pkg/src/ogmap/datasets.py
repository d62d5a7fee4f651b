"""RGB-D dataset layout: manifest.json + per-frame PPM color and raw depth.

manifest.json schema:
    {"width": W, "height": H, "fx": .., "fy": .., "cx": .., "cy": ..,
     "depth_scale": s,
     "frames": [{"color": relpath, "depth": relpath, "pose": [16 floats]}]}

Poses are row-major 4x4 camera-to-world. Stored depth values are s * meters;
the loader divides by depth_scale. Loading validates pose finiteness and
rotation orthonormality (1e-4) and the raw depth buffer size.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .camera import Camera
from .image_io import read_depth_raw, read_ppm


@dataclass
class Frame:
    color: np.ndarray  # (H, W, 3) float32 in [0, 1]
    depth: np.ndarray  # (H, W) float32 meters, <= 0 marks invalid pixels
    pose: np.ndarray  # (4, 4) camera-to-world


@dataclass
class Dataset:
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    depth_scale: float
    frames: list

    def __len__(self) -> int:
        return len(self.frames)

    def camera(self, index: int) -> Camera:
        return Camera(
            self.width, self.height, self.fx, self.fy, self.cx, self.cy,
            self.frames[index].pose,
        )


def load_dataset(root) -> Dataset:
    root = Path(root)
    manifest_path = root / "manifest.json"
    with open(manifest_path) as fh:
        man = json.load(fh)
    for key in ("width", "height", "fx", "fy", "cx", "cy", "depth_scale", "frames"):
        if key not in man:
            raise ValueError(f"manifest missing required key {key!r}")
    width, height = int(man["width"]), int(man["height"])
    scale = float(man["depth_scale"])
    frames = []
    for i, entry in enumerate(man["frames"]):
        pose = np.asarray(entry["pose"], dtype=np.float64)
        if pose.size != 16:
            raise ValueError(f"frame {i}: pose must hold 16 floats")
        pose = pose.reshape(4, 4)
        if not np.all(np.isfinite(pose)):
            raise ValueError(f"frame {i}: non-finite pose")
        rot = pose[:3, :3]
        if np.max(np.abs(rot @ rot.T - np.eye(3))) > 1e-4:
            raise ValueError(f"frame {i}: pose rotation is not orthonormal")
        color = read_ppm(root / entry["color"])
        if color.shape != (height, width, 3):
            raise ValueError(f"frame {i}: color dims do not match the manifest")
        depth = read_depth_raw(root / entry["depth"], width, height) / scale
        frames.append(Frame(color=color, depth=depth, pose=pose))
    return Dataset(
        width=width,
        height=height,
        fx=float(man["fx"]),
        fy=float(man["fy"]),
        cx=float(man["cx"]),
        cy=float(man["cy"]),
        depth_scale=scale,
        frames=frames,
    )


def save_dataset(root, dataset: Dataset) -> None:
    """Write a dataset in the manifest layout (color/ and depth/ subdirs)."""
    from .image_io import write_depth_raw, write_ppm

    root = Path(root)
    (root / "color").mkdir(parents=True, exist_ok=True)
    (root / "depth").mkdir(parents=True, exist_ok=True)
    entries = []
    for i, frame in enumerate(dataset.frames):
        cpath = f"color/frame_{i:04d}.ppm"
        dpath = f"depth/frame_{i:04d}.f32"
        write_ppm(root / cpath, frame.color)
        write_depth_raw(root / dpath, frame.depth * dataset.depth_scale)
        entries.append(
            {"color": cpath, "depth": dpath, "pose": [float(v) for v in frame.pose.reshape(-1)]}
        )
    man = {
        "width": dataset.width,
        "height": dataset.height,
        "fx": dataset.fx,
        "fy": dataset.fy,
        "cx": dataset.cx,
        "cy": dataset.cy,
        "depth_scale": dataset.depth_scale,
        "frames": entries,
    }
    with open(root / "manifest.json", "w") as fh:
        json.dump(man, fh, indent=2, sort_keys=True)
        fh.write("\n")
