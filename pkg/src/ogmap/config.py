"""Run configuration, JSON round-trippable.

Defaults are the desk-scale operating point: 10 cm base voxels, the standard
loss weights (0.8 / 0.2 / 0.5 / 0.01), learning rates 0.0075 (features),
0.001 (offsets) and 0.008 / 0.002 / 0.004 for the color / opacity / cov
decoders, a 10-frame window with 5 local + 4 global draws, growth every 10
iterations, pruning every 50.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass


@dataclass
class RunConfig:
    # geometry
    voxel_size: float = 0.1  # gamma_0, level-0 edge in meters
    max_level: int = 2
    near: float = 0.01
    margin_scale: float = 2.0  # visibility dilation, in voxel edges
    tile: int = 16
    # refinement
    grad_threshold: float = 2e-4  # tau_0
    prune_opacity: float = 0.01  # rho
    sparse_prune_opacity: float = 0.3  # rho when sparse=True
    sparse: bool = False
    growth_every: int = 10
    prune_every: int = 50
    growth: bool = True
    # keyframing
    overlap_threshold: float = 0.85
    window_size: int = 10
    local_draws: int = 5
    global_draws: int = 4
    strategy: str = "dynamic"  # dynamic | random | overlap | coverage_max
    iterations: int = 60  # optimisation steps per keyframe
    # optimisation
    lr_features: float = 0.0075
    lr_offsets: float = 0.001
    lr_color: float = 0.008
    lr_opacity: float = 0.002
    lr_cov: float = 0.004
    w_color: float = 0.8
    w_ssim: float = 0.2
    w_depth: float = 0.5
    w_scale: float = 0.01
    # run plumbing
    seed: int = 0
    log_timing: bool = True

    def prune_threshold(self) -> float:
        return self.sparse_prune_opacity if self.sparse else self.prune_opacity

    def lrs(self) -> dict:
        return {
            "offsets": self.lr_offsets,
            "features": self.lr_features,
            "color": self.lr_color,
            "opacity": self.lr_opacity,
            "cov": self.lr_cov,
        }

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))
