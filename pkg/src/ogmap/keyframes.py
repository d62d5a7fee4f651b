"""Keyframe selection and optimisation-window sampling.

A frame becomes a keyframe when the Jaccard overlap between its visible
level-0 anchor key set and the previous keyframe's drops below a threshold.
Each keyframe caches its key set; the cache refreshes lazily when level-0
densification has happened since it was computed.

For optimisation, keyframes split into a local set (overlap with the newest
keyframe >= threshold) and a global set (the rest). The dynamic window is
resampled every iteration: b1 uniform draws from local plus b2 from global,
without replacement, shortfalls backfilled from the other set, the newest
keyframe always included. Three fixed baselines (random / overlap /
coverage_max) pick one window per keyframe and keep it for all iterations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import Camera
from .scene import SceneModel


@dataclass
class WindowConfig:
    size: int = 10
    local_draws: int = 5  # b1
    global_draws: int = 4  # b2
    threshold: float = 0.85  # overlap split / insertion threshold


@dataclass
class Keyframe:
    frame_id: int
    camera: Camera
    keys: set = field(repr=False)
    epoch: int = 0
    visits: int = 0


def overlap_ratio(a: set, b: set) -> float:
    """Jaccard |a & b| / |a | b|; two empty sets count as fully overlapping."""
    union = len(a | b)
    if union == 0:
        return 1.0
    return len(a & b) / union


class KeyframeRegistry:
    def __init__(self, scene: SceneModel):
        self.scene = scene
        self.keyframes: list[Keyframe] = []

    def __len__(self) -> int:
        return len(self.keyframes)

    def add(self, frame_id: int, camera: Camera) -> Keyframe:
        kf = Keyframe(
            frame_id=frame_id,
            camera=camera,
            keys=self.scene.visible_level0_keys(camera),
            epoch=self.scene.level0_epoch,
        )
        self.keyframes.append(kf)
        return kf

    def keys_of(self, kf: Keyframe) -> set:
        """Key set of a keyframe, refreshed if level-0 anchors grew since."""
        if kf.epoch != self.scene.level0_epoch:
            kf.keys = self.scene.visible_level0_keys(kf.camera)
            kf.epoch = self.scene.level0_epoch
        return kf.keys

    def should_insert(self, current_keys: set, threshold: float) -> bool:
        """New keyframe iff overlap with the last keyframe fell below threshold."""
        if not self.keyframes:
            return True
        return overlap_ratio(current_keys, self.keys_of(self.keyframes[-1])) < threshold

    def split_sets(self, anchor_kf: Keyframe, threshold: float):
        """Partition prior keyframes into (local, global) w.r.t. anchor_kf."""
        ref = self.keys_of(anchor_kf)
        local, global_ = [], []
        for kf in self.keyframes:
            if kf is anchor_kf:
                continue
            if overlap_ratio(self.keys_of(kf), ref) >= threshold:
                local.append(kf)
            else:
                global_.append(kf)
        return local, global_

    def sample_window(
        self, anchor_kf: Keyframe, cfg: WindowConfig, rng: np.random.Generator
    ) -> list[Keyframe]:
        """Dynamic window: fresh local/global draws, anchor keyframe first."""
        local, global_ = self.split_sets(anchor_kf, cfg.threshold)
        want = min(cfg.size - 1, len(local) + len(global_))
        n_local = min(cfg.local_draws, len(local))
        n_global = min(cfg.global_draws, len(global_))
        # backfill shortfall from whichever set has spares
        short = min(want, cfg.local_draws + cfg.global_draws) - (n_local + n_global)
        if short > 0:
            extra_local = min(short, len(local) - n_local)
            n_local += extra_local
            n_global += min(short - extra_local, len(global_) - n_global)

        picked: list[Keyframe] = [anchor_kf]
        for pool, n in ((local, n_local), (global_, n_global)):
            if n > 0:
                sel = rng.choice(len(pool), size=n, replace=False)
                picked.extend(pool[i] for i in sel)
        return picked

    def baseline_window(
        self,
        anchor_kf: Keyframe,
        strategy: str,
        cfg: WindowConfig,
        rng: np.random.Generator,
    ) -> list[Keyframe]:
        """Fixed windows: 'random', 'overlap' (top-overlap, ties newest
        first), or 'coverage_max' (least-visited, ties oldest first)."""
        others = [kf for kf in self.keyframes if kf is not anchor_kf]
        n = min(cfg.size - 1, len(others))
        if strategy == "random":
            sel = rng.choice(len(others), size=n, replace=False) if n else []
            picked = [others[i] for i in sel]
        elif strategy == "overlap":
            ref = self.keys_of(anchor_kf)
            ranked = sorted(
                others,
                key=lambda kf: (-overlap_ratio(self.keys_of(kf), ref), -kf.frame_id),
            )
            picked = ranked[:n]
        elif strategy == "coverage_max":
            ranked = sorted(others, key=lambda kf: (kf.visits, kf.frame_id))
            picked = ranked[:n]
        else:
            raise ValueError(f"unknown window strategy {strategy!r}")
        return [anchor_kf] + picked

    def window(
        self,
        anchor_kf: Keyframe,
        strategy: str,
        cfg: WindowConfig,
        rng: np.random.Generator,
    ) -> list[Keyframe]:
        if strategy == "dynamic":
            return self.sample_window(anchor_kf, cfg, rng)
        return self.baseline_window(anchor_kf, strategy, cfg, rng)
