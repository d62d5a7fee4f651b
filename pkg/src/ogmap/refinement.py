"""Progressive refinement: gradient-driven anchor growth and opacity pruning.

Level l has voxel edge gamma_l = gamma_0 / 4**l and growth threshold
tau_l = tau_0 * 2**l, so each finer level is 4x smaller and twice as hard to
trigger. A slot triggers growth when its mean accumulated screen-space
gradient norm reaches tau of its anchor's level; the new anchor lands at the
slot's current Gaussian position x, at the same level if x's voxel is empty
there, otherwise one level finer (level 2 caps the hierarchy). Each slot can
trigger at most once, ever.

Pruning drops anchors whose best slot opacity never reached rho since the
last prune; freshly created anchors that have not been rendered yet are
exempt until they get a chance to show something.
"""

from __future__ import annotations

import numpy as np

from .scene import N_OFFSETS, SceneModel


def level_params(level: int, gamma0: float, tau0: float) -> tuple[float, float]:
    """(voxel size, growth threshold) for a refinement level."""
    return gamma0 / 4.0**level, tau0 * 2.0**level


class GrowthStats:
    """Accumulated ||dL/d mean2d|| per (anchor, slot), plus sample counts."""

    def __init__(self, n_anchors: int, dtype=np.float64):
        self.grad_sum = np.zeros((n_anchors, N_OFFSETS), dtype=dtype)
        self.count = np.zeros((n_anchors, N_OFFSETS), dtype=np.int64)

    def sync(self, n_anchors: int) -> None:
        """Grow the buckets to match newly added anchors."""
        k = n_anchors - self.grad_sum.shape[0]
        if k > 0:
            self.grad_sum = np.pad(self.grad_sum, ((0, k), (0, 0)))
            self.count = np.pad(self.count, ((0, k), (0, 0)))

    def compact(self, keep: np.ndarray) -> None:
        self.grad_sum = self.grad_sum[keep]
        self.count = self.count[keep]

    def reset(self) -> None:
        self.grad_sum[:] = 0
        self.count[:] = 0

    def accumulate(self, anchor_ids: np.ndarray, slots: np.ndarray, g_mean2d: np.ndarray) -> None:
        """Add one view's gradient norms; every rendered primitive counts."""
        if len(anchor_ids) == 0:
            return
        norms = np.linalg.norm(g_mean2d, axis=1)
        # (anchor, slot) pairs are unique within one view batch
        self.grad_sum[anchor_ids, slots] += norms
        self.count[anchor_ids, slots] += 1

    def means(self) -> np.ndarray:
        return self.grad_sum / np.maximum(self.count, 1)


def grow_anchors(
    scene: SceneModel, stats: GrowthStats, tau0: float, max_level: int = 2
) -> np.ndarray:
    """One growth pass; returns ids of anchors created.

    Triggered slots are evaluated against the octree state at the start of
    the pass and duplicate targets collapse to one creation, so the pass does
    not depend on slot iteration order. Every triggered slot is marked grown
    whether or not a creation actually happened (it had its one chance).
    """
    stats.sync(scene.n_anchors)
    if scene.n_anchors == 0:
        return np.zeros(0, dtype=np.int64)
    means = stats.means()
    tau = tau0 * 2.0 ** scene.levels.astype(np.float64)
    trig = (means >= tau[:, None]) & ~scene.grown & (stats.count > 0)
    if not trig.any():
        stats.reset()
        return np.zeros(0, dtype=np.int64)

    anchor_idx, slot_idx = np.nonzero(trig)
    levels = scene.levels[anchor_idx]
    x = (
        scene.positions[anchor_idx]
        + scene.base_scales[anchor_idx] * scene.offsets[anchor_idx, slot_idx]
    ).astype(np.float64)

    targets: dict[int, set[int]] = {l: set() for l in range(max_level + 1)}
    for i in range(len(anchor_idx)):
        lvl = int(levels[i])
        same_code = int(scene.grid.encode(x[i : i + 1], lvl)[0])
        if same_code not in scene.octree._maps[lvl]:
            targets[lvl].add(same_code)
            continue
        if lvl >= max_level:
            continue  # nowhere finer to go
        fine = lvl + 1
        fine_code = int(scene.grid.encode(x[i : i + 1], fine)[0])
        if fine_code not in scene.octree._maps[fine]:
            targets[fine].add(fine_code)

    scene.grown[anchor_idx, slot_idx] = True
    new_ids = []
    for lvl in range(max_level + 1):
        if targets[lvl]:
            created = scene.add_anchors(sorted(targets[lvl]), lvl)
            new_ids.append(created)
    stats.sync(scene.n_anchors)
    stats.reset()
    if new_ids:
        return np.concatenate(new_ids)
    return np.zeros(0, dtype=np.int64)


def prune_anchors(scene: SceneModel, stats: GrowthStats, rho: float) -> np.ndarray:
    """Drop anchors whose opacity never cleared rho; returns removed ids.

    Only anchors rendered since the last prune are candidates. Afterwards the
    opacity statistics restart from zero for everyone.
    """
    if scene.n_anchors == 0:
        return np.zeros(0, dtype=np.int64)
    prunable = scene.seen & (scene.opacity_max.max(axis=1) < rho)
    removed = np.flatnonzero(prunable)
    if len(removed):
        keep = ~prunable
        scene.remove_anchors(removed)
        stats.sync(len(keep))
        stats.compact(keep)
    scene.opacity_max[:] = 0
    scene.seen[:] = False
    return removed
