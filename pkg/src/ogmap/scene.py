"""Anchor-based scene model.

An anchor is a voxel-center point p_v at octree level l_v carrying a base
scaling s_v = (gamma_l, gamma_l, gamma_l), n learnable offsets and a 32-dim
learnable feature split as (color 16 | opacity 8 | cov 8). Three shared MLP
decoders turn [feature-slice || delta || d] into per-slot Gaussian
parameters, where delta = ||p_cam - p_v|| and d is the unit direction from
the anchor to the camera:

    color:   sigmoid,           3 per slot
    opacity: sigmoid,           1 per slot
    cov:     quat (normalised) + scale (s_v * sigmoid), 7 per slot

Slot means are mu = p_v + s_v * offset. Anchor positions and base scalings
are fixed; offsets, features, and decoder weights are the learnable state.

Storage is struct-of-arrays so a whole view batch decodes as three matrix
multiplies. Anchor ids are row indices; pruning compacts rows and remaps the
octree to match.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .camera import Camera
from .nn import AdamState, Mlp, head_backward, head_forward
from .octree import SparseOctree, VoxelGrid
from .rng import stream

N_OFFSETS = 5
FEATURE_DIM = 32
F_COLOR = slice(0, 16)
F_OPACITY = slice(16, 24)
F_COV = slice(24, 32)


def view_geometry(p_cam: np.ndarray, p_anchor: np.ndarray):
    """Distance and unit direction from anchor(s) to the camera center.

    Raises on coincident points; a zero-length direction has no meaning.
    """
    rel = p_cam - p_anchor
    delta = np.linalg.norm(rel, axis=-1)
    if np.any(delta == 0):
        raise ValueError("camera coincides with an anchor center")
    return delta, rel / delta[..., None]


@dataclass
class Decoders:
    color: Mlp  # 16+1+3 -> 3n
    opacity: Mlp  # 8+1+3 -> n
    cov: Mlp  # 8+1+3 -> 7n

    @classmethod
    def create(cls, rng: np.random.Generator, dtype=np.float32) -> "Decoders":
        return cls(
            color=Mlp.create(rng, 16 + 4, 3 * N_OFFSETS, dtype=dtype),
            opacity=Mlp.create(rng, 8 + 4, N_OFFSETS, dtype=dtype),
            cov=Mlp.create(rng, 8 + 4, 7 * N_OFFSETS, dtype=dtype),
        )

    def items(self):
        return (("color", self.color), ("opacity", self.opacity), ("cov", self.cov))


@dataclass
class GaussianBatch:
    """Flat per-primitive arrays for one view; M = n_visible_anchors * n."""

    mu: np.ndarray  # (M, 3)
    color: np.ndarray  # (M, 3)
    alpha: np.ndarray  # (M,)
    quat: np.ndarray  # (M, 4)
    scale: np.ndarray  # (M, 3)
    anchor_ids: np.ndarray  # (M,)
    slots: np.ndarray  # (M,)

    def __len__(self) -> int:
        return self.mu.shape[0]


@dataclass
class ViewCache:
    ids: np.ndarray
    mlp_caches: dict
    head_caches: dict
    base_scale: np.ndarray  # (V, 3)


@dataclass
class SceneGrads:
    offsets: np.ndarray
    features: np.ndarray
    decoders: dict  # name -> MlpGrads


class SceneModel:
    def __init__(
        self,
        grid: VoxelGrid,
        seed: int = 0,
        dtype=np.float32,
        near: float = 0.01,
        margin_scale: float = 2.0,
    ):
        self.grid = grid
        self.octree = SparseOctree(grid)
        self.dtype = np.dtype(dtype)
        self.near = near
        self.margin_scale = margin_scale
        self._init_rng = stream(seed, "anchor-init")
        self.decoders = Decoders.create(stream(seed, "decoder-init"), dtype=self.dtype)

        z3 = np.zeros((0, 3), dtype=self.dtype)
        self.positions = z3.copy()  # voxel centers, fixed
        self.base_scales = z3.copy()  # (gamma_l,)*3 per anchor, fixed
        self.levels = np.zeros(0, dtype=np.int64)
        self.offsets = np.zeros((0, N_OFFSETS, 3), dtype=self.dtype)
        self.features = np.zeros((0, FEATURE_DIM), dtype=self.dtype)
        self.grown = np.zeros((0, N_OFFSETS), dtype=bool)
        self.opacity_max = np.zeros((0, N_OFFSETS), dtype=self.dtype)
        self.seen = np.zeros(0, dtype=bool)

        self.offsets_state = AdamState.zeros((0, N_OFFSETS, 3), dtype=self.dtype)
        self.features_state = AdamState.zeros((0, FEATURE_DIM), dtype=self.dtype)
        self.decoder_states = {
            name: {k: AdamState.zeros(t.shape, dtype=self.dtype) for k, t in mlp.tensors().items()}
            for name, mlp in self.decoders.items()
        }
        self.level0_epoch = 0  # bumped whenever level-0 anchors appear

    # ----- anchor bookkeeping -------------------------------------------------

    @property
    def n_anchors(self) -> int:
        return self.positions.shape[0]

    def anchor_counts(self) -> list[int]:
        return [int((self.levels == l).sum()) for l in range(self.grid.max_level + 1)]

    def add_anchors(self, codes, level: int) -> np.ndarray:
        """Create anchors for any codes not yet present; returns new ids.

        Offsets init uniform in [-0.5, 0.5), features Normal(0, 0.01); both
        drawn from the scene's seeded init stream in id order.
        """
        new_ids = self.octree.insert(codes, level)
        k = len(new_ids)
        if k == 0:
            return new_ids
        new_codes = self.octree.codes[new_ids]
        centers = self.grid.centers(new_codes, level).astype(self.dtype)
        size = self.dtype.type(self.grid.voxel_size(level))
        self.positions = np.concatenate([self.positions, centers])
        self.base_scales = np.concatenate(
            [self.base_scales, np.full((k, 3), size, dtype=self.dtype)]
        )
        self.levels = np.concatenate([self.levels, np.full(k, level, dtype=np.int64)])
        off = self._init_rng.uniform(-0.5, 0.5, size=(k, N_OFFSETS, 3)).astype(self.dtype)
        feat = (0.01 * self._init_rng.standard_normal((k, FEATURE_DIM))).astype(self.dtype)
        self.offsets = np.concatenate([self.offsets, off])
        self.features = np.concatenate([self.features, feat])
        self.grown = np.concatenate([self.grown, np.zeros((k, N_OFFSETS), dtype=bool)])
        self.opacity_max = np.concatenate(
            [self.opacity_max, np.zeros((k, N_OFFSETS), dtype=self.dtype)]
        )
        self.seen = np.concatenate([self.seen, np.zeros(k, dtype=bool)])
        self.offsets_state.append_rows(k)
        self.features_state.append_rows(k)
        if level == 0:
            self.level0_epoch += 1
        return new_ids

    def remove_anchors(self, ids: np.ndarray) -> None:
        if len(ids) == 0:
            return
        remap = self.octree.remove(ids)
        keep = remap >= 0
        for name in ("positions", "base_scales", "levels", "offsets", "features", "grown", "opacity_max", "seen"):
            setattr(self, name, getattr(self, name)[keep])
        self.offsets_state.compact(keep)
        self.features_state.compact(keep)

    def visible_ids(self, camera: Camera, level: Optional[int] = None) -> np.ndarray:
        return self.octree.visible(
            camera, level=level, margin_scale=self.margin_scale, near=self.near
        )

    def visible_level0_keys(self, camera: Camera) -> set:
        ids = self.visible_ids(camera, level=0)
        return set(self.octree.codes[ids].tolist())

    # ----- decode / backward ---------------------------------------------------

    def generate_view(self, camera: Camera, update_stats: bool = True):
        """Decode every visible anchor into its n Gaussians for this camera.

        Returns (GaussianBatch, ViewCache); the cache carries everything
        `backward_view` needs. With update_stats, each visible anchor's
        per-slot opacity_max running maximum is refreshed.
        """
        ids = self.visible_ids(camera)
        return self.generate_for_ids(ids, camera, update_stats=update_stats)

    def generate_for_ids(self, ids: np.ndarray, camera: Camera, update_stats: bool = True):
        ids = np.asarray(ids, dtype=np.int64)
        v = len(ids)
        if v == 0:
            empty3 = np.zeros((0, 3), dtype=self.dtype)
            batch = GaussianBatch(
                mu=empty3,
                color=empty3.copy(),
                alpha=np.zeros(0, dtype=self.dtype),
                quat=np.zeros((0, 4), dtype=self.dtype),
                scale=empty3.copy(),
                anchor_ids=np.zeros(0, dtype=np.int64),
                slots=np.zeros(0, dtype=np.int64),
            )
            return batch, ViewCache(ids, {}, {}, np.zeros((0, 3), dtype=self.dtype))

        p_cam = camera.position.astype(self.dtype)
        p_v = self.positions[ids]
        delta, direction = view_geometry(p_cam, p_v)
        geo = np.concatenate([delta[:, None], direction], axis=1).astype(self.dtype)
        feats = self.features[ids]
        x_color = np.concatenate([feats[:, F_COLOR], geo], axis=1)
        x_opacity = np.concatenate([feats[:, F_OPACITY], geo], axis=1)
        x_cov = np.concatenate([feats[:, F_COV], geo], axis=1)

        raw_color, c_color = self.decoders.color.forward(x_color)
        raw_opacity, c_opacity = self.decoders.opacity.forward(x_opacity)
        raw_cov, c_cov = self.decoders.cov.forward(x_cov)

        color, h_color = head_forward(raw_color.reshape(v, N_OFFSETS, 3), "color")
        alpha, h_alpha = head_forward(raw_opacity, "opacity")
        raw_cov = raw_cov.reshape(v, N_OFFSETS, 7)
        quat, h_quat = head_forward(raw_cov[..., :4], "quat")
        base = self.base_scales[ids]
        scale, h_scale = head_forward(raw_cov[..., 4:], "scale", base_scale=base[:, None, :])

        mu = p_v[:, None, :] + base[:, None, :] * self.offsets[ids]
        if update_stats:
            self.opacity_max[ids] = np.maximum(self.opacity_max[ids], alpha)
            self.seen[ids] = True

        m = v * N_OFFSETS
        batch = GaussianBatch(
            mu=mu.reshape(m, 3),
            color=color.reshape(m, 3),
            alpha=alpha.reshape(m),
            quat=quat.reshape(m, 4),
            scale=scale.reshape(m, 3),
            anchor_ids=np.repeat(ids, N_OFFSETS),
            slots=np.tile(np.arange(N_OFFSETS, dtype=np.int64), v),
        )
        cache = ViewCache(
            ids=ids,
            mlp_caches={"color": c_color, "opacity": c_opacity, "cov": c_cov},
            head_caches={"color": h_color, "opacity": h_alpha, "quat": h_quat, "scale": h_scale},
            base_scale=base,
        )
        return batch, cache

    def backward_view(
        self,
        cache: ViewCache,
        g_mu: np.ndarray,
        g_color: np.ndarray,
        g_alpha: np.ndarray,
        g_quat: np.ndarray,
        g_scale: np.ndarray,
    ) -> SceneGrads:
        """Chain per-primitive gradients into parameter gradients.

        Offsets/features gradients come back as full-size arrays (zero rows
        for anchors outside this view), ready for whole-tensor Adam steps.
        """
        g_offsets = np.zeros_like(self.offsets)
        g_features = np.zeros_like(self.features)
        decoder_grads: dict = {}
        ids = cache.ids
        v = len(ids)
        if v == 0:
            for name, mlp in self.decoders.items():
                decoder_grads[name] = None
            return SceneGrads(g_offsets, g_features, decoder_grads)

        base = cache.base_scale
        g_offsets[ids] = g_mu.reshape(v, N_OFFSETS, 3) * base[:, None, :]

        g_raw_color = head_backward(cache.head_caches["color"], g_color.reshape(v, N_OFFSETS, 3))
        g_raw_opacity = head_backward(cache.head_caches["opacity"], g_alpha.reshape(v, N_OFFSETS))
        g_raw_cov = np.empty((v, N_OFFSETS, 7), dtype=self.dtype)
        g_raw_cov[..., :4] = head_backward(cache.head_caches["quat"], g_quat.reshape(v, N_OFFSETS, 4))
        g_raw_cov[..., 4:] = head_backward(cache.head_caches["scale"], g_scale.reshape(v, N_OFFSETS, 3))

        gd_color, gx_color = self.decoders.color.backward(
            cache.mlp_caches["color"], g_raw_color.reshape(v, 3 * N_OFFSETS)
        )
        gd_opacity, gx_opacity = self.decoders.opacity.backward(
            cache.mlp_caches["opacity"], g_raw_opacity
        )
        gd_cov, gx_cov = self.decoders.cov.backward(
            cache.mlp_caches["cov"], g_raw_cov.reshape(v, 7 * N_OFFSETS)
        )
        decoder_grads["color"] = gd_color
        decoder_grads["opacity"] = gd_opacity
        decoder_grads["cov"] = gd_cov

        # geometry columns (delta, d) depend only on fixed quantities
        g_features[ids[:, None], np.arange(*F_COLOR.indices(FEATURE_DIM))[None, :]] += gx_color[:, :16]
        g_features[ids[:, None], np.arange(*F_OPACITY.indices(FEATURE_DIM))[None, :]] += gx_opacity[:, :8]
        g_features[ids[:, None], np.arange(*F_COV.indices(FEATURE_DIM))[None, :]] += gx_cov[:, :8]
        return SceneGrads(g_offsets, g_features, decoder_grads)

    # ----- optimisation ---------------------------------------------------------

    def adam_step(self, grads: SceneGrads, lrs: dict) -> None:
        """Apply one Adam update to offsets, features, and the decoders.

        lrs keys: offsets, features, color, opacity, cov.
        """
        from .nn import adam_step as step

        step(self.offsets, grads.offsets, self.offsets_state, lrs["offsets"], name="offsets")
        step(self.features, grads.features, self.features_state, lrs["features"], name="features")
        for name, mlp in self.decoders.items():
            g = grads.decoders.get(name)
            if g is None:
                continue
            tensors = mlp.tensors()
            for key, gt in (("w1", g.w1), ("b1", g.b1), ("w2", g.w2), ("b2", g.b2)):
                step(
                    tensors[key],
                    gt,
                    self.decoder_states[name][key],
                    lrs[name],
                    name=f"{name}.{key}",
                )
