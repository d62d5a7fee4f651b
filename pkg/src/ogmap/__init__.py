"""ogmap: online RGB-D dense mapping with anchored 3D Gaussians.

A sparse voxel octree (Morton-coded, up to three refinement levels) anchors
small neural decoders that emit view-dependent 3D Gaussians; a differentiable
tiled CPU rasteriser renders them, and photometric + depth losses drive
per-keyframe optimisation with gradient-driven anchor growth and opacity
pruning. Pure numpy/scipy.
"""

from .camera import Camera
from .checkpoint import export_ply, load_checkpoint, save_checkpoint
from .config import RunConfig
from .datasets import Dataset, Frame, load_dataset, save_dataset
from .keyframes import KeyframeRegistry, WindowConfig, overlap_ratio
from .losses import LossWeights, metrics, psnr, ssim, total_loss
from .mapping import (
    MappingResult,
    ablate_keyframes,
    evaluate,
    optimize_step,
    render_view,
    run_mapping,
)
from .morton import morton_decode, morton_encode
from .octree import SparseOctree, VoxelGrid, voxelize_depth_frame
from .refinement import GrowthStats, grow_anchors, level_params, prune_anchors
from .scene import SceneModel
from .splatter import project_gaussians, rasterize, rasterize_backward
from .synth import generate, preset_spec

__version__ = "0.1.0"

__all__ = [
    "Camera",
    "Dataset",
    "Frame",
    "GrowthStats",
    "KeyframeRegistry",
    "LossWeights",
    "MappingResult",
    "RunConfig",
    "SceneModel",
    "SparseOctree",
    "VoxelGrid",
    "WindowConfig",
    "ablate_keyframes",
    "evaluate",
    "export_ply",
    "generate",
    "grow_anchors",
    "level_params",
    "load_checkpoint",
    "load_dataset",
    "metrics",
    "morton_decode",
    "morton_encode",
    "optimize_step",
    "overlap_ratio",
    "preset_spec",
    "project_gaussians",
    "prune_anchors",
    "psnr",
    "rasterize",
    "rasterize_backward",
    "render_view",
    "run_mapping",
    "save_checkpoint",
    "save_dataset",
    "ssim",
    "total_loss",
    "voxelize_depth_frame",
    "__version__",
]
