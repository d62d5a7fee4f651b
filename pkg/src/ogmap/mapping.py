"""Online mapping loop: keyframing, windowed optimisation, refinement, logging.

Frames stream in order. Each frame's visible level-0 key set decides whether
it becomes a keyframe; keyframes back-project their depth into new level-0
anchors and trigger an optimisation burst of `iterations` rounds. Every round
picks a window of keyframes (resampled fresh per round for the dynamic
strategy, fixed once per keyframe for the baselines) and runs one gradient
step per window member. Growth and pruning run on fixed cadences inside the
burst. Every frame, keyframe or not, gets rendered and logged.

The per-frame log is a CSV with a fixed column set; floats print with %.10g
so two runs of the same configuration produce byte-identical logs when
timing capture is off.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .checkpoint import save_checkpoint
from .config import RunConfig
from .datasets import Dataset
from .keyframes import KeyframeRegistry, WindowConfig
from .losses import LossReport, LossWeights, metrics, total_loss
from .octree import VoxelGrid, voxelize_depth_frame
from .refinement import GrowthStats, grow_anchors, prune_anchors
from .rng import stream
from .scene import SceneModel
from .splatter import project_backward, project_gaussians, rasterize, rasterize_backward

CSV_HEADER = (
    "frame_id,is_keyframe,anchors_L0,anchors_L1,anchors_L2,"
    "L_c,L_SSIM,L_d,L_s,total,psnr,ssim,depth_l1_cm,wall_ms"
)


def render_view(scene: SceneModel, camera, tile: Optional[int] = 16, update_stats: bool = False):
    """Decode + project + rasterise one view; returns (RenderOutput, batch)."""
    batch, _ = scene.generate_view(camera, update_stats=update_stats)
    proj = project_gaussians(batch.mu, batch.quat, batch.scale, camera, near=scene.near)
    out = rasterize(proj, batch.color, batch.alpha, tile=tile)
    return out, batch


def optimize_step(
    scene: SceneModel,
    camera,
    target_color: np.ndarray,
    sensor_depth: np.ndarray,
    config: RunConfig,
    stats: GrowthStats,
) -> LossReport:
    """One full forward/backward/update pass on a single view."""
    batch, cache = scene.generate_view(camera, update_stats=True)
    proj = project_gaussians(batch.mu, batch.quat, batch.scale, camera, near=scene.near)
    out = rasterize(proj, batch.color, batch.alpha, tile=config.tile)
    weights = LossWeights(config.w_color, config.w_ssim, config.w_depth, config.w_scale)
    report, lgrads = total_loss(
        out.color, out.depth, out.accum_alpha, target_color, sensor_depth, batch.scale, weights
    )
    g_mean2d, g_cov2d, g_alpha, g_rgb, g_z = rasterize_backward(
        out, lgrads.color_image, lgrads.depth_image
    )
    stats.accumulate(batch.anchor_ids, batch.slots, g_mean2d)
    g_mu, g_quat, g_scale = project_backward(proj, g_mean2d, g_cov2d, g_z)
    # the volume penalty covers every decoded primitive, culled ones included
    g_scale = g_scale + lgrads.scale
    grads = scene.backward_view(cache, g_mu, g_rgb, g_alpha, g_quat, g_scale)
    scene.adam_step(grads, config.lrs())
    return report


@dataclass
class KeyframeProgress:
    frame_id: int
    first_total: float
    last_total: float


@dataclass
class MappingResult:
    scene: SceneModel
    config: RunConfig
    registry: KeyframeRegistry
    stats: GrowthStats
    rows: list = field(default_factory=list)
    kf_progress: list = field(default_factory=list)
    # (keyframe frame_id, iteration, tuple of window frame_ids), when traced
    window_trace: list = field(default_factory=list)

    def csv(self) -> str:
        lines = [CSV_HEADER]
        for r in self.rows:
            wall = f"{r['wall_ms']:.3f}" if self.config.log_timing else "0"
            lines.append(
                f"{r['frame_id']},{r['is_keyframe']},"
                f"{r['anchors_L0']},{r['anchors_L1']},{r['anchors_L2']},"
                f"{r['L_c']:.10g},{r['L_SSIM']:.10g},{r['L_d']:.10g},{r['L_s']:.10g},"
                f"{r['total']:.10g},{r['psnr']:.10g},{r['ssim']:.10g},"
                f"{r['depth_l1_cm']:.10g},{wall}"
            )
        return "\n".join(lines) + "\n"


def run_mapping(
    dataset: Dataset,
    config: RunConfig = None,
    out_dir=None,
    progress: Optional[Callable[[dict], None]] = None,
    trace_windows: bool = False,
) -> MappingResult:
    """Map a dataset start to finish; optionally write log/model/config to disk."""
    if config is None:
        config = RunConfig()
    grid = VoxelGrid.around(
        dataset.camera(0).position, config.voxel_size, config.max_level
    )
    scene = SceneModel(
        grid,
        seed=config.seed,
        near=config.near,
        margin_scale=config.margin_scale,
    )
    registry = KeyframeRegistry(scene)
    stats = GrowthStats(0)
    window_rng = stream(config.seed, "window")
    wcfg = WindowConfig(
        size=config.window_size,
        local_draws=config.local_draws,
        global_draws=config.global_draws,
        threshold=config.overlap_threshold,
    )
    weights = LossWeights(config.w_color, config.w_ssim, config.w_depth, config.w_scale)
    result = MappingResult(scene, config, registry, stats)

    for frame_id, frame in enumerate(dataset.frames):
        t0 = time.perf_counter()
        cam = dataset.camera(frame_id)
        keys = scene.visible_level0_keys(cam)
        is_kf = registry.should_insert(keys, config.overlap_threshold)

        if is_kf:
            codes = voxelize_depth_frame(frame.depth, cam, grid, level=0)
            scene.add_anchors(codes, 0)
            stats.sync(scene.n_anchors)
            kf = registry.add(frame_id, cam)
            fixed_window = None
            if config.strategy != "dynamic":
                fixed_window = registry.window(kf, config.strategy, wcfg, window_rng)

            first_total = last_total = float("nan")
            for it in range(config.iterations):
                if fixed_window is not None:
                    window = fixed_window
                else:
                    window = registry.sample_window(kf, wcfg, window_rng)
                if trace_windows:
                    result.window_trace.append(
                        (frame_id, it, tuple(k.frame_id for k in window))
                    )
                for kfw in window:
                    wf = dataset.frames[kfw.frame_id]
                    report = optimize_step(scene, kfw.camera, wf.color, wf.depth, config, stats)
                    kfw.visits += 1
                    if kfw is kf:
                        last_total = report.total
                        if it == 0 and np.isnan(first_total):
                            first_total = report.total
                if config.growth and (it + 1) % config.growth_every == 0:
                    grow_anchors(scene, stats, config.grad_threshold, config.max_level)
                if (it + 1) % config.prune_every == 0:
                    prune_anchors(scene, stats, config.prune_threshold())
            result.kf_progress.append(KeyframeProgress(frame_id, first_total, last_total))

        out, batch = render_view(scene, cam, tile=config.tile, update_stats=False)
        report, _ = total_loss(
            out.color, out.depth, out.accum_alpha, frame.color, frame.depth, batch.scale, weights
        )
        m = metrics(out.color, frame.color, out.depth, frame.depth)
        counts = scene.anchor_counts()
        wall_ms = (time.perf_counter() - t0) * 1000.0
        row = {
            "frame_id": frame_id,
            "is_keyframe": int(is_kf),
            "anchors_L0": counts[0],
            "anchors_L1": counts[1] if len(counts) > 1 else 0,
            "anchors_L2": counts[2] if len(counts) > 2 else 0,
            "L_c": report.color,
            "L_SSIM": report.ssim,
            "L_d": report.depth,
            "L_s": report.scale,
            "total": report.total,
            "psnr": m["psnr"],
            "ssim": m["ssim"],
            "depth_l1_cm": m["depth_l1_cm"],
            "wall_ms": wall_ms if config.log_timing else 0.0,
        }
        result.rows.append(row)
        if progress is not None:
            progress(row)

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "log.csv").write_text(result.csv())
        (out_dir / "config.json").write_text(config.to_json() + "\n")
        # sparse mode trades resumability for size: no optimizer moments
        save_checkpoint(
            out_dir / "model.ogmp", scene, config, include_optimizer=not config.sparse
        )
    return result


def evaluate(scene: SceneModel, dataset: Dataset, tile: Optional[int] = 16) -> dict:
    """Render every frame from the finished model and aggregate quality numbers."""
    per_frame = []
    for frame_id, frame in enumerate(dataset.frames):
        cam = dataset.camera(frame_id)
        out, _ = render_view(scene, cam, tile=tile, update_stats=False)
        m = metrics(out.color, frame.color, out.depth, frame.depth)
        m["frame_id"] = frame_id
        per_frame.append(m)
    return {
        "frames": per_frame,
        "mean_psnr": float(np.mean([m["psnr"] for m in per_frame])),
        "mean_ssim": float(np.mean([m["ssim"] for m in per_frame])),
        "mean_depth_l1_cm": float(np.mean([m["depth_l1_cm"] for m in per_frame])),
    }


STRATEGIES = ("dynamic", "random", "overlap", "coverage_max")


def ablate_keyframes(
    dataset: Dataset,
    config: RunConfig = None,
    strategies=STRATEGIES,
    progress: Optional[Callable[[str, dict], None]] = None,
) -> dict:
    """Run the full loop once per window strategy and evaluate each model.

    Every run starts from scratch with the same seed, so the only difference
    is how optimisation windows get picked.
    """
    if config is None:
        config = RunConfig()
    summary = {}
    for strategy in strategies:
        cfg = dataclasses.replace(config, strategy=strategy)
        result = run_mapping(dataset, cfg)
        ev = evaluate(result.scene, dataset, tile=cfg.tile)
        summary[strategy] = {
            "mean_psnr": ev["mean_psnr"],
            "mean_ssim": ev["mean_ssim"],
            "mean_depth_l1_cm": ev["mean_depth_l1_cm"],
            "n_keyframes": len(result.registry),
            "n_anchors": result.scene.n_anchors,
        }
        if progress is not None:
            progress(strategy, summary[strategy])
    return summary
