"""Checkpoint round-trips and the sparse deployment variant.

Maps a short sequence twice: once with defaults, once in sparse mode (which
prunes aggressively and strips optimizer state from the saved model). Shows
that loading a checkpoint reproduces the exact same renders, and what the
sparse variant costs in quality versus what it saves in bytes.
"""

import os
from pathlib import Path

import numpy as np

from ogmap import RunConfig, evaluate, generate, load_checkpoint, render_view, run_mapping

OUT = Path(__file__).parent / "out" / "05_checkpoint_roundtrip"


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    ds = generate("room", frames=6, width=64, height=64, seed=0)

    runs = {}
    for name, sparse in (("default", False), ("sparse", True)):
        out_dir = OUT / name
        result = run_mapping(ds, RunConfig(sparse=sparse, log_timing=False), out_dir=out_dir)
        runs[name] = {
            "scene": result.scene,
            "path": out_dir / "model.ogmp",
            "psnr": evaluate(result.scene, ds)["mean_psnr"],
        }

    # reload the default model and check the render is bit-for-bit identical
    scene, config = load_checkpoint(runs["default"]["path"])
    cam = ds.camera(0)
    live, _ = render_view(runs["default"]["scene"], cam, tile=config.tile)
    loaded, _ = render_view(scene, cam, tile=config.tile)
    identical = np.array_equal(live.color, loaded.color) and np.array_equal(
        live.depth, loaded.depth
    )
    print(f"reloaded model renders identically: {identical}")

    sizes = {name: os.path.getsize(r["path"]) / 1024 for name, r in runs.items()}
    print(f"default: {sizes['default']:7.1f} KiB  psnr {runs['default']['psnr']:.2f} dB")
    print(f"sparse:  {sizes['sparse']:7.1f} KiB  psnr {runs['sparse']['psnr']:.2f} dB")
    print(
        f"sparse model is {100 * sizes['sparse'] / sizes['default']:.0f}% the size, "
        f"{runs['default']['psnr'] - runs['sparse']['psnr']:+.2f} dB PSNR difference"
    )


if __name__ == "__main__":
    main()
