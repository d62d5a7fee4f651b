"""Tour of the three synthetic RGB-D presets.

Generates each preset, prints its geometry and camera track, and writes
color + depth snapshots as PPM images under demos/out/01_synthetic_scenes/.
Depth is tone-mapped to grayscale (near = bright) so it can be eyeballed
with any PPM viewer.
"""

from pathlib import Path

import numpy as np

from ogmap import generate, preset_spec
from ogmap.image_io import write_ppm

OUT = Path(__file__).parent / "out" / "01_synthetic_scenes"


def depth_to_gray(depth: np.ndarray) -> np.ndarray:
    """Invalid pixels black, valid ones bright-near / dark-far."""
    valid = depth > 0
    img = np.zeros(depth.shape + (3,), dtype=np.float32)
    if valid.any():
        lo, hi = depth[valid].min(), depth[valid].max()
        span = max(hi - lo, 1e-6)
        shade = 1.0 - 0.85 * (depth - lo) / span
        img[valid] = shade[valid, None]
    return img


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    for preset in ("room", "hifreq", "sweep"):
        spec, _poses = preset_spec(preset)
        ds = generate(preset, frames=6, width=96, height=96, seed=0)
        objs = ", ".join(type(o).__name__ for o in spec.objects) or "bare walls"
        print(f"{preset}: {len(ds)} frames {ds.width}x{ds.height}, room + {objs}")
        for idx in (0, 3):
            frame = ds.frames[idx]
            write_ppm(OUT / f"{preset}_f{idx}_color.ppm", frame.color)
            write_ppm(OUT / f"{preset}_f{idx}_depth.ppm", depth_to_gray(frame.depth))
            valid = frame.depth > 0
            print(
                f"  frame {idx}: depth {frame.depth[valid].min():.2f}.."
                f"{frame.depth[valid].max():.2f} m, {100 * valid.mean():.0f}% valid"
            )
    print(f"images in {OUT}")


if __name__ == "__main__":
    main()
