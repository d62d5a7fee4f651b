"""Flat-file image formats: binary PPM (P6) color and raw float32 depth.

Color images are unit-range float arrays serialised as 8-bit P6 with maxval
255. Depth images are raw little-endian float32, row-major, no header; the
dataset manifest carries the dimensions.
"""

from __future__ import annotations

import numpy as np


def write_ppm(path, image: np.ndarray) -> None:
    """Write (H, W, 3) floats in [0, 1] as binary P6."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("expected an (H, W, 3) image")
    data = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_ppm(path) -> np.ndarray:
    """Read binary P6 back to float32 in [0, 1]."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.startswith(b"P6"):
        raise ValueError(f"{path}: not a binary PPM (P6) file")
    # header: magic, width, height, maxval, single whitespace, then pixels
    fields: list[bytes] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":  # comment line
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    pos += 1  # the single whitespace byte after maxval
    width, height, maxval = (int(f) for f in fields)
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    pixels = np.frombuffer(raw, dtype=np.uint8, count=width * height * 3, offset=pos)
    return (pixels.reshape(height, width, 3).astype(np.float32)) / 255.0


def write_depth_raw(path, depth: np.ndarray) -> None:
    """Write (H, W) depth as raw little-endian float32."""
    d = np.asarray(depth, dtype="<f4")
    if d.ndim != 2:
        raise ValueError("expected an (H, W) depth image")
    with open(path, "wb") as fh:
        fh.write(np.ascontiguousarray(d).tobytes())


def read_depth_raw(path, width: int, height: int) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    expected = width * height * 4
    if len(raw) != expected:
        raise ValueError(f"{path}: depth buffer is {len(raw)} bytes, expected {expected}")
    return np.frombuffer(raw, dtype="<f4").reshape(height, width).astype(np.float32)
