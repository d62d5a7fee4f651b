"""Shared test helpers: finite differences and small scene builders."""

import numpy as np
import pytest

from ogmap.camera import Camera


def rel_err(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def central_diff(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Per-element central finite differences of a scalar function."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g


def max_rel_err(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def simple_camera(width=16, height=16, fx=None, pos=(0.0, 0.0, 0.0), dtype=np.float64) -> Camera:
    """Axis-aligned camera at `pos` looking down +z in world coordinates."""
    if fx is None:
        fx = width / 2.0
    pose = np.eye(4, dtype=np.float64)
    pose[:3, 3] = pos
    return Camera(width, height, fx, fx, width / 2.0, height / 2.0, pose)


def random_gaussians(rng: np.random.Generator, m: int, width: int, height: int, z_range=(0.5, 4.0)):
    """Random well-conditioned 3D Gaussians in front of a +z-looking camera."""
    fx = width / 2.0
    z = rng.uniform(*z_range, size=m)
    # means spread across the view frustum, some slightly outside
    u = rng.uniform(-0.2 * width, 1.2 * width, size=m)
    v = rng.uniform(-0.2 * height, 1.2 * height, size=m)
    x = (u - width / 2.0) * z / fx
    y = (v - height / 2.0) * z / fx
    mu = np.stack([x, y, z], axis=1)
    quat = rng.normal(size=(m, 4))
    quat /= np.linalg.norm(quat, axis=1, keepdims=True)
    scale = rng.uniform(0.05, 0.5, size=(m, 3))
    color = rng.uniform(0.0, 1.0, size=(m, 3))
    alpha = rng.uniform(0.1, 0.95, size=m)
    return mu, quat, scale, color, alpha


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
