"""Mapping objective: photometric + depth + structural + scale terms.

total = w_color * L1(color) + w_ssim * (1 - SSIM) + w_depth * masked-L1(depth)
        + w_scale * sum-of-volumes

Every term returns its analytic gradient alongside the value; the SSIM
gradient is derived by hand through the Gaussian-window statistics (the
filtered maps F(a), F(a^2), F(ab) are the independent quantities, and the
backward pass is their adjoint scatter). SSIM uses an 11x11 Gaussian window
with sigma 1.5 and the usual stabilisers C1 = 0.01^2, C2 = 0.03^2, evaluated
on fully valid windows only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
_R = SSIM_WIN // 2


@dataclass
class LossWeights:
    color: float = 0.8
    ssim: float = 0.2
    depth: float = 0.5
    scale: float = 0.01


@dataclass
class LossReport:
    color: float
    ssim: float  # the 1 - SSIM term
    depth: float
    scale: float
    total: float


def _gauss_kernel(dtype) -> np.ndarray:
    r = np.arange(SSIM_WIN, dtype=np.float64) - _R
    k = np.exp(-0.5 * (r / SSIM_SIGMA) ** 2)
    return (k / k.sum()).astype(dtype)


def _filt_valid(img: np.ndarray, k: np.ndarray) -> np.ndarray:
    t = correlate1d(img, k, axis=0, mode="constant")
    t = correlate1d(t, k, axis=1, mode="constant")
    return t[_R:-_R, _R:-_R]


def _scatter_full(coeff: np.ndarray, k: np.ndarray, shape) -> np.ndarray:
    out = np.zeros(shape, dtype=coeff.dtype)
    out[_R:-_R, _R:-_R] = coeff
    out = correlate1d(out, k, axis=0, mode="constant")
    return correlate1d(out, k, axis=1, mode="constant")


def l1_color(rendered: np.ndarray, target: np.ndarray):
    """Mean absolute color error and its gradient w.r.t. the rendering."""
    diff = rendered - target
    value = float(np.mean(np.abs(diff)))
    grad = np.sign(diff) / diff.size
    return value, grad


def l1_depth(rendered: np.ndarray, sensor: np.ndarray, accum_alpha: np.ndarray):
    """Masked mean absolute depth error.

    Only pixels with a valid sensor reading (> 0) and enough rendered
    coverage (accumulated alpha > 0.5) contribute; the mask itself is not
    differentiated. An empty mask yields zero loss and zero gradient.
    """
    mask = (sensor > 0) & (accum_alpha > 0.5)
    count = int(mask.sum())
    grad = np.zeros_like(rendered)
    if count == 0:
        return 0.0, grad
    diff = np.where(mask, rendered - sensor, 0.0)
    value = float(np.abs(diff).sum() / count)
    grad = np.sign(diff) / count
    return value, grad


def ssim(a: np.ndarray, b: np.ndarray, with_grad: bool = True):
    """Mean SSIM over valid windows; optionally d(SSIM)/da.

    Accepts (H, W) or (H, W, C); both images must match shapes and be at
    least the window size along each spatial axis.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError("ssim inputs must have identical shapes")
    squeeze = a.ndim == 2
    if squeeze:
        a = a[..., None]
        b = b[..., None]
    h, w, nc = a.shape
    if h < SSIM_WIN or w < SSIM_WIN:
        raise ValueError("image smaller than the SSIM window")
    k = _gauss_kernel(a.dtype)
    grad = np.zeros_like(a) if with_grad else None
    total = 0.0
    n_maps = (h - 2 * _R) * (w - 2 * _R) * nc
    for c in range(nc):
        ac, bc = a[..., c], b[..., c]
        mu_a = _filt_valid(ac, k)
        mu_b = _filt_valid(bc, k)
        p_aa = _filt_valid(ac * ac, k)
        p_bb = _filt_valid(bc * bc, k)
        p_ab = _filt_valid(ac * bc, k)
        a1 = 2.0 * mu_a * mu_b + SSIM_C1
        a2 = 2.0 * (p_ab - mu_a * mu_b) + SSIM_C2
        b1 = mu_a * mu_a + mu_b * mu_b + SSIM_C1
        b2 = (p_aa - mu_a * mu_a) + (p_bb - mu_b * mu_b) + SSIM_C2
        denom = b1 * b2
        smap = a1 * a2 / denom
        total += float(smap.sum())
        if not with_grad:
            continue
        g = 1.0 / n_maps  # upstream for the mean
        d_mu = g * (2.0 * mu_b * (a2 - a1) / denom - 2.0 * mu_a * smap * (1.0 / b1 - 1.0 / b2))
        d_paa = g * (-smap / b2)
        d_pab = g * (2.0 * a1 / denom)
        grad[..., c] = (
            _scatter_full(d_mu, k, (h, w))
            + 2.0 * ac * _scatter_full(d_paa, k, (h, w))
            + bc * _scatter_full(d_pab, k, (h, w))
        )
    value = total / n_maps
    if grad is not None and squeeze:
        grad = grad[..., 0]
    return value, grad


def scale_reg(phi: np.ndarray):
    """Sum over primitives of the product of scale axes (a volume penalty)."""
    if phi.size == 0:
        return 0.0, np.zeros_like(phi)
    value = float(np.sum(np.prod(phi, axis=-1)))
    grad = np.empty_like(phi)
    grad[..., 0] = phi[..., 1] * phi[..., 2]
    grad[..., 1] = phi[..., 0] * phi[..., 2]
    grad[..., 2] = phi[..., 0] * phi[..., 1]
    return value, grad


@dataclass
class LossGrads:
    color_image: np.ndarray  # dL/d rendered color, (H, W, 3)
    depth_image: np.ndarray  # dL/d rendered depth, (H, W)
    scale: np.ndarray  # dL/d phi, (M, 3)


def total_loss(
    render_color: np.ndarray,
    render_depth: np.ndarray,
    accum_alpha: np.ndarray,
    target: np.ndarray,
    sensor_depth: np.ndarray,
    phi: np.ndarray,
    weights: LossWeights = LossWeights(),
):
    """Weighted objective; returns (LossReport, LossGrads)."""
    lc, g_lc = l1_color(render_color, target)
    sv, g_ssim = ssim(render_color, target)
    ls = 1.0 - sv
    ld, g_ld = l1_depth(render_depth, sensor_depth, accum_alpha)
    lreg, g_reg = scale_reg(phi)
    total = weights.color * lc + weights.ssim * ls + weights.depth * ld + weights.scale * lreg
    grads = LossGrads(
        color_image=weights.color * g_lc - weights.ssim * g_ssim,
        depth_image=weights.depth * g_ld,
        scale=weights.scale * g_reg,
    )
    return LossReport(lc, ls, ld, lreg, total), grads


def psnr(rendered: np.ndarray, target: np.ndarray, cap: float = 100.0) -> float:
    """Peak signal-to-noise ratio for unit-range images, capped at 100 dB."""
    mse = float(np.mean((rendered - target) ** 2))
    if mse < 1e-10:
        return cap
    return float(min(cap, 10.0 * np.log10(1.0 / mse)))


def metrics(
    render_color: np.ndarray,
    target: np.ndarray,
    render_depth: np.ndarray,
    sensor_depth: np.ndarray,
) -> dict:
    """Evaluation numbers: PSNR (dB), SSIM, Depth-L1 (cm over valid pixels)."""
    valid = sensor_depth > 0
    if valid.any():
        depth_l1_cm = float(np.mean(np.abs(render_depth[valid] - sensor_depth[valid]))) * 100.0
    else:
        depth_l1_cm = 0.0
    return {
        "psnr": psnr(render_color, target),
        "ssim": ssim(render_color, target, with_grad=False)[0],
        "depth_l1_cm": depth_l1_cm,
    }
