"""Loss terms against loop oracles, SSIM properties, finite differences."""

import numpy as np
import pytest

from ogmap.losses import (
    LossWeights,
    l1_color,
    l1_depth,
    metrics,
    psnr,
    scale_reg,
    ssim,
    total_loss,
)

from conftest import central_diff, max_rel_err


def test_l1_color_matches_loop(rng):
    a = rng.random((6, 7, 3))
    b = rng.random((6, 7, 3))
    value, grad = l1_color(a, b)
    acc = 0.0
    for i in range(6):
        for j in range(7):
            for c in range(3):
                acc += abs(a[i, j, c] - b[i, j, c])
    assert abs(value - acc / (6 * 7 * 3)) < 1e-12
    fd = central_diff(lambda v: l1_color(v, b)[0], a.copy())
    assert np.allclose(grad, fd, atol=1e-7)


def test_l1_depth_masked_oracle(rng):
    d = rng.random((5, 5)) + 0.5
    sensor = rng.random((5, 5)) + 0.5
    sensor[0, :] = 0.0  # invalid sensor rows
    accum = np.ones((5, 5))
    accum[:, 0] = 0.2  # under-covered column
    value, grad = l1_depth(d, sensor, accum)
    acc, cnt = 0.0, 0
    for i in range(5):
        for j in range(5):
            if sensor[i, j] > 0 and accum[i, j] > 0.5:
                acc += abs(d[i, j] - sensor[i, j])
                cnt += 1
    assert abs(value - acc / cnt) < 1e-12
    assert np.all(grad[0, :] == 0) and np.all(grad[:, 0] == 0)
    fd = central_diff(lambda v: l1_depth(v, sensor, accum)[0], d.copy())
    assert np.allclose(grad, fd, atol=1e-7)


def test_l1_depth_empty_mask():
    d = np.ones((4, 4))
    value, grad = l1_depth(d, np.zeros((4, 4)), np.ones((4, 4)))
    assert value == 0.0 and np.all(grad == 0)


def test_ssim_identity_and_symmetry(rng):
    a = rng.random((16, 16, 3))
    b = rng.random((16, 16, 3))
    assert abs(ssim(a, a, with_grad=False)[0] - 1.0) < 1e-12
    sab = ssim(a, b, with_grad=False)[0]
    sba = ssim(b, a, with_grad=False)[0]
    assert abs(sab - sba) < 1e-6
    assert -1.0 <= sab <= 1.0


def test_ssim_decreases_with_noise(rng):
    a = rng.random((24, 24, 3))
    s_small = ssim(a, np.clip(a + 0.01 * rng.normal(size=a.shape), 0, 1), with_grad=False)[0]
    s_big = ssim(a, np.clip(a + 0.2 * rng.normal(size=a.shape), 0, 1), with_grad=False)[0]
    assert s_big < s_small < 1.0


def test_ssim_gradient_matches_fd(rng):
    a = rng.random((13, 14))
    b = rng.random((13, 14))
    s, grad = ssim(a, b)

    def f(v):
        return ssim(v, b, with_grad=False)[0]

    fd = central_diff(f, a.copy())
    assert max_rel_err(grad, fd, floor=1e-5) < 1e-4


def test_ssim_gradient_multichannel_matches_fd(rng):
    a = rng.random((12, 12, 3))
    b = rng.random((12, 12, 3))
    s, grad = ssim(a, b)
    fd = central_diff(lambda v: ssim(v, b, with_grad=False)[0], a.copy())
    assert max_rel_err(grad, fd, floor=1e-5) < 1e-4


def test_ssim_rejects_small_images():
    a = np.zeros((10, 12))
    with pytest.raises(ValueError):
        ssim(a, a)


def test_scale_reg_oracle(rng):
    phi = rng.random((8, 3)) * 0.2
    value, grad = scale_reg(phi)
    acc = 0.0
    for i in range(8):
        acc += phi[i, 0] * phi[i, 1] * phi[i, 2]
    assert abs(value - acc) < 1e-12
    fd = central_diff(lambda v: scale_reg(v)[0], phi.copy())
    assert np.allclose(grad, fd, atol=1e-8)
    # no division: zero entries are safe
    z = phi.copy()
    z[0, 0] = 0.0
    v2, g2 = scale_reg(z)
    assert np.isfinite(g2).all()
    assert g2[0, 1] == 0.0 and g2[0, 2] == 0.0 and g2[0, 0] == z[0, 1] * z[0, 2]


def test_scale_reg_empty():
    value, grad = scale_reg(np.zeros((0, 3)))
    assert value == 0.0 and grad.shape == (0, 3)


def test_total_loss_combination(rng):
    h = w = 16
    color = rng.random((h, w, 3))
    target = rng.random((h, w, 3))
    depth = rng.random((h, w)) + 0.5
    sensor = rng.random((h, w)) + 0.5
    accum = np.ones((h, w))
    phi = rng.random((5, 3)) * 0.1
    weights = LossWeights(0.8, 0.2, 0.5, 0.01)
    report, grads = total_loss(color, depth, accum, target, sensor, phi, weights)

    lc = l1_color(color, target)[0]
    ls = 1.0 - ssim(color, target, with_grad=False)[0]
    ld = l1_depth(depth, sensor, accum)[0]
    lr = scale_reg(phi)[0]
    assert abs(report.total - (0.8 * lc + 0.2 * ls + 0.5 * ld + 0.01 * lr)) < 1e-12
    assert report.color == lc and report.depth == ld and report.scale == lr

    fd = central_diff(
        lambda v: total_loss(v, depth, accum, target, sensor, phi, weights)[0].total,
        color.copy(),
    )
    assert max_rel_err(grads.color_image, fd, floor=1e-5) < 1e-3
    fd_d = central_diff(
        lambda v: total_loss(color, v, accum, target, sensor, phi, weights)[0].total,
        depth.copy(),
    )
    assert np.allclose(grads.depth_image, fd_d, atol=1e-7)
    fd_p = central_diff(
        lambda v: total_loss(color, depth, accum, target, sensor, v, weights)[0].total,
        phi.copy(),
    )
    assert np.allclose(grads.scale, fd_p, atol=1e-8)


def test_psnr_caps_and_basics():
    a = np.full((8, 8, 3), 0.5)
    assert psnr(a, a) == 100.0
    b = a.copy()
    b += 0.1
    assert abs(psnr(a, b) - 20.0) < 1e-9  # mse = 0.01 -> 20 dB
    assert isinstance(psnr(a, b), float)


def test_metrics_depth_cm(rng):
    color = rng.random((16, 16, 3))
    depth = np.full((16, 16), 1.0)
    sensor = np.full((16, 16), 1.02)
    m = metrics(color, color, depth, sensor)
    assert m["psnr"] == 100.0
    assert abs(m["ssim"] - 1.0) < 1e-12
    assert abs(m["depth_l1_cm"] - 2.0) < 1e-9
