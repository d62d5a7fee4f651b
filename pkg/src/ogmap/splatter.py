"""Differentiable point-splatting of 3D Gaussians, CPU-tiled.

Forward: each Gaussian (mu, quat, scale) is pushed through the camera to a
2D mean, a 2x2 covariance via the linearised (EWA) projection

    Sigma2d = J W Sigma3d W^T J^T + 0.3 I,   Sigma3d = R(q) diag(phi)^2 R(q)^T,

and a blend depth z, which is the camera-space z of the primitive center
(the same value the per-tile sort uses). Rasterisation walks 16x16 tiles;
within a tile primitives are blended front to back in ascending-z order (ties
broken by primitive id) with

    sigma_i = alpha_i * exp(-0.5 d^T Sigma2d^{-1} d),  clamped to <= 0.999,

stopping once transmittance drops below 1e-4. A primitive contributes only
inside its own 3-sigma bounding box; outside, sigma is exactly zero. Tile
assignment uses the same box, so the tiled and untiled paths blend identical
primitive sets per pixel and differ only in floating-point summation
grouping (well under 1e-6).

Backward: closed-form gradients for every blend input, derived from the
front-to-back recurrence (the transmittance term turns into a suffix sum).
All math follows the dtype of the inputs; float64 in for gradient checks,
float32 in production.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency, but degrade
    _HAVE_NUMBA = False

from .camera import Camera

COV2D_BLUR = 0.3  # isotropic dilation added to every projected covariance
SIGMA_CLAMP = 0.999
STOP_TRANSMITTANCE = 1e-4
DEFAULT_TILE = 16


def thread_count() -> int:
    """Rasteriser tile parallelism, from OGMAP_THREADS (default 1)."""
    try:
        return max(1, int(os.environ.get("OGMAP_THREADS", "1")))
    except ValueError:
        return 1


def quat_to_rot(q: np.ndarray) -> np.ndarray:
    """(M, 4) unit quaternions (w, x, y, z) -> (M, 3, 3) rotation matrices."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    r = np.empty(q.shape[:1] + (3, 3), dtype=q.dtype)
    r[:, 0, 0] = 1 - 2 * (y * y + z * z)
    r[:, 0, 1] = 2 * (x * y - w * z)
    r[:, 0, 2] = 2 * (x * z + w * y)
    r[:, 1, 0] = 2 * (x * y + w * z)
    r[:, 1, 1] = 1 - 2 * (x * x + z * z)
    r[:, 1, 2] = 2 * (y * z - w * x)
    r[:, 2, 0] = 2 * (x * z - w * y)
    r[:, 2, 1] = 2 * (y * z + w * x)
    r[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return r


def quat_rot_backward(q: np.ndarray, gr: np.ndarray) -> np.ndarray:
    """Gradient of quat_to_rot: contract (M, 3, 3) upstream with dR/dq."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    g = np.empty_like(q)
    g[:, 0] = 2 * (
        -z * gr[:, 0, 1] + y * gr[:, 0, 2] + z * gr[:, 1, 0]
        - x * gr[:, 1, 2] - y * gr[:, 2, 0] + x * gr[:, 2, 1]
    )
    g[:, 1] = 2 * (
        y * gr[:, 0, 1] + z * gr[:, 0, 2] + y * gr[:, 1, 0]
        - 2 * x * gr[:, 1, 1] - w * gr[:, 1, 2] + z * gr[:, 2, 0]
        + w * gr[:, 2, 1] - 2 * x * gr[:, 2, 2]
    )
    g[:, 2] = 2 * (
        -2 * y * gr[:, 0, 0] + x * gr[:, 0, 1] + w * gr[:, 0, 2]
        + x * gr[:, 1, 0] + z * gr[:, 1, 2] - w * gr[:, 2, 0]
        + z * gr[:, 2, 1] - 2 * y * gr[:, 2, 2]
    )
    g[:, 3] = 2 * (
        -2 * z * gr[:, 0, 0] - w * gr[:, 0, 1] + x * gr[:, 0, 2]
        + w * gr[:, 1, 0] - 2 * z * gr[:, 1, 1] + y * gr[:, 1, 2]
        + x * gr[:, 2, 0] + y * gr[:, 2, 1]
    )
    return g


@dataclass
class Projected:
    """Per-primitive screen-space quantities plus the caches backward needs."""

    mean2d: np.ndarray  # (M, 2)
    cov2d: np.ndarray  # (M, 2, 2), symmetric, includes the +0.3 I blur
    z: np.ndarray  # (M,) camera-space depth used for sorting and blending
    radius: np.ndarray  # (M,) 3-sigma extent in pixels
    culled: np.ndarray  # (M,) bool
    width: int
    height: int
    fx: float
    fy: float
    # backward caches
    t_cam: np.ndarray = field(repr=False)
    jac: np.ndarray = field(repr=False)
    mw: np.ndarray = field(repr=False)
    axes: np.ndarray = field(repr=False)  # B = J W R diag(phi), (M, 2, 3)
    rot: np.ndarray = field(repr=False)
    scale: np.ndarray = field(repr=False)
    quat: np.ndarray = field(repr=False)
    w2c: np.ndarray = field(repr=False)
    zsafe: np.ndarray = field(repr=False)


def project_gaussians(
    mu: np.ndarray,
    quat: np.ndarray,
    scale: np.ndarray,
    camera: Camera,
    near: float = 0.01,
) -> Projected:
    """EWA-project a batch of Gaussians; culls behind-camera / off-screen ones.

    A primitive is culled when its center depth is at or behind the near
    plane, or its mean lands outside the image rectangle dilated by the
    primitive's own 3-sigma radius.
    """
    dtype = mu.dtype
    m = mu.shape[0]
    rot_c2w = camera.rotation.astype(dtype)
    w2c = rot_c2w.T  # column-vector world->camera rotation
    pos = camera.position.astype(dtype)
    fx, fy = dtype.type(camera.fx), dtype.type(camera.fy)

    t_cam = (mu - pos) @ rot_c2w
    z = t_cam[:, 2]
    infront = z > near
    zsafe = np.where(infront, z, np.asarray(1.0, dtype))
    u = fx * t_cam[:, 0] / zsafe + dtype.type(camera.cx)
    v = fy * t_cam[:, 1] / zsafe + dtype.type(camera.cy)
    mean2d = np.stack([u, v], axis=1)

    jac = np.zeros((m, 2, 3), dtype=dtype)
    jac[:, 0, 0] = fx / zsafe
    jac[:, 0, 2] = -fx * t_cam[:, 0] / zsafe**2
    jac[:, 1, 1] = fy / zsafe
    jac[:, 1, 2] = -fy * t_cam[:, 1] / zsafe**2

    rot = quat_to_rot(quat)
    a_mat = rot * scale[:, None, :]  # R diag(phi): scale the columns
    mw = jac @ w2c
    axes = mw @ a_mat
    cov2d = axes @ axes.transpose(0, 2, 1)
    cov2d[:, 0, 0] += COV2D_BLUR
    cov2d[:, 1, 1] += COV2D_BLUR

    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    mid = 0.5 * (a + c)
    disc = np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b * b, 0))
    radius = 3.0 * np.sqrt(np.maximum(mid + disc, 0))

    culled = (
        ~infront
        | (u + radius < 0)
        | (u - radius > camera.width)
        | (v + radius < 0)
        | (v - radius > camera.height)
    )
    return Projected(
        mean2d=mean2d,
        cov2d=cov2d,
        z=z,
        radius=radius,
        culled=culled,
        width=camera.width,
        height=camera.height,
        fx=float(camera.fx),
        fy=float(camera.fy),
        t_cam=t_cam,
        jac=jac,
        mw=mw,
        axes=axes,
        rot=rot,
        scale=scale,
        quat=quat,
        w2c=w2c,
        zsafe=zsafe,
    )


def project_backward(
    proj: Projected,
    g_mean2d: np.ndarray,
    g_cov2d: np.ndarray,
    g_z: np.ndarray,
):
    """Chain screen-space gradients back to (mu, quat, scale)."""
    dtype = proj.mean2d.dtype
    fx, fy = dtype.type(proj.fx), dtype.type(proj.fy)
    zs = proj.zsafe
    tx, ty = proj.t_cam[:, 0], proj.t_cam[:, 1]

    g_t = np.einsum("mij,mi->mj", proj.jac, g_mean2d)
    g_t[:, 2] += g_z

    gs = g_cov2d + g_cov2d.transpose(0, 2, 1)
    g_axes = gs @ proj.axes
    g_mw = np.einsum("mij,mkj->mik", g_axes, proj.rot * proj.scale[:, None, :])
    g_amat = np.einsum("mji,mjk->mik", proj.mw, g_axes)
    g_jac = np.einsum("mij,kj->mik", g_mw, proj.w2c)

    g_t[:, 0] += g_jac[:, 0, 2] * (-fx / zs**2)
    g_t[:, 1] += g_jac[:, 1, 2] * (-fy / zs**2)
    g_t[:, 2] += (
        g_jac[:, 0, 0] * (-fx / zs**2)
        + g_jac[:, 1, 1] * (-fy / zs**2)
        + g_jac[:, 0, 2] * (2 * fx * tx / zs**3)
        + g_jac[:, 1, 2] * (2 * fy * ty / zs**3)
    )

    g_mu = g_t @ proj.w2c
    g_rot = g_amat * proj.scale[:, None, :]
    g_scale = np.einsum("mij,mij->mj", g_amat, proj.rot)
    g_quat = quat_rot_backward(proj.quat, g_rot)

    dead = proj.culled
    for g in (g_mu, g_quat, g_scale):
        g[dead] = 0
    return g_mu, g_quat, g_scale


@dataclass
class BlendRecord:
    """Blending state of one batch of (primitive, pixel) pairs.

    A primitive only touches pixels inside its 3-sigma box, so blending is
    stored sparsely as "entries": one row per (primitive, pixel) pair. The
    entries are grouped by pixel (each pixel's run is contiguous) and ordered
    front to back within the run, which turns the per-pixel blending
    recurrence into segmented scans. `ci` indexes the z-sorted candidate
    arrays; `pix` is the row-major image pixel.
    """

    pix: np.ndarray  # (n,) int64
    ci: np.ndarray  # (n,) int64
    seg_start: np.ndarray  # (s,) int64 run-head entry indices; None on JIT records
    seg_id: np.ndarray  # (n,) int64 run number of each entry; None on JIT records
    dx: np.ndarray  # (n,) pixel-center offsets from the 2D mean
    dy: np.ndarray
    gauss: np.ndarray  # (n,) exp falloff term
    sigma: np.ndarray  # (n,) clamped alpha * gauss
    t_excl: np.ndarray  # (n,) transmittance before each entry blends
    alive: np.ndarray  # (n,) bool, False once the stop rule fired


@dataclass
class RenderOutput:
    color: np.ndarray  # (H, W, 3) in [0, 1], black background
    depth: np.ndarray  # (H, W) meters, 0 where uncovered
    accum_alpha: np.ndarray  # (H, W) sum of blend weights
    transmittance: np.ndarray  # (H, W) remaining T after blending
    tiles: list = field(repr=False)
    order: np.ndarray = field(repr=False)  # sorted index -> original index
    n_primitives: int = 0
    # sorted per-primitive arrays shared by the backward pass
    s_mean2d: np.ndarray = field(repr=False, default=None)
    s_qmat: np.ndarray = field(repr=False, default=None)  # (K, 3): Q00, Q01, Q11
    s_z: np.ndarray = field(repr=False, default=None)
    s_color: np.ndarray = field(repr=False, default=None)
    s_alpha: np.ndarray = field(repr=False, default=None)
    s_radius: np.ndarray = field(repr=False, default=None)


def _box_bounds(
    cand: np.ndarray,
    mean2d: np.ndarray,
    radius: np.ndarray,
    x_lo: int,
    x_hi: int,
    y_lo: int,
    y_hi: int,
):
    """Inclusive pixel ranges of each candidate's 3-sigma box.

    Pixel (i, j) has center (j+0.5, i+0.5); it is inside candidate c's box
    iff |center - mean| <= radius on both axes, so j (resp. i) lies in a
    contiguous integer range, clipped here to [x_lo, x_hi] x [y_lo, y_hi].
    Off-image boxes come out with hi < lo (empty).
    """
    mx, my = mean2d[cand, 0], mean2d[cand, 1]
    r = radius[cand]
    jlo = np.maximum(np.ceil(mx - r - 0.5).astype(np.int64), x_lo)
    jhi = np.minimum(np.floor(mx + r - 0.5).astype(np.int64), x_hi)
    ilo = np.maximum(np.ceil(my - r - 0.5).astype(np.int64), y_lo)
    ihi = np.minimum(np.floor(my + r - 0.5).astype(np.int64), y_hi)
    return jlo, jhi, ilo, ihi


def _box_entries(
    cand: np.ndarray,
    mean2d: np.ndarray,
    radius: np.ndarray,
    x_lo: int,
    x_hi: int,
    y_lo: int,
    y_hi: int,
    width: int,
):
    """(pix, ci) pairs for every pixel inside a candidate's 3-sigma box.

    Pairs come out candidate-major; `ci` indexes the full sorted arrays.
    """
    jlo, jhi, ilo, ihi = _box_bounds(cand, mean2d, radius, x_lo, x_hi, y_lo, y_hi)
    nx = np.maximum(jhi - jlo + 1, 0)
    ny = np.maximum(ihi - ilo + 1, 0)
    cnt = nx * ny
    total = int(cnt.sum())
    if total == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    pos = np.repeat(np.arange(len(cand), dtype=np.int64), cnt)
    # per-entry rank within its candidate's (ny, nx) sub-rectangle
    starts = np.concatenate([[0], np.cumsum(cnt)[:-1]])
    rank = np.arange(total, dtype=np.int64) - starts[pos]
    nxc = nx[pos]
    i = ilo[pos] + rank // nxc
    j = jlo[pos] + rank % nxc
    return i * width + j, cand[pos]


if _HAVE_NUMBA:

    @numba.njit(cache=True)
    def _nb_expand(jlo, jhi, ilo, ihi, width, npix):
        """Counting sort of box pixels: entries come out pixel-major, and
        ascending candidate (= ascending z) inside each pixel run."""
        k = jlo.shape[0]
        counts = np.zeros(npix + 1, dtype=np.int64)
        for c in range(k):
            for i in range(ilo[c], ihi[c] + 1):
                base = i * width
                for j in range(jlo[c], jhi[c] + 1):
                    counts[base + j + 1] += 1
        offsets = np.cumsum(counts)
        total = offsets[npix]
        pix = np.empty(total, dtype=np.int64)
        ci = np.empty(total, dtype=np.int64)
        slot = offsets[:npix].copy()
        for c in range(k):
            for i in range(ilo[c], ihi[c] + 1):
                base = i * width
                for j in range(jlo[c], jhi[c] + 1):
                    p = base + j
                    s = slot[p]
                    pix[s] = p
                    ci[s] = c
                    slot[p] = s + 1
        return pix, ci

    @numba.njit(cache=True)
    def _nb_forward(pix, ci, mx, my, q00, q01, q11, alpha, col, z, height, width):
        n = pix.shape[0]
        dt = mx.dtype
        dx = np.empty(n, dtype=dt)
        dy = np.empty(n, dtype=dt)
        gauss = np.empty(n, dtype=dt)
        sigma = np.empty(n, dtype=dt)
        t_excl = np.empty(n, dtype=dt)
        alive = np.zeros(n, dtype=np.bool_)
        npix = height * width
        out_color = np.zeros((npix, 3), dtype=dt)
        out_depth = np.zeros(npix, dtype=dt)
        out_accum = np.zeros(npix, dtype=dt)
        out_trans = np.ones(npix, dtype=dt)
        cur = np.int64(-1)
        t = 1.0
        for e in range(n):
            p = pix[e]
            if p != cur:
                if cur >= 0:
                    out_trans[cur] = t
                cur = p
                t = 1.0
            c = ci[e]
            dxv = (p % width) + 0.5 - mx[c]
            dyv = (p // width) + 0.5 - my[c]
            g = math.exp(-0.5 * (q00[c] * dxv * dxv + q11[c] * dyv * dyv) - q01[c] * dxv * dyv)
            s = alpha[c] * g
            if s > SIGMA_CLAMP:
                s = SIGMA_CLAMP
            dx[e] = dxv
            dy[e] = dyv
            gauss[e] = g
            sigma[e] = s
            t_excl[e] = t
            if t >= STOP_TRANSMITTANCE:
                alive[e] = True
                wgt = s * t
                out_color[p, 0] += wgt * col[c, 0]
                out_color[p, 1] += wgt * col[c, 1]
                out_color[p, 2] += wgt * col[c, 2]
                out_depth[p] += wgt * z[c]
                out_accum[p] += wgt
                t *= 1.0 - s
        if cur >= 0:
            out_trans[cur] = t
        return dx, dy, gauss, sigma, t_excl, alive, out_color, out_depth, out_accum, out_trans

    @numba.njit(cache=True)
    def _nb_backward(
        pix, ci, dx, dy, gauss, sigma, t_excl, alive,
        q00, q01, q11, alpha, col, z, gc, gd, k,
    ):
        n = pix.shape[0]
        d_rgb = np.zeros((k, 3), dtype=np.float64)
        d_z = np.zeros(k, dtype=np.float64)
        d_alpha = np.zeros(k, dtype=np.float64)
        d_mean = np.zeros((k, 2), dtype=np.float64)
        d_q = np.zeros((k, 3), dtype=np.float64)
        cur = np.int64(-1)
        suf = 0.0
        # reverse scan: per pixel run, suffix-accumulate blended contributions
        for e in range(n - 1, -1, -1):
            p = pix[e]
            if p != cur:
                cur = p
                suf = 0.0
            if not alive[e]:
                continue
            c = ci[e]
            contrib = col[c, 0] * gc[p, 0] + col[c, 1] * gc[p, 1] + col[c, 2] * gc[p, 2] + z[c] * gd[p]
            wgt = sigma[e] * t_excl[e]
            d_rgb[c, 0] += wgt * gc[p, 0]
            d_rgb[c, 1] += wgt * gc[p, 1]
            d_rgb[c, 2] += wgt * gc[p, 2]
            d_z[c] += wgt * gd[p]
            gsig = t_excl[e] * contrib - suf / (1.0 - sigma[e])
            suf += contrib * wgt
            if alpha[c] * gauss[e] < SIGMA_CLAMP:  # clamped sigma has zero slope
                d_alpha[c] += gsig * gauss[e]
                gpow = gsig * alpha[c] * gauss[e]
                d_mean[c, 0] += gpow * (q00[c] * dx[e] + q01[c] * dy[e])
                d_mean[c, 1] += gpow * (q11[c] * dy[e] + q01[c] * dx[e])
                d_q[c, 0] += -0.5 * gpow * dx[e] * dx[e]
                d_q[c, 1] += -gpow * dx[e] * dy[e]
                d_q[c, 2] += -0.5 * gpow * dy[e] * dy[e]
        return d_rgb, d_z, d_alpha, d_mean, d_q


def _blend_entries(
    pix: np.ndarray,
    ci: np.ndarray,
    mean2d: np.ndarray,
    qmat: np.ndarray,
    alphas: np.ndarray,
    width: int,
    dtype,
) -> Optional[BlendRecord]:
    """Evaluate falloff and segmented front-to-back transmittance.

    Expects candidate-major (pix, ci); re-sorts pixel-major, which keeps the
    ascending-ci (= ascending-z) order inside each pixel run. Transmittance
    is a per-run exclusive product of (1 - sigma), done as a float64
    segmented cumsum of log1p(-sigma) so runs never need a serial loop.
    """
    if len(pix) == 0:
        return None
    order = np.argsort(pix, kind="stable")
    pix = pix[order]
    ci = ci[order]
    dx = (pix % width).astype(dtype) + dtype.type(0.5) - mean2d[ci, 0]
    dy = (pix // width).astype(dtype) + dtype.type(0.5) - mean2d[ci, 1]
    q00, q01, q11 = qmat[ci, 0], qmat[ci, 1], qmat[ci, 2]
    gauss = np.exp(-0.5 * (q00 * dx * dx + q11 * dy * dy) - q01 * dx * dy)
    sigma = np.minimum(alphas[ci] * gauss, dtype.type(SIGMA_CLAMP))

    first = np.empty(len(pix), dtype=bool)
    first[0] = True
    first[1:] = pix[1:] != pix[:-1]
    seg_start = np.flatnonzero(first)
    seg_id = np.cumsum(first) - 1
    logt = np.log1p(-sigma.astype(np.float64))
    pre = np.cumsum(logt) - logt  # exclusive prefix across all runs
    t_excl = np.exp(pre - pre[seg_start][seg_id]).astype(dtype, copy=False)
    alive = t_excl >= dtype.type(STOP_TRANSMITTANCE)
    return BlendRecord(pix, ci, seg_start, seg_id, dx, dy, gauss, sigma, t_excl, alive)


def rasterize(
    proj: Projected,
    colors: np.ndarray,
    alphas: np.ndarray,
    tile: Optional[int] = DEFAULT_TILE,
) -> RenderOutput:
    """Front-to-back alpha blending of projected Gaussians over image tiles.

    Tiles bound the (primitive, pixel) pairs considered: a primitive is
    assigned to the tiles its 3-sigma box overlaps, and inside a tile it
    touches only the box pixels. The union of those pairs over tiles is the
    same for every tile size, so `tile=None` (the whole image as one tile)
    agrees with any tiled setting to summation rounding, far below 1e-6.
    Single-threaded runs process one fused batch; with OGMAP_THREADS > 1
    each tile's batch is built and blended concurrently.
    """
    dtype = proj.mean2d.dtype
    h, w = proj.height, proj.width
    if tile is None:
        tile = max(h, w)
    out_color = np.zeros((h, w, 3), dtype=dtype)
    out_depth = np.zeros((h, w), dtype=dtype)
    out_accum = np.zeros((h, w), dtype=dtype)
    out_trans = np.ones((h, w), dtype=dtype)
    m = proj.mean2d.shape[0]

    active = np.flatnonzero(~proj.culled)
    out = RenderOutput(
        color=out_color,
        depth=out_depth,
        accum_alpha=out_accum,
        transmittance=out_trans,
        tiles=[],
        order=active,
        n_primitives=m,
    )
    if len(active) == 0:
        for name in ("s_mean2d", "s_qmat", "s_z", "s_color", "s_alpha", "s_radius"):
            setattr(out, name, None)
        return out

    # global ascending-z sort, ties by primitive id; per-tile selection keeps it
    perm = np.lexsort((active, proj.z[active]))
    order = active[perm]
    mean2d = proj.mean2d[order]
    z = proj.z[order]
    radius = proj.radius[order]
    col = colors[order]
    alp = alphas[order]
    cov = proj.cov2d[order]
    a, b, c = cov[:, 0, 0], cov[:, 0, 1], cov[:, 1, 1]
    det = a * c - b * b
    qmat = np.stack([c / det, -b / det, a / det], axis=1)

    out.order = order
    out.s_mean2d, out.s_qmat, out.s_z = mean2d, qmat, z
    out.s_color, out.s_alpha, out.s_radius = col, alp, radius

    nthreads = thread_count()
    if nthreads > 1:
        ntx = (w + tile - 1) // tile
        nty = (h + tile - 1) // tile
        tx0 = np.clip(np.floor((mean2d[:, 0] - radius) / tile).astype(np.int64), 0, ntx - 1)
        tx1 = np.clip(np.floor((mean2d[:, 0] + radius) / tile).astype(np.int64), 0, ntx - 1)
        ty0 = np.clip(np.floor((mean2d[:, 1] - radius) / tile).astype(np.int64), 0, nty - 1)
        ty1 = np.clip(np.floor((mean2d[:, 1] + radius) / tile).astype(np.int64), 0, nty - 1)
        jobs = []
        for ti in range(nty):
            for tj in range(ntx):
                sel = np.flatnonzero((tx0 <= tj) & (tj <= tx1) & (ty0 <= ti) & (ti <= ty1))
                if len(sel) == 0:
                    continue
                jobs.append(
                    (
                        sel,
                        tj * tile,
                        min(w - 1, tj * tile + tile - 1),
                        ti * tile,
                        min(h - 1, ti * tile + tile - 1),
                    )
                )

        def run(job):
            sel, x_lo, x_hi, y_lo, y_hi = job
            pix, ci = _box_entries(sel, mean2d, radius, x_lo, x_hi, y_lo, y_hi, w)
            return _blend_entries(pix, ci, mean2d, qmat, alp, w, dtype)

        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=nthreads) as pool:
            records = [r for r in pool.map(run, jobs) if r is not None]
    elif _HAVE_NUMBA:
        # serial JIT path: one fused batch, one pass, deterministic
        cand = np.arange(len(order), dtype=np.int64)
        jlo, jhi, ilo, ihi = _box_bounds(cand, mean2d, radius, 0, w - 1, 0, h - 1)
        pix, ci = _nb_expand(jlo, jhi, ilo, ihi, w, h * w)
        if len(pix) == 0:
            out.tiles = []
            return out
        (dx, dy, gauss, sigma, t_excl, alive, nb_c, nb_d, nb_a, nb_t) = _nb_forward(
            pix,
            ci,
            np.ascontiguousarray(mean2d[:, 0]),
            np.ascontiguousarray(mean2d[:, 1]),
            np.ascontiguousarray(qmat[:, 0]),
            np.ascontiguousarray(qmat[:, 1]),
            np.ascontiguousarray(qmat[:, 2]),
            alp,
            col,
            z,
            h,
            w,
        )
        out_color.reshape(h * w, 3)[:] = nb_c
        out_depth.reshape(h * w)[:] = nb_d
        out_accum.reshape(h * w)[:] = nb_a
        out_trans.reshape(h * w)[:] = nb_t
        # seg_start None marks a JIT record; backward picks the JIT kernel
        out.tiles = [BlendRecord(pix, ci, None, None, dx, dy, gauss, sigma, t_excl, alive)]
        return out
    else:
        cand = np.arange(len(order), dtype=np.int64)
        pix, ci = _box_entries(cand, mean2d, radius, 0, w - 1, 0, h - 1, w)
        rec = _blend_entries(pix, ci, mean2d, qmat, alp, w, dtype)
        records = [] if rec is None else [rec]

    npix = h * w
    fc = out_color.reshape(npix, 3)
    fd = out_depth.reshape(npix)
    fa = out_accum.reshape(npix)
    ft = out_trans.reshape(npix)
    for rec in records:
        wgt = rec.sigma * rec.t_excl * rec.alive
        pix = rec.pix
        for ch in range(3):
            fc[:, ch] += np.bincount(pix, wgt * col[rec.ci, ch], minlength=npix).astype(
                dtype, copy=False
            )
        fd += np.bincount(pix, wgt * z[rec.ci], minlength=npix).astype(dtype, copy=False)
        fa += np.bincount(pix, wgt, minlength=npix).astype(dtype, copy=False)
        # final transmittance: T after the last alive entry of each pixel run
        n_alive = np.add.reduceat(rec.alive.astype(np.int64), rec.seg_start)
        last = rec.seg_start + n_alive - 1
        ft[pix[rec.seg_start]] = (rec.t_excl * (1.0 - rec.sigma))[last]
    out.tiles = records
    return out


def rasterize_backward(out: RenderOutput, g_color: np.ndarray, g_depth: np.ndarray):
    """Gradients of the blended image w.r.t. every rasteriser input.

    Returns (g_mean2d (M,2), g_cov2d (M,2,2), g_alpha (M,), g_rgb (M,3),
    g_z (M,)) indexed like the original projected batch; culled primitives
    get zeros.
    """
    m = out.n_primitives
    dtype = out.color.dtype
    g_mean2d = np.zeros((m, 2), dtype=dtype)
    g_cov2d = np.zeros((m, 2, 2), dtype=dtype)
    g_alpha = np.zeros(m, dtype=dtype)
    g_rgb = np.zeros((m, 3), dtype=dtype)
    g_z = np.zeros(m, dtype=dtype)
    if out.s_mean2d is None or len(out.order) == 0:
        return g_mean2d, g_cov2d, g_alpha, g_rgb, g_z

    k_total = len(out.order)
    sg_mean = np.zeros((k_total, 2), dtype=np.float64)
    sg_q = np.zeros((k_total, 3), dtype=np.float64)
    sg_alpha = np.zeros(k_total, dtype=np.float64)
    sg_rgb = np.zeros((k_total, 3), dtype=np.float64)
    sg_z = np.zeros(k_total, dtype=np.float64)

    col, alp = out.s_color, out.s_alpha
    z, qm = out.s_z, out.s_qmat
    h, w = out.color.shape[:2]
    gcf = g_color.reshape(h * w, 3).astype(dtype, copy=False)
    gdf = g_depth.reshape(h * w).astype(dtype, copy=False)

    def run(rec: BlendRecord):
        if rec.seg_start is None:  # record built by the JIT forward
            return _nb_backward(
                rec.pix,
                rec.ci,
                rec.dx,
                rec.dy,
                rec.gauss,
                rec.sigma,
                rec.t_excl,
                rec.alive,
                np.ascontiguousarray(qm[:, 0]),
                np.ascontiguousarray(qm[:, 1]),
                np.ascontiguousarray(qm[:, 2]),
                alp,
                col,
                z,
                gcf,
                gdf,
                k_total,
            )
        pix, ci = rec.pix, rec.ci
        k = k_total
        wgt = rec.sigma * rec.t_excl * rec.alive
        gcp = gcf[pix]  # (n, 3) upstream color grad at each entry's pixel
        gdp = gdf[pix]
        contrib = (col[ci] * gcp).sum(axis=1) + z[ci] * gdp
        # suffix sum of contrib*wgt over each pixel run, in float64: the
        # cumsum spans all runs, so offsets would cancel badly in float32
        cw = (contrib * wgt).astype(np.float64)
        pre = np.cumsum(cw) - cw  # exclusive prefix across runs
        within = pre - pre[rec.seg_start][rec.seg_id]
        total = np.add.reduceat(cw, rec.seg_start)
        suffix = (total[rec.seg_id] - within - cw).astype(dtype, copy=False)
        gsig = rec.alive * (rec.t_excl * contrib - suffix / (1.0 - rec.sigma))
        a_n = alp[ci]
        g_ag = gsig * (a_n * rec.gauss < SIGMA_CLAMP)
        gpow = g_ag * a_n * rec.gauss
        q00, q01, q11 = qm[ci, 0], qm[ci, 1], qm[ci, 2]
        dx, dy = rec.dx, rec.dy
        return (
            np.stack(
                [np.bincount(ci, wgt * gcp[:, ch], minlength=k) for ch in range(3)],
                axis=1,
            ),  # d/d rgb
            np.bincount(ci, wgt * gdp, minlength=k),  # d/d z
            np.bincount(ci, g_ag * rec.gauss, minlength=k),  # d/d alpha
            np.stack(
                [
                    np.bincount(ci, gpow * (q00 * dx + q01 * dy), minlength=k),
                    np.bincount(ci, gpow * (q11 * dy + q01 * dx), minlength=k),
                ],
                axis=1,
            ),  # d/d mean2d
            np.stack(
                [
                    np.bincount(ci, gpow * (-0.5) * dx * dx, minlength=k),
                    np.bincount(ci, gpow * (-dx * dy), minlength=k),
                    np.bincount(ci, gpow * (-0.5) * dy * dy, minlength=k),
                ],
                axis=1,
            ),  # d/d conic params
        )

    nthreads = thread_count()
    if nthreads > 1 and len(out.tiles) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=nthreads) as pool:
            results = list(pool.map(run, out.tiles))
    else:
        results = [run(rec) for rec in out.tiles]

    for t_rgb, t_z, t_alpha, t_mean, t_q in results:
        sg_rgb += t_rgb
        sg_z += t_z
        sg_alpha += t_alpha
        sg_mean += t_mean
        sg_q += t_q
    sg_mean = sg_mean.astype(dtype)
    sg_q = sg_q.astype(dtype)
    sg_alpha = sg_alpha.astype(dtype)
    sg_rgb = sg_rgb.astype(dtype)
    sg_z = sg_z.astype(dtype)

    # conic -> covariance: Q = Sigma^{-1}, gSigma = -Q gQ Q
    gq_full = np.empty((k_total, 2, 2), dtype=dtype)
    gq_full[:, 0, 0] = sg_q[:, 0]
    gq_full[:, 0, 1] = 0.5 * sg_q[:, 1]
    gq_full[:, 1, 0] = 0.5 * sg_q[:, 1]
    gq_full[:, 1, 1] = sg_q[:, 2]
    qfull = np.empty((k_total, 2, 2), dtype=dtype)
    qfull[:, 0, 0] = qm[:, 0]
    qfull[:, 0, 1] = qm[:, 1]
    qfull[:, 1, 0] = qm[:, 1]
    qfull[:, 1, 1] = qm[:, 2]
    sg_cov = -qfull @ gq_full @ qfull

    g_mean2d[out.order] = sg_mean
    g_cov2d[out.order] = sg_cov
    g_alpha[out.order] = sg_alpha
    g_rgb[out.order] = sg_rgb
    g_z[out.order] = sg_z
    return g_mean2d, g_cov2d, g_alpha, g_rgb, g_z
