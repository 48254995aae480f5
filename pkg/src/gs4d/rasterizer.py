"""Differentiable tile-based rendering of a GaussianSet.

Forward: project every non-culled Gaussian to a 2-D splat (EWA affine
approximation), bin splats into 16x16-pixel tiles, sort front-to-back by
(depth, index) within each tile, and alpha-composite per pixel with early
termination.  Backward: recompute per-pixel front-to-back state from the
saved forward context and chain analytic gradients through the projection
back to every Gaussian parameter and to the deformed positions.

Determinism: tiles write disjoint outputs, pair-gradient reduction runs in
fixed tile order, so repeated runs are bit-identical for any thread count.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import _compositing as kern
from .camera import NEAR_PLANE, Camera, project_points, perspective_jacobians
from .errors import ContractError, ParameterError
from .scene import GaussianSet, quat_to_rotmat, sigmoid

TILE_SIZE = 16
# Tile footprint radius: the iso-contour where the falloff hits the 1/255
# contribution cutoff, so tiling never drops a contributing pixel.
CUTOFF_RADIUS_SIGMA = math.sqrt(2.0 * math.log(255.0))

_threads_configured = False


def _configure_threads():
    global _threads_configured
    if _threads_configured:
        return
    _threads_configured = True
    env = os.environ.get("GS4D_THREADS")
    if env:
        import numba
        numba.set_num_threads(max(1, int(env)))


@dataclass
class Splat2D:
    gaussian_index: int
    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float
    opacity: float
    color: np.ndarray


@dataclass
class RenderContext:
    camera: Camera
    background: np.ndarray
    n_gaussians: int
    mu_def: np.ndarray
    rotations: np.ndarray
    log_scales: np.ndarray
    alphas: np.ndarray
    colors_act: np.ndarray
    valid_idx: np.ndarray          # indices of projected (non-culled) splats
    cam_pts: np.ndarray            # (K, 3) camera-frame centers
    cov3d: np.ndarray              # (K, 3, 3) world covariances
    mean2d: np.ndarray             # (N, 2), rows only valid at valid_idx
    conic: np.ndarray              # (N, 3) packed inverse 2-D covariance
    cov2d: np.ndarray              # (K, 2, 2)
    pair_gauss: np.ndarray
    tile_starts: np.ndarray
    trans: np.ndarray              # (H, W) final transmittance
    n_contrib: np.ndarray          # (H, W) splat-list entries walked


@dataclass
class RenderOutput:
    color: np.ndarray              # (H, W, 3) in [0, 1]
    alpha: np.ndarray              # (H, W) accumulated opacity
    ctx: RenderContext = field(repr=False, default=None)
    per_gaussian_screen_grad_norm: np.ndarray | None = None


@dataclass
class RenderGrads:
    dmu_deformed: np.ndarray
    dq: np.ndarray
    ds: np.ndarray
    dopacity_logit: np.ndarray
    dcolor_logit: np.ndarray
    screen_grad_norm: np.ndarray


def _project(gaussians: GaussianSet, mu_def, cam: Camera):
    """Project to screen space; returns packed splat arrays and tiling info."""
    n = len(gaussians)
    rot = gaussians.rotations.astype(np.float64)
    log_s = gaussians.log_scales.astype(np.float64)
    alphas = sigmoid(gaussians.opacity_logits.astype(np.float64))
    colors = sigmoid(gaussians.color_logits.astype(np.float64))

    means2d_all, depth, cam_pts_all = project_points(cam, mu_def)
    valid = depth > NEAR_PLANE
    valid_idx = np.flatnonzero(valid)
    k = len(valid_idx)

    mean2d = np.zeros((n, 2), dtype=np.float64)
    conic = np.zeros((n, 3), dtype=np.float64)
    cov2d = np.zeros((k, 2, 2), dtype=np.float64)
    cov3d = np.zeros((k, 3, 3), dtype=np.float64)
    radius = np.zeros(k, dtype=np.float64)

    if k:
        cam_pts = cam_pts_all[valid_idx]
        Rq = quat_to_rotmat(rot[valid_idx])
        M = Rq * np.exp(log_s[valid_idx])[:, None, :]
        cov3d = M @ np.swapaxes(M, 1, 2)
        V = cam.R @ cov3d @ cam.R.T
        J = perspective_jacobians(cam, cam_pts)
        A = J @ V @ np.swapaxes(J, 1, 2)
        A[:, 0, 0] += 0.3
        A[:, 1, 1] += 0.3
        cov2d = A
        a, b, c = A[:, 0, 0], A[:, 0, 1], A[:, 1, 1]
        det = a * c - b * b
        conic[valid_idx, 0] = c / det
        conic[valid_idx, 1] = -b / det
        conic[valid_idx, 2] = a / det
        mean2d[valid_idx] = means2d_all[valid_idx]
        lam_max = 0.5 * (a + c) + np.sqrt(0.25 * (a - c) ** 2 + b * b)
        radius = CUTOFF_RADIUS_SIGMA * np.sqrt(lam_max) + 1e-6

    # Pixel-index coverage; pixel (ix, iy) is sampled at (ix+0.5, iy+0.5).
    u, v = mean2d[valid_idx, 0], mean2d[valid_idx, 1]
    ix_lo = np.maximum(np.ceil(u - radius - 0.5), 0).astype(np.int64)
    ix_hi = np.minimum(np.floor(u + radius - 0.5), cam.width - 1).astype(np.int64)
    iy_lo = np.maximum(np.ceil(v - radius - 0.5), 0).astype(np.int64)
    iy_hi = np.minimum(np.floor(v + radius - 0.5), cam.height - 1).astype(np.int64)
    covered = (ix_lo <= ix_hi) & (iy_lo <= iy_hi)

    tiles_x = (cam.width + TILE_SIZE - 1) // TILE_SIZE
    tiles_y = (cam.height + TILE_SIZE - 1) // TILE_SIZE
    n_tiles = tiles_x * tiles_y

    cov_idx = valid_idx[covered]
    tx0, tx1 = ix_lo[covered] // TILE_SIZE, ix_hi[covered] // TILE_SIZE
    ty0, ty1 = iy_lo[covered] // TILE_SIZE, iy_hi[covered] // TILE_SIZE
    counts = (tx1 - tx0 + 1) * (ty1 - ty0 + 1)
    offsets = np.zeros(len(counts) + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    total = int(offsets[-1])
    pair_tile = np.empty(total, dtype=np.int64)
    pair_gauss = np.empty(total, dtype=np.int64)
    if total:
        kern.fill_pairs(cov_idx, tx0, tx1, ty0, ty1, tiles_x, offsets[:-1],
                        pair_tile, pair_gauss)
        order = np.lexsort((pair_gauss, depth[pair_gauss], pair_tile))
        pair_tile = pair_tile[order]
        pair_gauss = pair_gauss[order]
    tile_starts = np.zeros(n_tiles + 1, dtype=np.int64)
    np.cumsum(np.bincount(pair_tile, minlength=n_tiles), out=tile_starts[1:])

    return (rot, log_s, alphas, colors, mean2d, conic, cov2d, cov3d,
            cam_pts_all, valid_idx, pair_gauss, tile_starts)


def project_splats(gaussians: GaussianSet, deformed_positions, cam: Camera) -> list[Splat2D]:
    """Screen-space splats of the non-culled Gaussians (inspection helper)."""
    mu_def = np.ascontiguousarray(deformed_positions, dtype=np.float64)
    if mu_def.shape != (len(gaussians), 3):
        raise ParameterError(
            f"deformed_positions shape {mu_def.shape} != ({len(gaussians)}, 3)")
    (rot, log_s, alphas, colors, mean2d, conic, cov2d, cov3d, cam_pts_all,
     valid_idx, pair_gauss, tile_starts) = _project(gaussians, mu_def, cam)
    depths = cam_pts_all[:, 2]
    return [Splat2D(gaussian_index=int(g), mean2d=mean2d[g].copy(),
                    cov2d=cov2d[i].copy(), depth=float(depths[g]),
                    opacity=float(alphas[g]), color=colors[g].copy())
            for i, g in enumerate(valid_idx)]


def render(gaussians: GaussianSet, deformed_positions, cam: Camera,
           background) -> RenderOutput:
    """Render the scene with per-Gaussian deformed positions (Eq.-3 compositing)."""
    _configure_threads()
    mu_def = np.ascontiguousarray(deformed_positions, dtype=np.float64)
    if mu_def.shape != (len(gaussians), 3):
        raise ParameterError(
            f"deformed_positions shape {mu_def.shape} != ({len(gaussians)}, 3)")
    bg = np.ascontiguousarray(background, dtype=np.float64)
    if bg.shape != (3,):
        raise ParameterError(f"background must be a 3-vector, got {bg.shape}")

    (rot, log_s, alphas, colors, mean2d, conic, cov2d, cov3d, cam_pts_all,
     valid_idx, pair_gauss, tile_starts) = _project(gaussians, mu_def, cam)

    h, w = cam.height, cam.width
    out_color = np.zeros((h, w, 3), dtype=np.float64)
    trans = np.ones((h, w), dtype=np.float64)
    n_contrib = np.zeros((h, w), dtype=np.int64)
    tiles_x = (w + TILE_SIZE - 1) // TILE_SIZE
    kern.composite_forward(tile_starts, pair_gauss, mean2d, conic, alphas,
                           colors, bg, w, h, TILE_SIZE, tiles_x,
                           out_color, trans, n_contrib)

    ctx = RenderContext(
        camera=cam, background=bg, n_gaussians=len(gaussians),
        mu_def=mu_def, rotations=rot, log_scales=log_s, alphas=alphas,
        colors_act=colors, valid_idx=valid_idx,
        cam_pts=cam_pts_all[valid_idx] if len(valid_idx) else np.zeros((0, 3)),
        cov3d=cov3d, mean2d=mean2d, conic=conic, cov2d=cov2d,
        pair_gauss=pair_gauss, tile_starts=tile_starts,
        trans=trans, n_contrib=n_contrib)
    return RenderOutput(color=out_color, alpha=1.0 - trans, ctx=ctx)


def render_backward(ctx: RenderContext, grad_color) -> RenderGrads:
    """Analytic gradients of the composited image w.r.t. all parameters."""
    if ctx is None:
        raise ContractError("render_backward needs the context of a prior render")
    grad_color = np.ascontiguousarray(grad_color, dtype=np.float64)
    h, w = ctx.camera.height, ctx.camera.width
    if grad_color.shape != (h, w, 3):
        raise ContractError(
            f"grad image shape {grad_color.shape} does not match render {(h, w, 3)}")

    n = ctx.n_gaussians
    m = len(ctx.pair_gauss)
    pair_dmean = np.zeros((m, 2), dtype=np.float64)
    pair_dconic = np.zeros((m, 3), dtype=np.float64)
    pair_dalpha = np.zeros(m, dtype=np.float64)
    pair_dcolor = np.zeros((m, 3), dtype=np.float64)
    tiles_x = (w + TILE_SIZE - 1) // TILE_SIZE
    kern.composite_backward(ctx.tile_starts, ctx.pair_gauss, ctx.mean2d,
                            ctx.conic, ctx.alphas, ctx.colors_act,
                            ctx.background, w, h, TILE_SIZE, tiles_x,
                            ctx.trans, ctx.n_contrib, grad_color,
                            pair_dmean, pair_dconic, pair_dalpha, pair_dcolor)

    dmean2d = np.zeros((n, 2), dtype=np.float64)
    dconic = np.zeros((n, 3), dtype=np.float64)
    dalpha = np.zeros(n, dtype=np.float64)
    dcolor_act = np.zeros((n, 3), dtype=np.float64)
    kern.merge_pair_grads(ctx.pair_gauss, pair_dmean, pair_dconic, pair_dalpha,
                          pair_dcolor, dmean2d, dconic, dalpha, dcolor_act)

    grads = RenderGrads(
        dmu_deformed=np.zeros((n, 3), dtype=np.float64),
        dq=np.zeros((n, 4), dtype=np.float64),
        ds=np.zeros((n, 3), dtype=np.float64),
        dopacity_logit=dalpha * ctx.alphas * (1.0 - ctx.alphas),
        dcolor_logit=dcolor_act * ctx.colors_act * (1.0 - ctx.colors_act),
        screen_grad_norm=np.hypot(dmean2d[:, 0] * w / 2.0, dmean2d[:, 1] * h / 2.0),
    )
    vi = ctx.valid_idx
    if len(vi) == 0:
        return grads

    cam = ctx.camera
    x, y, z = ctx.cam_pts[:, 0], ctx.cam_pts[:, 1], ctx.cam_pts[:, 2]

    # conic = inv(cov2d): dL/dA = -B dL/dB B for symmetric B = A^{-1}.
    dB = np.empty((len(vi), 2, 2), dtype=np.float64)
    dB[:, 0, 0] = dconic[vi, 0]
    dB[:, 0, 1] = dB[:, 1, 0] = 0.5 * dconic[vi, 1]
    dB[:, 1, 1] = dconic[vi, 2]
    B = np.empty_like(dB)
    B[:, 0, 0] = ctx.conic[vi, 0]
    B[:, 0, 1] = B[:, 1, 0] = ctx.conic[vi, 1]
    B[:, 1, 1] = ctx.conic[vi, 2]
    dA = -(B @ dB @ B)

    # A = J V J^T + low-pass, V = W cov3d W^T
    J = perspective_jacobians(cam, ctx.cam_pts)
    V = cam.R @ ctx.cov3d @ cam.R.T
    Jt = np.swapaxes(J, 1, 2)
    dV = Jt @ dA @ J
    dJ = 2.0 * (dA @ J @ V)
    dSigma = cam.R.T @ dV @ cam.R

    # Jacobian entries depend on the camera-frame center.
    fz = cam.fx / z
    gz = cam.fy / z
    dxc = np.zeros((len(vi), 3), dtype=np.float64)
    dxc[:, 0] = dJ[:, 0, 2] * (-fz / z)
    dxc[:, 1] = dJ[:, 1, 2] * (-gz / z)
    dxc[:, 2] = (dJ[:, 0, 0] * (-fz / z) + dJ[:, 1, 1] * (-gz / z)
                 + dJ[:, 0, 2] * (2.0 * cam.fx * x / z ** 3)
                 + dJ[:, 1, 2] * (2.0 * cam.fy * y / z ** 3))
    # Projected mean: u = fx x/z + cx, v = fy y/z + cy.
    du, dv = dmean2d[vi, 0], dmean2d[vi, 1]
    dxc[:, 0] += du * fz
    dxc[:, 1] += dv * gz
    dxc[:, 2] += du * (-fz * x / z) + dv * (-gz * y / z)
    grads.dmu_deformed[vi] = dxc @ cam.R

    # Sigma = R(q) diag(exp(2s)) R(q)^T
    G = 0.5 * (dSigma + np.swapaxes(dSigma, 1, 2))
    Rq = quat_to_rotmat(ctx.rotations[vi])
    D = np.exp(2.0 * ctx.log_scales[vi])
    GR = G @ Rq
    dR = 2.0 * GR * D[:, None, :]
    dD = np.sum(Rq * GR, axis=1)  # diag(R^T G R)
    grads.ds[vi] = dD * 2.0 * D

    qw, qx, qy, qz = (ctx.rotations[vi, i] for i in range(4))
    grads.dq[vi, 0] = 2.0 * (-dR[:, 0, 1] * qz + dR[:, 0, 2] * qy + dR[:, 1, 0] * qz
                             - dR[:, 1, 2] * qx - dR[:, 2, 0] * qy + dR[:, 2, 1] * qx)
    grads.dq[vi, 1] = 2.0 * (dR[:, 0, 1] * qy + dR[:, 0, 2] * qz + dR[:, 1, 0] * qy
                             - 2.0 * dR[:, 1, 1] * qx - dR[:, 1, 2] * qw
                             + dR[:, 2, 0] * qz + dR[:, 2, 1] * qw - 2.0 * dR[:, 2, 2] * qx)
    grads.dq[vi, 2] = 2.0 * (-2.0 * dR[:, 0, 0] * qy + dR[:, 0, 1] * qx + dR[:, 0, 2] * qw
                             + dR[:, 1, 0] * qx + dR[:, 1, 2] * qz
                             - dR[:, 2, 0] * qw + dR[:, 2, 1] * qz - 2.0 * dR[:, 2, 2] * qy)
    grads.dq[vi, 3] = 2.0 * (-2.0 * dR[:, 0, 0] * qz - dR[:, 0, 1] * qw + dR[:, 0, 2] * qx
                             + dR[:, 1, 0] * qw - 2.0 * dR[:, 1, 1] * qz + dR[:, 1, 2] * qy
                             + dR[:, 2, 0] * qx + dR[:, 2, 1] * qy)
    return grads
