"""Single-scale SSIM with an 11x11 Gaussian window and analytic gradient.

Window: sigma = 1.5 truncated at 3.5 sigma (11 taps), symmetric boundary
padding.  ``ssim_value`` crops the filter-radius border before averaging,
matching the usual reference implementation; the differentiable weighted
mean used by the reconstruction loss averages the full map.
"""

from __future__ import annotations

import numpy as np

from .errors import ParameterError

K1 = 0.01
K2 = 0.03
DATA_RANGE = 1.0
SIGMA = 1.5
TRUNCATE = 3.5


def gaussian_taps(sigma: float = SIGMA, truncate: float = TRUNCATE) -> np.ndarray:
    radius = int(truncate * sigma + 0.5)
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    taps = np.exp(-0.5 * (xs / sigma) ** 2)
    return taps / taps.sum()


_TAPS = gaussian_taps()
_RADIUS = (len(_TAPS) - 1) // 2


_OPERATOR_CACHE: dict[int, np.ndarray] = {}


def _conv_operator(n: int) -> np.ndarray:
    """Dense (n, n) operator: symmetric-pad then correlate with the window.

    Small enough to cache per image side; makes the adjoint exactly the
    transpose, so the SSIM gradient is consistent with the forward blur.
    """
    op = _OPERATOR_CACHE.get(n)
    if op is None:
        r = _RADIUS
        pad_map = np.concatenate([np.arange(r - 1, -1, -1),          # symmetric head
                                  np.arange(n),
                                  np.arange(n - 1, n - r - 1, -1)])  # symmetric tail
        op = np.zeros((n, n), dtype=np.float64)
        for i in range(n):
            for j, w in enumerate(_TAPS):
                op[i, pad_map[i + j]] += w
        _OPERATOR_CACHE[n] = op
    return op


def _apply_axis(img, op, axis, transpose=False):
    m = op.T if transpose else op
    moved = np.moveaxis(img, axis, 0)
    out = (m @ moved.reshape(moved.shape[0], -1)).reshape(moved.shape)
    return np.moveaxis(out, 0, axis)


def blur(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    out = _apply_axis(img, _conv_operator(img.shape[0]), 0)
    return _apply_axis(out, _conv_operator(img.shape[1]), 1)


def blur_adjoint(g: np.ndarray) -> np.ndarray:
    g = np.asarray(g, dtype=np.float64)
    out = _apply_axis(g, _conv_operator(g.shape[1]), 1, transpose=True)
    return _apply_axis(out, _conv_operator(g.shape[0]), 0, transpose=True)


def _check_shapes(a, b):
    if a.shape != b.shape:
        raise ParameterError(f"image shapes differ: {a.shape} vs {b.shape}")
    if min(a.shape[0], a.shape[1]) < 2 * _RADIUS + 1:
        raise ParameterError(
            f"images must be at least {2 * _RADIUS + 1} pixels per side, got {a.shape}")


def _ssim_map(x, y):
    ux, uy = blur(x), blur(y)
    vx = blur(x * x) - ux * ux
    vy = blur(y * y) - uy * uy
    vxy = blur(x * y) - ux * uy
    c1 = (K1 * DATA_RANGE) ** 2
    c2 = (K2 * DATA_RANGE) ** 2
    a1 = 2 * ux * uy + c1
    a2 = 2 * vxy + c2
    b1 = ux * ux + uy * uy + c1
    b2 = vx + vy + c2
    s = (a1 * a2) / (b1 * b2)
    return s, (ux, uy, vx, vy, vxy, a1, a2, b1, b2)


def ssim_value(a, b) -> float:
    """Mean SSIM over the valid interior (border of one filter radius cropped)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_shapes(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    s, _ = _ssim_map(a, b)
    r = _RADIUS
    return float(np.mean(s[r:-r, r:-r, :]))


def ssim_weighted_with_grad(x, y, weights=None):
    """(weighted mean SSIM, gradient w.r.t. x) over the full SSIM map.

    ``weights`` is an (H, W) non-negative map (defaults to uniform) that is
    normalized internally; the gradient accounts for the Gaussian-window
    statistics exactly, including boundary padding.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_shapes(x, y)
    squeeze = x.ndim == 2
    if squeeze:
        x, y = x[..., None], y[..., None]
    h, w, c = x.shape
    if weights is None:
        wmap = np.full((h, w), 1.0)
    else:
        wmap = np.asarray(weights, dtype=np.float64)
        if wmap.shape != (h, w):
            raise ParameterError(f"mask shape {wmap.shape} != image {(h, w)}")
    total = wmap.sum() * c
    if total <= 0:
        return 0.0, np.zeros_like(x)
    wfull = np.repeat(wmap[..., None], c, axis=2) / total

    s, (ux, uy, vx, vy, vxy, a1, a2, b1, b2) = _ssim_map(x, y)
    value = float(np.sum(s * wfull))

    gs = wfull
    denom = b1 * b2
    d_a1 = gs * a2 / denom
    d_a2 = gs * a1 / denom
    d_b1 = -gs * s / b1
    d_b2 = -gs * s / b2
    # independent intermediates: ux, uxx (via vx), uxy (via vxy)
    d_ux = d_a1 * 2 * uy + d_b1 * 2 * ux
    d_vx = d_b2
    d_vxy = d_a2 * 2.0
    d_uxx = d_vx
    d_ux = d_ux - d_vx * 2 * ux - d_vxy * uy
    d_uxy = d_vxy
    grad = blur_adjoint(d_ux) + 2 * x * blur_adjoint(d_uxx) + y * blur_adjoint(d_uxy)
    if squeeze:
        grad = grad[..., 0]
    return value, grad
