"""Numba kernels for tile-based alpha compositing (forward and backward).

All kernels operate in float64.  Parallelism is over tiles: tiles own
disjoint pixel rectangles and disjoint slices of the per-(tile, splat) pair
arrays, and the per-Gaussian reduction of pair gradients runs sequentially
in pair order afterwards, so results are bit-identical for any thread count.
"""

import numpy as np
from numba import njit, prange

# Skip a splat's contribution at a pixel once the Gaussian falloff drops
# below 1/255; stop compositing a pixel once transmittance drops below 1e-4.
# The falloff test is applied to the quadratic form (exp is monotone), which
# avoids evaluating exp outside the cutoff ellipse.
EXP_CUTOFF = 1.0 / 255.0
Q_CUTOFF = 2.0 * np.log(255.0)
TERMINATION_T = 1e-4


@njit(cache=True, parallel=True)
def composite_forward(tile_starts, pair_gauss, mean2d, conic, alpha, color,
                      background, width, height, tile_size, tiles_x,
                      out_color, out_trans, out_ncontrib):
    n_tiles = tile_starts.shape[0] - 1
    for tile in prange(n_tiles):
        ty = tile // tiles_x
        tx = tile - ty * tiles_x
        x0 = tx * tile_size
        y0 = ty * tile_size
        x1 = min(x0 + tile_size, width)
        y1 = min(y0 + tile_size, height)
        lo = tile_starts[tile]
        hi = tile_starts[tile + 1]
        for iy in range(y0, y1):
            py = iy + 0.5
            for ix in range(x0, x1):
                px = ix + 0.5
                T = 1.0
                c0 = 0.0
                c1 = 0.0
                c2 = 0.0
                walked = 0
                for k in range(lo, hi):
                    walked += 1
                    g = pair_gauss[k]
                    dx = px - mean2d[g, 0]
                    dy = py - mean2d[g, 1]
                    q = (conic[g, 0] * dx * dx + 2.0 * conic[g, 1] * dx * dy
                         + conic[g, 2] * dy * dy)
                    if q > Q_CUTOFF:
                        continue
                    sigma = alpha[g] * np.exp(-0.5 * q)
                    c0 += color[g, 0] * sigma * T
                    c1 += color[g, 1] * sigma * T
                    c2 += color[g, 2] * sigma * T
                    T *= 1.0 - sigma
                    if T < TERMINATION_T:
                        break
                out_color[iy, ix, 0] = c0 + T * background[0]
                out_color[iy, ix, 1] = c1 + T * background[1]
                out_color[iy, ix, 2] = c2 + T * background[2]
                out_trans[iy, ix] = T
                out_ncontrib[iy, ix] = walked


@njit(cache=True, parallel=True)
def composite_backward(tile_starts, pair_gauss, mean2d, conic, alpha, color,
                       background, width, height, tile_size, tiles_x,
                       out_trans, out_ncontrib, grad_color,
                       pair_dmean, pair_dconic, pair_dalpha, pair_dcolor):
    n_tiles = tile_starts.shape[0] - 1
    for tile in prange(n_tiles):
        ty = tile // tiles_x
        tx = tile - ty * tiles_x
        x0 = tx * tile_size
        y0 = ty * tile_size
        x1 = min(x0 + tile_size, width)
        y1 = min(y0 + tile_size, height)
        lo = tile_starts[tile]
        for iy in range(y0, y1):
            py = iy + 0.5
            for ix in range(x0, x1):
                px = ix + 0.5
                gc0 = grad_color[iy, ix, 0]
                gc1 = grad_color[iy, ix, 1]
                gc2 = grad_color[iy, ix, 2]
                if gc0 == 0.0 and gc1 == 0.0 and gc2 == 0.0:
                    continue
                T_final = out_trans[iy, ix]
                n = out_ncontrib[iy, ix]
                # Walk splats back to front, reconstructing the running
                # transmittance and the color accumulated behind each splat.
                T = T_final
                s0 = 0.0
                s1 = 0.0
                s2 = 0.0
                for k in range(lo + n - 1, lo - 1, -1):
                    g = pair_gauss[k]
                    dx = px - mean2d[g, 0]
                    dy = py - mean2d[g, 1]
                    qa = conic[g, 0]
                    qb = conic[g, 1]
                    qc = conic[g, 2]
                    q = qa * dx * dx + 2.0 * qb * dx * dy + qc * dy * dy
                    if q > Q_CUTOFF:
                        continue
                    gval = np.exp(-0.5 * q)
                    sigma = alpha[g] * gval
                    one_m = 1.0 - sigma
                    T_prev = T / one_m
                    # dC/dsigma = c_g T_prev - (S_behind + bg T_final)/(1-sigma)
                    d_sigma = (gc0 * (color[g, 0] * T_prev - (s0 + background[0] * T_final) / one_m)
                               + gc1 * (color[g, 1] * T_prev - (s1 + background[1] * T_final) / one_m)
                               + gc2 * (color[g, 2] * T_prev - (s2 + background[2] * T_final) / one_m))
                    pair_dcolor[k, 0] += gc0 * sigma * T_prev
                    pair_dcolor[k, 1] += gc1 * sigma * T_prev
                    pair_dcolor[k, 2] += gc2 * sigma * T_prev
                    pair_dalpha[k] += gval * d_sigma
                    d_q = -0.5 * sigma * d_sigma  # dL/dq = alpha * gval * dsigma * (-1/2)
                    # q = a dx^2 + 2 b dx dy + c dy^2 with d = pixel - mean
                    pair_dmean[k, 0] += d_q * (-(2.0 * qa * dx + 2.0 * qb * dy))
                    pair_dmean[k, 1] += d_q * (-(2.0 * qc * dy + 2.0 * qb * dx))
                    pair_dconic[k, 0] += d_q * dx * dx
                    pair_dconic[k, 1] += d_q * 2.0 * dx * dy
                    pair_dconic[k, 2] += d_q * dy * dy
                    s0 += color[g, 0] * sigma * T_prev
                    s1 += color[g, 1] * sigma * T_prev
                    s2 += color[g, 2] * sigma * T_prev
                    T = T_prev


@njit(cache=True)
def fill_pairs(splat_idx, tx0, tx1, ty0, ty1, tiles_x, offsets,
               pair_tile, pair_gauss):
    for k in range(splat_idx.shape[0]):
        o = offsets[k]
        for ty in range(ty0[k], ty1[k] + 1):
            for tx in range(tx0[k], tx1[k] + 1):
                pair_tile[o] = ty * tiles_x + tx
                pair_gauss[o] = splat_idx[k]
                o += 1


@njit(cache=True)
def merge_pair_grads(pair_gauss, pair_dmean, pair_dconic, pair_dalpha,
                     pair_dcolor, dmean2d, dconic, dalpha, dcolor):
    # Sequential in pair order (tile-major) for a fixed reduction order.
    for k in range(pair_gauss.shape[0]):
        g = pair_gauss[k]
        dmean2d[g, 0] += pair_dmean[k, 0]
        dmean2d[g, 1] += pair_dmean[k, 1]
        dconic[g, 0] += pair_dconic[k, 0]
        dconic[g, 1] += pair_dconic[k, 1]
        dconic[g, 2] += pair_dconic[k, 2]
        dalpha[g] += pair_dalpha[k]
        dcolor[g, 0] += pair_dcolor[k, 0]
        dcolor[g, 1] += pair_dcolor[k, 1]
        dcolor[g, 2] += pair_dcolor[k, 2]
