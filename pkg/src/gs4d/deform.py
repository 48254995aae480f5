"""HexPlane spatio-temporal feature field with an MLP deformation head.

Six feature planes per resolution level factor the 4-D volume over axis
pairs (x,y), (x,z), (y,z), (x,t), (y,t), (z,t).  A queried feature is the
elementwise product of the six bilinear plane lookups per level, levels
concatenated, decoded by a 2-hidden-layer ReLU MLP into a position offset.
Space-time planes start at constant one and the MLP output layer at zero,
so the field deforms nothing until trained.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .rng import CounterRng

PLANE_KEYS = (("x", "y"), ("x", "z"), ("y", "z"), ("x", "t"), ("y", "t"), ("z", "t"))
SPATIAL_INIT_LOW = 0.1
SPATIAL_INIT_HIGH = 0.5


@dataclass
class FeaturePlane:
    values: np.ndarray         # (rows, cols, channels)
    axes: tuple[str, str]

    def __post_init__(self):
        if self.values.ndim != 3 or min(self.values.shape[:2]) < 2:
            raise ParameterError(f"plane must be at least 2x2xC, got {self.values.shape}")

    @property
    def resolution(self):
        return self.values.shape[:2]

    @property
    def channels(self):
        return self.values.shape[2]

    @property
    def is_temporal(self) -> bool:
        return "t" in self.axes


def query_plane(plane, a, b) -> np.ndarray:
    """Bilinear interpolation with corner-aligned coordinates in [0, 1].

    ``plane`` is a FeaturePlane or a raw (rows, cols, channels) array.
    """
    values = plane.values if isinstance(plane, FeaturePlane) else plane
    out, _ = _query_plane_cached(np.asarray(values, dtype=np.float64),
                                 np.atleast_1d(np.asarray(a, dtype=np.float64)),
                                 np.atleast_1d(np.asarray(b, dtype=np.float64)))
    return out if np.ndim(a) else out[0]


def _query_plane_cached(values, a, b):
    rows, cols, _ = values.shape
    fa = np.clip(a, 0.0, 1.0) * (rows - 1)
    fb = np.clip(b, 0.0, 1.0) * (cols - 1)
    i0 = np.minimum(fa.astype(np.int64), rows - 2)
    j0 = np.minimum(fb.astype(np.int64), cols - 2)
    wa = (fa - i0)[:, None]
    wb = (fb - j0)[:, None]
    v00 = values[i0, j0]
    v01 = values[i0, j0 + 1]
    v10 = values[i0 + 1, j0]
    v11 = values[i0 + 1, j0 + 1]
    top = v00 + wb * (v01 - v00)
    bot = v10 + wb * (v11 - v10)
    out = top + wa * (bot - top)
    cache = (i0, j0, wa, wb, v00, v01, v10, v11)
    return out, cache


def _query_plane_backward(values_shape, cache, d_out, rows, cols):
    """Scatter bilinear adjoint; returns (d_values, d_fa, d_fb).

    The four-corner scatter is a single bincount over flattened cell/channel
    indices; summation order is fixed, so accumulation stays deterministic.
    """
    i0, j0, wa, wb, v00, v01, v10, v11 = cache
    ch = values_shape[2]
    base = i0 * cols + j0
    cells = np.concatenate([base, base + 1, base + cols, base + cols + 1])
    weights = np.concatenate([d_out * ((1 - wa) * (1 - wb)), d_out * ((1 - wa) * wb),
                              d_out * (wa * (1 - wb)), d_out * (wa * wb)])
    flat = (cells[:, None] * ch + np.arange(ch)).ravel()
    d_values = np.bincount(flat, weights=weights.ravel(),
                           minlength=rows * cols * ch).reshape(values_shape)
    top = v00 + wb * (v01 - v00)
    bot = v10 + wb * (v11 - v10)
    d_fa = np.sum(d_out * (bot - top), axis=1)
    d_fb = np.sum(d_out * ((v01 - v00) + wa * ((v11 - v10) - (v01 - v00))), axis=1)
    return d_values, d_fa * (rows - 1), d_fb * (cols - 1)


class HexPlaneField:
    """Multi-resolution six-plane field plus deformation MLP."""

    def __init__(self, num_levels: int = 2, base_resolution: int = 64,
                 channels: int = 16, time_resolution: int = 8,
                 time_mode: str = "frames", hidden_width: int = 64,
                 seed: int = 0, dtype=np.float32):
        if time_mode not in ("frames", "square"):
            raise ParameterError(f"unknown time_mode '{time_mode}'")
        self.num_levels = num_levels
        self.base_resolution = base_resolution
        self.channels = channels
        self.time_resolution = max(time_resolution, 8)
        self.time_mode = time_mode
        self.hidden_width = hidden_width
        self.dtype = np.dtype(dtype)

        rng = CounterRng(seed, stream=1)
        self.levels: list[dict[tuple, FeaturePlane]] = []
        for lvl in range(num_levels):
            res = base_resolution * (2 ** lvl)
            planes = {}
            for axes in PLANE_KEYS:
                rows = res
                if axes[1] == "t":
                    cols = res if time_mode == "square" else self.time_resolution
                else:
                    cols = res
                if "t" in axes:
                    vals = np.ones((rows, cols, channels))
                else:
                    vals = rng.uniform((rows, cols, channels),
                                       SPATIAL_INIT_LOW, SPATIAL_INIT_HIGH)
                planes[axes] = FeaturePlane(vals.astype(self.dtype), axes)
            self.levels.append(planes)

        in_dim = channels * num_levels
        k1 = 1.0 / np.sqrt(in_dim)
        k2 = 1.0 / np.sqrt(hidden_width)
        self.mlp = {
            "w1": rng.uniform((in_dim, hidden_width), -k1, k1).astype(self.dtype),
            "b1": rng.uniform((hidden_width,), -k1, k1).astype(self.dtype),
            "w2": rng.uniform((hidden_width, hidden_width), -k2, k2).astype(self.dtype),
            "b2": rng.uniform((hidden_width,), -k2, k2).astype(self.dtype),
            "w3": np.zeros((hidden_width, 3), dtype=self.dtype),
            "b3": np.zeros(3, dtype=self.dtype),
        }

    @property
    def feature_dim(self) -> int:
        return self.channels * self.num_levels

    def named_parameters(self) -> dict[str, np.ndarray]:
        params = {}
        for lvl, planes in enumerate(self.levels):
            for axes, plane in planes.items():
                params[f"plane_l{lvl}_{axes[0]}{axes[1]}"] = plane.values
        for name, arr in self.mlp.items():
            params[f"mlp_{name}"] = arr
        return params

    def set_parameter(self, name: str, values: np.ndarray):
        if name.startswith("plane_"):
            lvl = int(name.split("_")[1][1:])
            axes = tuple(name.split("_")[2])
            self.levels[lvl][axes].values = values.astype(self.dtype)
        elif name.startswith("mlp_"):
            self.mlp[name[4:]] = values.astype(self.dtype)
        else:
            raise ParameterError(f"unknown field parameter '{name}'")

    def astype(self, dtype) -> "HexPlaneField":
        import copy
        other = copy.copy(self)
        other.dtype = np.dtype(dtype)
        other.levels = [{axes: FeaturePlane(p.values.astype(dtype), axes)
                         for axes, p in planes.items()} for planes in self.levels]
        other.mlp = {k: v.astype(dtype) for k, v in self.mlp.items()}
        return other

    # -- forward ---------------------------------------------------------

    def features(self, xyz: np.ndarray, t: float, _ctx: dict | None = None) -> np.ndarray:
        """Fused feature vector at scene coordinates xyz in [-1,1]^3, time t in [0,1]."""
        xyz = np.asarray(xyz, dtype=np.float64)
        coords = {
            "x": 0.5 * (xyz[:, 0] + 1.0),
            "y": 0.5 * (xyz[:, 1] + 1.0),
            "z": 0.5 * (xyz[:, 2] + 1.0),
            "t": np.full(len(xyz), np.clip(t, 0.0, 1.0)),
        }
        blocks = []
        for lvl, planes in enumerate(self.levels):
            queries = []
            caches = []
            for axes in PLANE_KEYS:
                vals = planes[axes].values.astype(np.float64)
                q, cache = _query_plane_cached(vals, coords[axes[0]], coords[axes[1]])
                queries.append(q)
                caches.append(cache)
            fused = queries[0] * queries[1] * queries[2] * queries[3] * queries[4] * queries[5]
            blocks.append(fused)
            if _ctx is not None:
                _ctx.setdefault("levels", []).append((queries, caches))
        if _ctx is not None:
            _ctx["coords"] = coords
            _ctx["xyz"] = xyz
        return np.concatenate(blocks, axis=1)

    def deform(self, positions: np.ndarray, t: float):
        """Per-Gaussian deformed positions mu + MLP(features(mu, t)).

        Returns (deformed_positions, DeformContext) for the backward pass.
        """
        ctx: dict = {}
        feat = self.features(positions, t, _ctx=ctx)
        w1, b1 = self.mlp["w1"].astype(np.float64), self.mlp["b1"].astype(np.float64)
        w2, b2 = self.mlp["w2"].astype(np.float64), self.mlp["b2"].astype(np.float64)
        w3, b3 = self.mlp["w3"].astype(np.float64), self.mlp["b3"].astype(np.float64)
        h1p = feat @ w1 + b1
        h1 = np.maximum(h1p, 0.0)
        h2p = h1 @ w2 + b2
        h2 = np.maximum(h2p, 0.0)
        delta = h2 @ w3 + b3
        ctx.update(feat=feat, h1p=h1p, h1=h1, h2p=h2p, h2=h2)
        return ctx["xyz"] + delta, ctx

    # -- backward --------------------------------------------------------

    def backward(self, ctx: dict, d_delta: np.ndarray):
        """Gradients of sum(<d_delta, delta>) w.r.t. field params and positions.

        Returns (param_grads: dict name -> array, d_positions (N, 3)).
        Plane-grid accumulation is ordered by Gaussian index.
        """
        d_delta = np.asarray(d_delta, dtype=np.float64)
        feat, h1, h2 = ctx["feat"], ctx["h1"], ctx["h2"]
        w1 = self.mlp["w1"].astype(np.float64)
        w2 = self.mlp["w2"].astype(np.float64)
        w3 = self.mlp["w3"].astype(np.float64)

        grads = {}
        grads["mlp_w3"] = h2.T @ d_delta
        grads["mlp_b3"] = d_delta.sum(axis=0)
        dh2 = (d_delta @ w3.T) * (ctx["h2p"] > 0)
        grads["mlp_w2"] = h1.T @ dh2
        grads["mlp_b2"] = dh2.sum(axis=0)
        dh1 = (dh2 @ w2.T) * (ctx["h1p"] > 0)
        grads["mlp_w1"] = feat.T @ dh1
        grads["mlp_b1"] = dh1.sum(axis=0)
        dfeat = dh1 @ w1.T

        xyz = ctx["xyz"]
        d_coords = {k: np.zeros(len(xyz), dtype=np.float64) for k in "xyz"}
        c = self.channels
        for lvl, planes in enumerate(self.levels):
            queries, caches = ctx["levels"][lvl]
            d_block = dfeat[:, lvl * c:(lvl + 1) * c]
            # prefix/suffix products give d(query_p) without dividing by zeros
            prefix = [np.ones_like(queries[0])]
            for q in queries:
                prefix.append(prefix[-1] * q)
            suffix = [None] * 7
            suffix[6] = np.ones_like(queries[0])
            for p in range(5, -1, -1):
                suffix[p] = suffix[p + 1] * queries[p]
            for p, axes in enumerate(PLANE_KEYS):
                plane = planes[axes]
                rows, cols = plane.resolution
                d_q = d_block * prefix[p] * suffix[p + 1]
                d_vals, d_fa, d_fb = _query_plane_backward(
                    (rows, cols, c), caches[p], d_q, rows, cols)
                grads[f"plane_l{lvl}_{axes[0]}{axes[1]}"] = d_vals
                if axes[0] in d_coords:
                    d_coords[axes[0]] += d_fa
                if axes[1] in d_coords:
                    d_coords[axes[1]] += d_fb

        # coords u = (x+1)/2 clamped; clamp gate zeroes gradient outside bounds
        d_positions = np.zeros_like(xyz)
        for i, k in enumerate("xyz"):
            gate = (xyz[:, i] > -1.0) & (xyz[:, i] < 1.0)
            d_positions[:, i] = 0.5 * d_coords[k] * gate
        return grads, d_positions


def field_features(field: HexPlaneField, x: float, y: float, z: float, t: float) -> np.ndarray:
    """Single-point fused feature vector (F * num_levels,)."""
    return field.features(np.array([[x, y, z]], dtype=np.float64), t)[0]


def deform(field: HexPlaneField, gaussians, t: float) -> np.ndarray:
    """Deformed positions for a GaussianSet at normalized time t."""
    positions, _ = field.deform(gaussians.positions.astype(np.float64), t)
    return positions
