"""Canonical (static) Gaussian scene: parameterization, activations, density.

Parameters are stored unconstrained and mapped through activations:
scale = exp(log_scale), opacity = sigmoid(opacity_logit),
color = sigmoid(color_logit).  Scene coordinates live in [-1, 1]^3.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ply
from .errors import DegenerateCovarianceError, ParameterError
from .rng import CounterRng

DEFAULT_SCALE = 0.05
DEFAULT_OPACITY = 0.1
DEFAULT_COLOR = (0.5, 0.5, 0.5)
MIN_VARIANCE = 1e-12  # exp(2s) below this is treated as singular

_LOGIT_EPS = 1e-6


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def inverse_sigmoid(y):
    y = np.clip(np.asarray(y, dtype=np.float64), _LOGIT_EPS, 1.0 - _LOGIT_EPS)
    out = np.log(y / (1.0 - y))
    return out if out.ndim else float(out)


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices from (w, x, y, z) quaternions, shape (..., 4) -> (..., 3, 3).

    Uses the unit-quaternion formula verbatim (no internal normalization);
    callers keep quaternions normalized between optimizer steps.
    """
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def covariance_from_params(q: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Covariance R(q) diag(exp(2s)) R(q)^T; batched over leading dims."""
    q = np.asarray(q, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(s))):
        raise ParameterError("non-finite rotation or log-scale")
    R = quat_to_rotmat(q)
    M = R * np.exp(s)[..., None, :]  # R @ diag(exp(s))
    return M @ np.swapaxes(M, -1, -2)


@dataclass(frozen=True)
class Gaussian:
    """Read-only view of a single Gaussian's parameters."""

    position: np.ndarray       # (3,) world units in [-1,1]^3
    rotation: np.ndarray       # (4,) unit quaternion (w,x,y,z)
    log_scale: np.ndarray      # (3,) per-axis log standard deviation
    opacity_logit: float
    color: np.ndarray          # (3,) activated RGB in (0,1)

    @property
    def opacity(self) -> float:
        return float(sigmoid(self.opacity_logit))

    @property
    def covariance(self) -> np.ndarray:
        return covariance_from_params(self.rotation, self.log_scale)


class GaussianSet:
    """Growable structure-of-arrays collection of Gaussians.

    Iteration order is storage order; all mutations (densify/prune) preserve
    determinism by construction.  The set is treated as immutable during a
    render pass.
    """

    def __init__(self, positions, rotations, log_scales, opacity_logits,
                 color_logits, creation_seed: int = 0, dtype=np.float32):
        self.positions = np.ascontiguousarray(positions, dtype=dtype)
        self.rotations = np.ascontiguousarray(rotations, dtype=dtype)
        self.log_scales = np.ascontiguousarray(log_scales, dtype=dtype)
        self.opacity_logits = np.ascontiguousarray(opacity_logits, dtype=dtype)
        self.color_logits = np.ascontiguousarray(color_logits, dtype=dtype)
        self.creation_seed = int(creation_seed)
        n = len(self.positions)
        shapes = (self.positions.shape, self.rotations.shape, self.log_scales.shape,
                  self.opacity_logits.shape, self.color_logits.shape)
        if shapes != ((n, 3), (n, 4), (n, 3), (n,), (n, 3)):
            raise ParameterError(f"inconsistent parameter array shapes: {shapes}")

    def __len__(self) -> int:
        return len(self.positions)

    def __getitem__(self, i: int) -> Gaussian:
        return Gaussian(
            position=self.positions[i].astype(np.float64),
            rotation=self.rotations[i].astype(np.float64),
            log_scale=self.log_scales[i].astype(np.float64),
            opacity_logit=float(self.opacity_logits[i]),
            color=sigmoid(self.color_logits[i].astype(np.float64)),
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def dtype(self):
        return self.positions.dtype

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    @property
    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    @property
    def colors(self) -> np.ndarray:
        return sigmoid(self.color_logits)

    def copy(self) -> "GaussianSet":
        return GaussianSet(self.positions.copy(), self.rotations.copy(),
                           self.log_scales.copy(), self.opacity_logits.copy(),
                           self.color_logits.copy(), self.creation_seed,
                           dtype=self.dtype)

    def astype(self, dtype) -> "GaussianSet":
        return GaussianSet(self.positions, self.rotations, self.log_scales,
                           self.opacity_logits, self.color_logits,
                           self.creation_seed, dtype=dtype)

    def normalize_rotations(self):
        norms = np.linalg.norm(self.rotations.astype(np.float64), axis=1, keepdims=True)
        self.rotations = (self.rotations / norms).astype(self.dtype)

    def param_arrays(self) -> dict[str, np.ndarray]:
        return {
            "positions": self.positions,
            "rotations": self.rotations,
            "log_scales": self.log_scales,
            "opacity_logits": self.opacity_logits,
            "color_logits": self.color_logits,
        }


def gaussian_density(g: Gaussian, p) -> float:
    """exp(-1/2 d^T Sigma^-1 d) with d = p - mu; 1.0 exactly at the center."""
    var = np.exp(2.0 * np.asarray(g.log_scale, dtype=np.float64))
    if np.any(var < MIN_VARIANCE):
        raise DegenerateCovarianceError(
            f"variance below {MIN_VARIANCE:g} along an axis (log_scale={g.log_scale})")
    d = np.asarray(p, dtype=np.float64) - g.position
    R = quat_to_rotmat(g.rotation)
    # Sigma^-1 = R diag(1/var) R^T for Sigma = R diag(var) R^T
    local = R.T @ d
    m = float(np.sum(local * local / var))
    return float(np.exp(-0.5 * m))


def _default_param_arrays(n: int, dtype):
    rotations = np.zeros((n, 4), dtype=dtype)
    rotations[:, 0] = 1.0
    log_scales = np.full((n, 3), np.log(DEFAULT_SCALE), dtype=dtype)
    opacity_logits = np.full((n,), inverse_sigmoid(DEFAULT_OPACITY), dtype=dtype)
    return rotations, log_scales, opacity_logits


def init_unit_sphere(n: int, seed: int, dtype=np.float32) -> GaussianSet:
    """Random initialization: n Gaussians uniform inside the unit ball.

    Rejection sampling from the counter-based RNG keeps the construction
    deterministic given (n, seed).
    """
    if n < 1:
        raise ParameterError(f"need at least one Gaussian, got n={n}")
    rng = CounterRng(seed, stream=0)
    kept = []
    total = 0
    while total < n:
        cand = rng.uniform((max(n, 64), 3), low=-1.0, high=1.0)
        inside = cand[np.sum(cand * cand, axis=1) <= 1.0]
        kept.append(inside)
        total += len(inside)
    positions = np.concatenate(kept)[:n]
    rotations, log_scales, opacity_logits = _default_param_arrays(n, dtype)
    color_logits = np.full((n, 3), inverse_sigmoid(np.asarray(DEFAULT_COLOR)),
                           dtype=dtype)
    return GaussianSet(positions.astype(dtype), rotations, log_scales,
                       opacity_logits, color_logits, creation_seed=seed,
                       dtype=dtype)


def init_from_ply(path, dtype=np.float32) -> GaussianSet:
    """One Gaussian per PLY vertex; colors from uchar red/green/blue if present."""
    props = ply.read_vertices(path)
    missing = [k for k in ("x", "y", "z") if k not in props]
    if missing:
        from .errors import FormatError
        raise FormatError(f"{path}: missing vertex properties {missing}")
    n = len(props["x"])
    if n == 0:
        raise ParameterError(f"{path}: empty vertex element")
    positions = np.stack([props["x"], props["y"], props["z"]], axis=1).astype(np.float64)
    if all(k in props for k in ("red", "green", "blue")):
        colors = np.stack([props["red"], props["green"], props["blue"]], axis=1)
        colors = colors.astype(np.float64) / 255.0
    else:
        colors = np.tile(np.asarray(DEFAULT_COLOR, dtype=np.float64), (n, 1))
    rotations, log_scales, opacity_logits = _default_param_arrays(n, dtype)
    return GaussianSet(positions.astype(dtype), rotations, log_scales,
                       opacity_logits, inverse_sigmoid(colors).astype(dtype),
                       creation_seed=0, dtype=dtype)
