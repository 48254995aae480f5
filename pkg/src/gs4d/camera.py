"""Pinhole camera, orbit poses, and EWA covariance projection.

Conventions: OpenCV-style camera frame (looks along +z, y down); pixel
(ix, iy) is sampled at (ix + 0.5, iy + 0.5); orbit azimuth 0 / elevation 0
is the front view on the world -y axis with world +z up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError

NEAR_PLANE = 0.01
COV2D_LOW_PASS = 0.3  # pixel-space low-pass added to projected covariance


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ParameterError(f"focal lengths must be positive: fx={self.fx}, fy={self.fy}")
        if self.width < 1 or self.height < 1:
            raise ParameterError(f"image size must be >= 1: {self.width}x{self.height}")

    @classmethod
    def from_fov(cls, fov_x_deg: float, width: int, height: int) -> "Intrinsics":
        f = 0.5 * width / math.tan(math.radians(fov_x_deg) / 2.0)
        return cls(fx=f, fy=f, cx=width / 2.0, cy=height / 2.0,
                   width=width, height=height)

    def scaled(self, width: int, height: int) -> "Intrinsics":
        sx, sy = width / self.width, height / self.height
        return Intrinsics(self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy,
                          width, height)


@dataclass(frozen=True)
class OrbitPose:
    azimuth_deg: float
    elevation_deg: float
    radius: float
    look_at: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.radius <= 0:
            raise ParameterError(f"orbit radius must be positive, got {self.radius}")


@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    world_to_cam: np.ndarray  # (4, 4) row-major rigid transform
    orbit: OrbitPose | None = field(default=None, compare=False)

    def __post_init__(self):
        W = np.asarray(self.world_to_cam, dtype=np.float64)
        if W.shape != (4, 4):
            raise ParameterError(f"world_to_cam must be 4x4, got {W.shape}")
        R = W[:3, :3]
        if np.max(np.abs(R.T @ R - np.eye(3))) >= 1e-6:
            raise ParameterError("world_to_cam rotation block is not orthonormal")
        if self.fx <= 0 or self.fy <= 0:
            raise ParameterError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ParameterError("image size must be >= 1")
        object.__setattr__(self, "world_to_cam", W)

    @property
    def R(self) -> np.ndarray:
        return self.world_to_cam[:3, :3]

    @property
    def t(self) -> np.ndarray:
        return self.world_to_cam[:3, 3]

    @property
    def center(self) -> np.ndarray:
        return -self.R.T @ self.t

    @property
    def intrinsics(self) -> Intrinsics:
        return Intrinsics(self.fx, self.fy, self.cx, self.cy, self.width, self.height)

    def to_json(self) -> dict:
        d = {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
             "width": self.width, "height": self.height}
        if self.orbit is not None:
            d["orbit"] = {"azimuth_deg": self.orbit.azimuth_deg,
                          "elevation_deg": self.orbit.elevation_deg,
                          "radius": self.orbit.radius}
        else:
            d["world_to_cam"] = [float(v) for v in self.world_to_cam.reshape(-1)]
        return d

    @classmethod
    def from_json(cls, d: dict) -> "Camera":
        intr = Intrinsics(d["fx"], d["fy"], d["cx"], d["cy"], d["width"], d["height"])
        if "orbit" in d:
            o = d["orbit"]
            pose = OrbitPose(o["azimuth_deg"], o["elevation_deg"], o["radius"],
                             tuple(o.get("look_at", (0.0, 0.0, 0.0))))
            return orbit_to_camera(pose, intr)
        W = np.asarray(d["world_to_cam"], dtype=np.float64).reshape(4, 4)
        return cls(intr.fx, intr.fy, intr.cx, intr.cy, intr.width, intr.height, W)


def orbit_direction(azimuth_deg: float, elevation_deg: float) -> np.ndarray:
    """Unit vector from look_at toward the camera center."""
    az = math.radians(azimuth_deg)
    el = math.radians(elevation_deg)
    return np.array([math.sin(az) * math.cos(el),
                     -math.cos(az) * math.cos(el),
                     math.sin(el)])


def orbit_to_camera(pose: OrbitPose, intrinsics: Intrinsics) -> Camera:
    """Place a camera on the orbit sphere looking at ``pose.look_at``."""
    look_at = np.asarray(pose.look_at, dtype=np.float64)
    center = look_at + pose.radius * orbit_direction(pose.azimuth_deg, pose.elevation_deg)
    forward = look_at - center
    forward /= np.linalg.norm(forward)
    up = np.array([0.0, 0.0, 1.0])
    right = np.cross(forward, up)
    nrm = np.linalg.norm(right)
    if nrm < 1e-9:  # looking straight up/down; pick a stable right axis
        right = np.array([math.cos(math.radians(pose.azimuth_deg)),
                          math.sin(math.radians(pose.azimuth_deg)), 0.0])
        nrm = 1.0
    right /= nrm
    down = np.cross(forward, right)
    R = np.stack([right, down, forward])  # world->cam rows: x right, y down, z forward
    W = np.eye(4)
    W[:3, :3] = R
    W[:3, 3] = -R @ center
    return Camera(intrinsics.fx, intrinsics.fy, intrinsics.cx, intrinsics.cy,
                  intrinsics.width, intrinsics.height, W, orbit=pose)


def project_point(cam: Camera, x) -> tuple[float, float, float]:
    """(u, v, depth) of a world point; depth <= NEAR_PLANE means cull."""
    xc = cam.R @ np.asarray(x, dtype=np.float64) + cam.t
    z = xc[2]
    u = cam.fx * xc[0] / z + cam.cx
    v = cam.fy * xc[1] / z + cam.cy
    return float(u), float(v), float(z)


def project_points(cam: Camera, xs: np.ndarray):
    """Vectorized projection: returns (means2d (N,2), depths (N,), cam_pts (N,3))."""
    xc = xs.astype(np.float64) @ cam.R.T + cam.t
    z = xc[:, 2]
    means2d = np.stack([cam.fx * xc[:, 0] / z + cam.cx,
                        cam.fy * xc[:, 1] / z + cam.cy], axis=1)
    return means2d, z, xc


def perspective_jacobians(cam: Camera, cam_pts: np.ndarray) -> np.ndarray:
    """Affine Jacobians of the perspective projection at camera-frame points."""
    x, y, z = cam_pts[:, 0], cam_pts[:, 1], cam_pts[:, 2]
    J = np.zeros((len(cam_pts), 2, 3), dtype=np.float64)
    J[:, 0, 0] = cam.fx / z
    J[:, 0, 2] = -cam.fx * x / (z * z)
    J[:, 1, 1] = cam.fy / z
    J[:, 1, 2] = -cam.fy * y / (z * z)
    return J


def project_covariances(cam: Camera, cam_pts: np.ndarray, covs: np.ndarray) -> np.ndarray:
    """EWA projection J W Sigma W^T J^T + low-pass, batched -> (N, 2, 2)."""
    V = np.einsum("ab,nbc,dc->nad", cam.R, covs, cam.R)  # camera-frame covariance
    J = perspective_jacobians(cam, cam_pts)
    A = np.einsum("nab,nbc,ndc->nad", J, V, J)
    A[:, 0, 0] += COV2D_LOW_PASS
    A[:, 1, 1] += COV2D_LOW_PASS
    return A


def project_covariance(cam: Camera, mu, Sigma) -> np.ndarray | None:
    """Single-Gaussian 2-D covariance; None signals a near-plane cull."""
    mu = np.asarray(mu, dtype=np.float64)
    xc = cam.R @ mu + cam.t
    if xc[2] <= NEAR_PLANE:
        return None
    A = project_covariances(cam, xc[None], np.asarray(Sigma, dtype=np.float64)[None])
    return A[0]
