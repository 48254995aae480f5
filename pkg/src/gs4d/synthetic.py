"""Synthetic ground-truth scenes and datasets for testing and demos.

A colored Gaussian ball translates along a known smooth path; rendering it
from orbit views at anchor timesteps produces a fully self-consistent
dataset (pseudo labels, front-view reference video, and held-out ground
truth for evaluation).
"""

from __future__ import annotations

import json
import os

import numpy as np

from .camera import Camera, Intrinsics, OrbitPose, orbit_to_camera
from .io import AnchorDataset, write_image
from .rasterizer import render
from .rng import CounterRng
from .scene import GaussianSet, inverse_sigmoid

WHITE = (1.0, 1.0, 1.0)


def motion_offset(t) -> np.ndarray:
    """Known translation path: linear sweep in x with a gentle z arc."""
    t = np.asarray(t, dtype=np.float64)
    return np.stack([0.5 * (t - 0.5), np.zeros_like(t), 0.12 * np.sin(np.pi * t)],
                    axis=-1)


def make_ball_scene(n: int = 200, seed: int = 0, ball_radius: float = 0.4) -> GaussianSet:
    """Ball of n Gaussians with position-coded colors (float64 ground truth)."""
    rng = CounterRng(seed, stream=3)
    pts = []
    total = 0
    while total < n:
        cand = rng.uniform((2 * n, 3), -1.0, 1.0)
        inside = cand[np.sum(cand * cand, axis=1) <= 1.0]
        pts.append(inside)
        total += len(inside)
    positions = np.concatenate(pts)[:n] * ball_radius
    colors = np.clip(0.5 + positions / (2.0 * ball_radius), 0.08, 0.92)
    rotations = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
    log_scales = np.full((n, 3), np.log(0.07))
    opacity_logits = np.full(n, inverse_sigmoid(0.95))
    return GaussianSet(positions, rotations, log_scales, opacity_logits,
                       inverse_sigmoid(colors), creation_seed=seed, dtype=np.float64)


def make_camera(azimuth_deg: float, elevation_deg: float, radius: float,
                size: int = 128, fov_deg: float = 50.0) -> Camera:
    intr = Intrinsics.from_fov(fov_deg, size, size)
    return orbit_to_camera(OrbitPose(azimuth_deg, elevation_deg, radius), intr)


def render_ground_truth(scene: GaussianSet, cam: Camera, t: float,
                        background=WHITE) -> np.ndarray:
    """Render the moving ground-truth scene at normalized time t."""
    deformed = scene.positions.astype(np.float64) + motion_offset(t)
    return render(scene, deformed, cam, background).color


def default_views(radius: float):
    """Four orbit views; view 0 (azimuth 0, elevation 0) is the front view."""
    return [(0.0, 0.0, radius), (90.0, 10.0, radius),
            (180.0, 0.0, radius), (270.0, -10.0, radius)]


def build_dataset(root_dir, scene: GaussianSet | None = None, num_anchors: int = 8,
                  size: int = 128, radius: float = 2.0, fov_deg: float = 50.0,
                  seed: int = 0) -> AnchorDataset:
    """Write a synthetic dataset to disk in the engine's layout and reload it."""
    from .io import load_dataset

    if scene is None:
        scene = make_ball_scene(seed=seed)
    views = default_views(radius)
    cams = [make_camera(az, el, r, size, fov_deg) for az, el, r in views]
    times = np.linspace(0.0, 1.0, num_anchors)

    os.makedirs(root_dir, exist_ok=True)
    cfg = {"num_anchors": num_anchors, "radius": radius, "front_view_index": 0,
           "views": [c.to_json() for c in cams]}
    with open(os.path.join(root_dir, "config.json"), "w") as f:
        json.dump(cfg, f, indent=1, sort_keys=True)

    for ti, t in enumerate(times):
        frame_dir = os.path.join(root_dir, "frames", f"t{ti:04d}")
        os.makedirs(frame_dir, exist_ok=True)
        for vi, cam in enumerate(cams):
            img = render_ground_truth(scene, cam, t)
            write_image(os.path.join(frame_dir, f"view{vi:02d}.png"), img)
            if vi == 0:
                os.makedirs(os.path.join(root_dir, "input"), exist_ok=True)
                write_image(os.path.join(root_dir, "input", f"t{ti:04d}.png"), img)
    return load_dataset(root_dir)


class GroundTruthOraclePrior:
    """Oracle prior whose target is the ground-truth render of the queried view.

    Identifies the timestep by matching the condition's reference image
    against the known anchor frames, then renders the ground-truth scene from
    the conditioned viewpoint; the SDS gradient pulls toward that render.
    """

    def __init__(self, scene: GaussianSet, dataset: AnchorDataset, gain: float = 1.0,
                 schedule=None, size: int | None = None, fov_deg: float = 50.0):
        from .prior import CosineSchedule
        self.scene = scene
        self.dataset = dataset
        self.gain = float(gain)
        self.schedule = schedule or CosineSchedule()
        self.size = size or dataset.image_shape[0]
        self.fov_deg = fov_deg
        self.calls = 0

    def _timestep_of(self, reference_image) -> float:
        ref = np.asarray(reference_image)
        errs = [float(np.mean(np.abs(ref - r))) for r in self.dataset.reference]
        return float(self.dataset.anchor_times[int(np.argmin(errs))])

    def predict_noise(self, x_t, noise_level, condition, clean_render=None):
        from .errors import ContractError
        if clean_render is None:
            raise ContractError("oracle prior needs the clean render")
        self.calls += 1
        t = self._timestep_of(condition.reference_image)
        cam = make_camera(condition.delta_azimuth_deg, condition.delta_elevation_deg,
                          self.dataset.radius + condition.delta_radius,
                          self.size, self.fov_deg)
        target = render_ground_truth(self.scene, cam, t)
        x0 = np.asarray(clean_render, dtype=np.float64)
        ab = self.schedule.alpha_bar(noise_level)
        eps = (np.asarray(x_t, dtype=np.float64) - np.sqrt(ab) * x0) / np.sqrt(1.0 - ab)
        return eps + self.gain * (x0 - target)
