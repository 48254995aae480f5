"""Deformable 4D Gaussian splatting engine.

Reconstructs a dynamic 3D object from per-timestep multi-view pseudo-label
images plus a front-view reference video: a canonical Gaussian scene is
deformed by a HexPlane field and optimized through a differentiable tile
rasterizer in static, coarse, and fine stages, with total-variation and
temporal-smoothness regularizers and a pluggable score-distillation prior.
"""

__version__ = "0.1.0"

from .scene import GaussianSet, Gaussian, init_from_ply, init_unit_sphere  # noqa: F401
from .camera import Camera, Intrinsics, OrbitPose, orbit_to_camera  # noqa: F401
from .rasterizer import render, render_backward  # noqa: F401
from .deform import HexPlaneField  # noqa: F401
from .losses import LossWeights, recon_loss, sds_inject, total_loss  # noqa: F401
from .prior import OraclePrior, PriorCondition, RemotePrior  # noqa: F401
from .trainer import TrainConfig, Trainer, train_coarse, train_fine, train_static  # noqa: F401
from .io import AnchorDataset, export_ply, load_dataset  # noqa: F401
