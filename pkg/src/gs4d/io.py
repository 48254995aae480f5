"""Dataset ingestion, checkpointing, and image output.

Checkpoint format (single file, little-endian):
  8-byte magic "GS4DCKPT" | u32 version | u64 header_len | JSON header | raw data
The JSON header lists {name, dtype, shape, offset} for every array (float32
or int64 payloads) plus a meta dict (stage, iterations, config snapshot,
counter-based RNG state, Adam step counts).
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field as dc_field

import numpy as np
from PIL import Image

from . import ply
from .camera import Camera
from .errors import FormatError, ParameterError
from .scene import GaussianSet

CKPT_MAGIC = b"GS4DCKPT"
CKPT_VERSION = 1
_ALLOWED_DTYPES = {"<f4", "<i8"}


# -- images -----------------------------------------------------------------

def load_image(path) -> np.ndarray:
    """8-bit PNG to float32 HxWx3 in [0,1]; RGBA composited over white."""
    with Image.open(path) as im:
        im.load()
        if im.mode == "RGBA":
            arr = np.asarray(im, dtype=np.float32) / 255.0
            rgb, a = arr[..., :3], arr[..., 3:4]
            return rgb * a + (1.0 - a)
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
        return arr


def load_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        im.load()
        return np.asarray(im.convert("L"), dtype=np.float32) / 255.0


def quantize_u8(img) -> np.ndarray:
    """Float [0,1] to bytes with round-half-up."""
    x = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.floor(x * 255.0 + 0.5).astype(np.uint8)


def write_image(path, img):
    Image.fromarray(quantize_u8(img)).save(path)


def write_frames(renders, out_dir, pattern: str = "frame_%04d.png") -> list[str]:
    """PNG sequence, 8-bit, clamped from float; returns written paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for i, img in enumerate(renders):
        p = os.path.join(out_dir, pattern % i)
        write_image(p, img)
        paths.append(p)
    return paths


# -- dataset ------------------------------------------------------------------

@dataclass
class AnchorDataset:
    """Per-anchor-timestep multi-view pseudo labels plus front-view reference."""

    num_anchors: int
    cameras: list                      # shared across timesteps; index 0 = front
    pseudo_labels: list                # [t][v] -> HxWx3 float image
    reference: list                    # [t] -> front-view HxWx3 float image
    radius: float
    masks: list | None = None          # optional [t][v] -> HxW float alpha

    def __post_init__(self):
        if self.num_anchors < 2:
            raise FormatError(f"need at least 2 anchor frames, got {self.num_anchors}")
        if len(self.cameras) < 1:
            raise FormatError("need at least one view")

    @property
    def num_views(self) -> int:
        return len(self.cameras)

    @property
    def anchor_times(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.num_anchors)

    @property
    def image_shape(self):
        return self.pseudo_labels[0][0].shape


def load_dataset(root_dir) -> AnchorDataset:
    """Load the on-disk layout: config.json, frames/t####/view##.png, input/t####.png."""
    cfg_path = os.path.join(root_dir, "config.json")
    if not os.path.exists(cfg_path):
        raise FileNotFoundError(f"missing dataset config: {cfg_path}")
    with open(cfg_path) as f:
        cfg = json.load(f)
    for key in ("num_anchors", "views", "radius"):
        if key not in cfg:
            raise FormatError(f"{cfg_path}: missing '{key}'")
    if cfg.get("front_view_index", 0) != 0:
        raise FormatError(f"{cfg_path}: front_view_index must be 0")
    T = int(cfg["num_anchors"])
    cameras = [Camera.from_json(v) for v in cfg["views"]]
    V = len(cameras)

    def img_path(t, v):
        return os.path.join(root_dir, "frames", f"t{t:04d}", f"view{v:02d}.png")

    def require(p):
        if not os.path.exists(p):
            raise FileNotFoundError(f"missing dataset file: {p}")
        return p

    labels = [[load_image(require(img_path(t, v))) for v in range(V)] for t in range(T)]
    reference = [load_image(require(os.path.join(root_dir, "input", f"t{t:04d}.png")))
                 for t in range(T)]

    masks = None
    if os.path.isdir(os.path.join(root_dir, "masks")):
        masks = [[load_mask(require(os.path.join(root_dir, "masks", f"t{t:04d}",
                                                 f"view{v:02d}.png")))
                  for v in range(V)] for t in range(T)]

    shape = labels[0][0].shape
    for t in range(T):
        for v in range(V):
            if labels[t][v].shape != shape:
                raise FormatError(f"{img_path(t, v)}: image size differs from view 0")
        if reference[t].shape != shape:
            raise FormatError(f"reference t{t:04d}.png: image size differs from labels")
    for cam in cameras:
        if (cam.height, cam.width) != shape[:2]:
            raise FormatError(
                f"camera size {cam.width}x{cam.height} != image {shape[1]}x{shape[0]}")
    return AnchorDataset(num_anchors=T, cameras=cameras, pseudo_labels=labels,
                         reference=reference, radius=float(cfg["radius"]), masks=masks)


# -- checkpoints ----------------------------------------------------------------

@dataclass
class Checkpoint:
    stage: str
    stage_iteration: int
    global_iteration: int
    arrays: dict
    config: dict
    rng_state: tuple
    meta: dict = dc_field(default_factory=dict)
    version: int = CKPT_VERSION


def save_checkpoint(path, ckpt: Checkpoint):
    entries = []
    blobs = []
    offset = 0
    for name in sorted(ckpt.arrays):
        arr = np.ascontiguousarray(ckpt.arrays[name])
        if arr.dtype == np.float32:
            dtype = "<f4"
        elif arr.dtype == np.int64:
            dtype = "<i8"
        else:
            raise ParameterError(f"checkpoint array '{name}' must be float32 or int64, "
                                 f"got {arr.dtype}")
        data = arr.astype(dtype).tobytes()
        entries.append({"name": name, "dtype": dtype,
                        "shape": list(arr.shape), "offset": offset})
        blobs.append(data)
        offset += len(data)
    header = {
        "arrays": entries,
        "meta": dict(ckpt.meta, stage=ckpt.stage,
                     stage_iteration=ckpt.stage_iteration,
                     global_iteration=ckpt.global_iteration,
                     rng_state=list(ckpt.rng_state), config=ckpt.config),
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<I", ckpt.version))
        f.write(struct.pack("<Q", len(hbytes)))
        f.write(hbytes)
        for b in blobs:
            f.write(b)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != CKPT_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic")
    version = struct.unpack("<I", data[8:12])[0]
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    hlen = struct.unpack("<Q", data[12:20])[0]
    if len(data) < 20 + hlen:
        raise FormatError(f"{path}: truncated header")
    header = json.loads(data[20:20 + hlen].decode())
    base = 20 + hlen
    arrays = {}
    for e in header["arrays"]:
        if e["dtype"] not in _ALLOWED_DTYPES:
            raise FormatError(f"{path}: illegal dtype {e['dtype']}")
        shape = tuple(e["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        itemsize = 4 if e["dtype"] == "<f4" else 8
        b0 = base + e["offset"]
        b1 = b0 + count * itemsize
        if b1 > len(data):
            raise FormatError(f"{path}: truncated array '{e['name']}'")
        arr = np.frombuffer(data[b0:b1], dtype=e["dtype"]).reshape(shape)
        arrays[e["name"]] = arr.astype(np.float32 if e["dtype"] == "<f4" else np.int64)
    meta = header["meta"]
    return Checkpoint(stage=meta["stage"], stage_iteration=meta["stage_iteration"],
                      global_iteration=meta["global_iteration"], arrays=arrays,
                      config=meta["config"], rng_state=tuple(meta["rng_state"]),
                      meta={k: v for k, v in meta.items()
                            if k not in ("stage", "stage_iteration", "global_iteration",
                                         "rng_state", "config")},
                      version=version)


def trainer_to_checkpoint(trainer) -> Checkpoint:
    arrays = {}
    for name, arr in trainer.scene.param_arrays().items():
        arrays[f"scene_{name}"] = arr
    for name, arr in trainer.field.named_parameters().items():
        arrays[f"field_{name}"] = arr
    adam_steps = {}
    for name, st in trainer.opt_states.items():
        arrays[f"adam_{name}_m"] = st.m
        arrays[f"adam_{name}_v"] = st.v
        adam_steps[name] = st.step
    arrays["densify_accum"] = trainer.densify_accum
    arrays["densify_count"] = trainer.densify_count
    meta = {"adam_steps": adam_steps, "sds_skipped": trainer.sds_skipped,
            "creation_seed": trainer.scene.creation_seed,
            "field_time_resolution": trainer.field.time_resolution,
            "stage_summaries": trainer.stage_summaries}
    return Checkpoint(stage=trainer.stage, stage_iteration=trainer.stage_iteration,
                      global_iteration=trainer.global_iteration, arrays=arrays,
                      config=trainer.config.to_dict(), rng_state=trainer.rng.state,
                      meta=meta)


def save_trainer_checkpoint(path, trainer):
    save_checkpoint(path, trainer_to_checkpoint(trainer))


def scene_from_checkpoint(ckpt: Checkpoint) -> GaussianSet:
    a = ckpt.arrays
    return GaussianSet(a["scene_positions"], a["scene_rotations"],
                       a["scene_log_scales"], a["scene_opacity_logits"],
                       a["scene_color_logits"],
                       creation_seed=ckpt.meta.get("creation_seed", 0))


def field_from_checkpoint(ckpt: Checkpoint):
    from .deform import HexPlaneField
    cfg = ckpt.config
    field = HexPlaneField(
        num_levels=cfg["hexplane_levels"],
        base_resolution=cfg["hexplane_base_resolution"],
        channels=cfg["hexplane_channels"],
        time_resolution=ckpt.meta.get("field_time_resolution", 8),
        time_mode=cfg["hexplane_time_mode"],
        hidden_width=cfg["hexplane_hidden_width"],
        seed=cfg["seed"])
    for name in field.named_parameters():
        key = f"field_{name}"
        if key not in ckpt.arrays:
            raise FormatError(f"checkpoint missing field array '{key}'")
        field.set_parameter(name, ckpt.arrays[key])
    return field


def trainer_from_checkpoint(path, dataset, **kw):
    from .rng import CounterRng
    from .trainer import AdamState, TrainConfig, Trainer

    ckpt = load_checkpoint(path)
    config = TrainConfig.from_dict(ckpt.config)
    scene = scene_from_checkpoint(ckpt)
    field = field_from_checkpoint(ckpt)
    trainer = Trainer(config, dataset, scene=scene, field=field, **kw)
    trainer.stage = ckpt.stage
    trainer.stage_iteration = ckpt.stage_iteration
    trainer.global_iteration = ckpt.global_iteration
    trainer.rng = CounterRng.from_state(ckpt.rng_state)
    trainer.sds_skipped = ckpt.meta.get("sds_skipped", 0)
    trainer.stage_summaries = list(ckpt.meta.get("stage_summaries", []))
    trainer.densify_accum = ckpt.arrays["densify_accum"].copy()
    trainer.densify_count = ckpt.arrays["densify_count"].copy()
    params = dict(scene.param_arrays())
    params.update(field.named_parameters())
    for name, step in ckpt.meta.get("adam_steps", {}).items():
        m = ckpt.arrays[f"adam_{name}_m"]
        v = ckpt.arrays[f"adam_{name}_v"]
        if name in params and m.shape != params[name].shape:
            raise FormatError(f"optimizer state '{name}' shape {m.shape} does not "
                              f"match parameter {params[name].shape}")
        trainer.opt_states[name] = AdamState(m=m.copy(), v=v.copy(), step=int(step))
    return trainer


# -- PLY export -------------------------------------------------------------------

def export_ply(gaussians: GaussianSet, path):
    """Binary little-endian PLY with positions, 8-bit color, opacity, scales, rotation."""
    if len(gaussians) == 0:
        raise ParameterError("cannot export an empty GaussianSet")
    pos = gaussians.positions.astype(np.float32)
    rgb = quantize_u8(gaussians.colors)
    scales = gaussians.scales.astype(np.float32)
    rots = gaussians.rotations.astype(np.float32)
    cols = [
        ("x", "float", pos[:, 0]), ("y", "float", pos[:, 1]), ("z", "float", pos[:, 2]),
        ("red", "uchar", rgb[:, 0]), ("green", "uchar", rgb[:, 1]),
        ("blue", "uchar", rgb[:, 2]),
        ("opacity", "float", gaussians.opacities.astype(np.float32)),
    ]
    cols += [(f"scale_{i}", "float", scales[:, i]) for i in range(3)]
    cols += [(f"rot_{i}", "float", rots[:, i]) for i in range(4)]
    ply.write_vertices(path, cols)
