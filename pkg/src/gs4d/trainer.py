"""Three-stage optimization: static construction, coarse pseudo-label warm-up,
and the fine stage mixing temporal-consistency iterations with SDS-supervised
random viewpoints.  Includes the Adam optimizer, densify/prune control, and
temporal subsequence sampling.

Determinism: every random draw comes from one counter-based generator in a
fixed per-iteration order, parameters and optimizer moments are float32
(matching the checkpoint format), and all gradient reductions are ordered,
so a fixed seed yields bit-identical checkpoints and resume is exact.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field as dc_field

import numpy as np

from . import losses
from .camera import Camera, OrbitPose, orbit_to_camera
from .deform import HexPlaneField
from .errors import NumericalError, ParameterError, TrainingError
from .prior import CosineSchedule, PriorCondition
from .rasterizer import render, render_backward
from .rng import CounterRng
from .scene import GaussianSet, init_unit_sphere, quat_to_rotmat

STAGES = ("static", "coarse", "fine", "done")


@dataclass
class TrainConfig:
    # stage schedule
    static_iterations: int = 1000
    coarse_iterations: int = 1000
    fine_iterations: int = 3000
    temporal_fraction: float = 0.10
    # loss weights (consistency = smooth + w_tv*TV + w_sds*SDS;
    # total = recon + w_pseudo*pseudo + w_consistency*consistency);
    # omega_smooth defaults to the formulation's implicit 1.0 and exists so
    # the smoothness term can be ablated
    omega_tv: float = 1e-3
    omega_sds: float = 0.01
    omega_pseudo: float = 1.0
    omega_consistency: float = 1.0
    omega_smooth: float = 1.0
    recon_l1_weight: float = 0.8
    recon_ssim_weight: float = 0.2
    static_l1_weight: float = 1.0
    static_ssim_weight: float = 0.0
    # optimizer
    lr_positions: float = 1.6e-4
    lr_positions_final_scale: float = 0.01
    lr_rotations: float = 1e-3
    lr_scales: float = 5e-3
    lr_opacities: float = 5e-2
    lr_colors: float = 2.5e-3
    lr_planes: float = 1.6e-3
    lr_mlp: float = 1.6e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-15
    # densify / prune (static stage only)
    densify_interval: int = 100
    densify_grad_threshold: float = 2e-4
    densify_scale_threshold: float = 0.01
    split_scale_divisor: float = 1.6
    prune_opacity_threshold: float = 5e-3
    # scene init
    init_gaussians: int = 5000
    sh_degree: int = 0  # reserved; only view-independent color is implemented
    # rendering
    render_width: int = 256
    render_height: int = 256
    background: tuple = (1.0, 1.0, 1.0)
    # deformation field
    hexplane_levels: int = 2
    hexplane_base_resolution: int = 64
    hexplane_channels: int = 16
    hexplane_time_mode: str = "frames"
    hexplane_hidden_width: int = 64
    # SDS sampling
    sds_azimuth_min: float = 0.0
    sds_azimuth_max: float = 360.0
    sds_elevation_min: float = -30.0
    sds_elevation_max: float = 30.0
    sds_noise_min: int = 20
    sds_noise_max: int = 980
    sds_num_steps: int = 1000
    # temporal subsequence sampling
    subsequence_length: int = 4
    frame_rate_choices: tuple = (1, 2, 4)
    # misc
    seed: int = 0
    checkpoint_interval: int = 500

    def __post_init__(self):
        self.validate()

    def validate(self):
        if min(self.static_iterations, self.coarse_iterations, self.fine_iterations) < 1:
            raise ParameterError("stage iteration counts must be >= 1")
        if not 0.0 <= self.temporal_fraction <= 1.0:
            raise ParameterError(f"temporal_fraction {self.temporal_fraction} not in [0,1]")
        for name in ("densify_grad_threshold", "densify_scale_threshold",
                     "prune_opacity_threshold"):
            if getattr(self, name) <= 0:
                raise ParameterError(f"{name} must be positive")
        if self.sh_degree != 0:
            raise ParameterError("only sh_degree=0 (view-independent color) is implemented")
        if self.init_gaussians < 1:
            raise ParameterError("init_gaussians must be >= 1")
        if not self.frame_rate_choices:
            raise ParameterError("frame_rate_choices must be non-empty")

    @property
    def loss_weights(self) -> losses.LossWeights:
        return losses.LossWeights(tv=self.omega_tv, sds=self.omega_sds,
                                  pseudo=self.omega_pseudo,
                                  consistency=self.omega_consistency)

    @property
    def schedule(self) -> CosineSchedule:
        return CosineSchedule(num_steps=self.sds_num_steps,
                              t_min=self.sds_noise_min, t_max=self.sds_noise_max)

    @property
    def total_iterations(self) -> int:
        return self.static_iterations + self.coarse_iterations + self.fine_iterations

    def to_dict(self) -> dict:
        d = asdict(self)
        d["background"] = list(self.background)
        d["frame_rate_choices"] = list(self.frame_rate_choices)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in cls.__dataclass_fields__.values()}
        unknown = set(d) - known
        if unknown:
            raise ParameterError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        for k in ("background", "frame_rate_choices"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        text = open(path, "rb").read()
        if str(path).endswith(".toml"):
            try:
                import tomllib
            except ModuleNotFoundError:
                import tomli as tomllib
            data = tomllib.loads(text.decode())
        else:
            data = json.loads(text.decode())
        return cls.from_dict(data)


# -- optimizer ---------------------------------------------------------------

SCENE_GROUPS = ("positions", "rotations", "log_scales", "opacity_logits", "color_logits")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, shape):
        return cls(m=np.zeros(shape, dtype=np.float32),
                   v=np.zeros(shape, dtype=np.float32), step=0)


def adam_step(state: AdamState, param: np.ndarray, grad: np.ndarray, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-15,
              group: str = "") -> np.ndarray:
    """Bias-corrected Adam update in the parameter's dtype (float32 in training,
    matching the checkpointed moment arrays bit for bit)."""
    g = np.asarray(grad)
    if not np.all(np.isfinite(g)):
        raise NumericalError(f"gradient for group '{group}' is not finite")
    dt = param.dtype
    g = g.astype(dt)
    state.step += 1
    state.m = (dt.type(beta1) * state.m.astype(dt) + dt.type(1 - beta1) * g)
    state.v = (dt.type(beta2) * state.v.astype(dt) + dt.type(1 - beta2) * g * g)
    mhat = state.m / dt.type(1 - beta1 ** state.step)
    vhat = state.v / dt.type(1 - beta2 ** state.step)
    return param - dt.type(lr) * mhat / (np.sqrt(vhat) + dt.type(eps))


# -- densify / prune -----------------------------------------------------------

def densify_and_prune(gaussians: GaussianSet, mean_screen_grad: np.ndarray,
                      config: TrainConfig, opt_states: dict | None = None):
    """Clone small / split large high-gradient Gaussians, prune transparent ones.

    Optimizer-state rows in ``opt_states`` (scene groups only) are duplicated
    and deleted in lockstep with the parameter rows.
    """
    n = len(gaussians)
    scales = gaussians.scales.astype(np.float64)
    hot = np.asarray(mean_screen_grad, dtype=np.float64) > config.densify_grad_threshold
    small = np.all(scales < config.densify_scale_threshold, axis=1)
    clone = hot & small
    split = hot & ~small

    Rq = quat_to_rotmat(gaussians.rotations.astype(np.float64))
    k = np.argmax(gaussians.log_scales, axis=1)
    axis = Rq[np.arange(n), :, k]                       # dominant principal axis
    sigma_k = scales[np.arange(n), k]
    offset = axis * sigma_k[:, None]

    params = gaussians.param_arrays()
    pieces = {name: [arr[~split]] for name, arr in params.items()}
    row_src = [np.flatnonzero(~split)]

    if np.any(clone):
        for name, arr in params.items():
            block = arr[clone].copy()
            if name == "positions":
                block = (block.astype(np.float64) + offset[clone]).astype(arr.dtype)
            pieces[name].append(block)
        row_src.append(np.flatnonzero(clone))
    if np.any(split):
        shrink = np.float64(np.log(config.split_scale_divisor))
        for sign in (+0.5, -0.5):
            for name, arr in params.items():
                block = arr[split].copy()
                if name == "positions":
                    block = (block.astype(np.float64) + sign * offset[split]).astype(arr.dtype)
                if name == "log_scales":
                    block = (block.astype(np.float64) - shrink).astype(arr.dtype)
                pieces[name].append(block)
            row_src.append(np.flatnonzero(split))

    merged = {name: np.concatenate(blocks) for name, blocks in pieces.items()}
    rows = np.concatenate(row_src)
    new_set = GaussianSet(**merged, creation_seed=gaussians.creation_seed,
                          dtype=gaussians.dtype)

    keep = new_set.opacities >= config.prune_opacity_threshold
    if not np.any(keep):
        raise TrainingError("densify/prune removed every Gaussian")
    final = GaussianSet(**{k_: v[keep] for k_, v in new_set.param_arrays().items()},
                        creation_seed=gaussians.creation_seed, dtype=gaussians.dtype)
    rows = rows[keep]
    if opt_states is not None:
        for name in SCENE_GROUPS:
            if name in opt_states:
                st = opt_states[name]
                st.m = st.m[rows].copy()
                st.v = st.v[rows].copy()
    return final


# -- temporal subsequence sampling ---------------------------------------------

def sample_subsequence_indices(num_timesteps: int, config: TrainConfig,
                               rng: CounterRng) -> np.ndarray:
    """Anchor indices s, s+r, ... for a random feasible rate r and start s."""
    T = num_timesteps
    if T < 2:
        raise ParameterError(f"need at least 2 timesteps, got {T}")
    L = min(config.subsequence_length, T)
    rates = [r for r in config.frame_rate_choices if (L - 1) * r <= T - 1]
    while not rates and L > 2:
        L -= 1
        rates = [r for r in config.frame_rate_choices if (L - 1) * r <= T - 1]
    if not rates:
        L = 2
        rates = [r for r in config.frame_rate_choices if r <= T - 1]
        if not rates:
            rates = [1]
    r = rates[rng.integers(0, len(rates))]
    s = rng.integers(0, (T - 1) - (L - 1) * r + 1)
    return s + r * np.arange(L, dtype=np.int64)


def sample_subsequence(num_timesteps: int, config: TrainConfig,
                       rng: CounterRng) -> np.ndarray:
    """Strictly increasing normalized times of a random-rate subsequence."""
    idx = sample_subsequence_indices(num_timesteps, config, rng)
    return idx.astype(np.float64) / (num_timesteps - 1)


# -- trainer --------------------------------------------------------------------

class _GradBag(dict):
    def add(self, name, arr):
        if name in self:
            self[name] = self[name] + arr
        else:
            self[name] = np.array(arr, dtype=np.float64)


class Trainer:
    """Owns the scene, field, optimizer, RNG, and the stage loop."""

    def __init__(self, config: TrainConfig, dataset, scene: GaussianSet | None = None,
                 field: HexPlaneField | None = None, log_stream=None,
                 checkpoint_dir=None):
        self.config = config
        self.dataset = dataset
        self.log_stream = log_stream
        self.checkpoint_dir = checkpoint_dir
        if scene is None:
            scene = init_unit_sphere(config.init_gaussians, config.seed)
        if field is None:
            field = HexPlaneField(
                num_levels=config.hexplane_levels,
                base_resolution=config.hexplane_base_resolution,
                channels=config.hexplane_channels,
                time_resolution=max(dataset.num_anchors, 8),
                time_mode=config.hexplane_time_mode,
                hidden_width=config.hexplane_hidden_width,
                seed=config.seed)
        self.scene = scene
        self.field = field
        self.rng = CounterRng(config.seed, stream=2)
        self.stage = "static"
        self.stage_iteration = 0
        self.global_iteration = 0
        self.opt_states: dict[str, AdamState] = {}
        self.densify_accum = np.zeros(len(scene), dtype=np.float32)
        self.densify_count = np.zeros(len(scene), dtype=np.float32)
        self.sds_skipped = 0
        self.stage_summaries: list[dict] = []
        self._loss_history: list[float] = []

    # -- shared helpers --------------------------------------------------

    @property
    def background(self) -> np.ndarray:
        return np.asarray(self.config.background, dtype=np.float64)

    def _position_lr(self) -> float:
        frac = min(self.global_iteration / max(self.config.total_iterations, 1), 1.0)
        return self.config.lr_positions * (self.config.lr_positions_final_scale ** frac)

    def _lr_for(self, name: str) -> float:
        c = self.config
        if name == "positions":
            return self._position_lr()
        table = {"rotations": c.lr_rotations, "log_scales": c.lr_scales,
                 "opacity_logits": c.lr_opacities, "color_logits": c.lr_colors}
        if name in table:
            return table[name]
        return c.lr_planes if name.startswith("plane_") else c.lr_mlp

    def _apply_grads(self, grads: _GradBag, groups):
        c = self.config
        scene_params = self.scene.param_arrays()
        field_params = self.field.named_parameters()
        for name in groups:
            if name not in grads:
                continue
            param = scene_params[name] if name in scene_params else field_params[name]
            if name not in self.opt_states:
                self.opt_states[name] = AdamState.zeros(param.shape)
            st = self.opt_states[name]
            if st.m.shape != param.shape:
                raise TrainingError(f"optimizer state shape mismatch for '{name}'")
            updated = adam_step(st, param, grads[name], self._lr_for(name),
                                c.adam_beta1, c.adam_beta2, c.adam_eps, group=name)
            if name in scene_params:
                setattr(self.scene, name, updated)
            else:
                self.field.set_parameter(name, updated)
        if "rotations" in groups:
            self.scene.normalize_rotations()

    def _render_view(self, cam: Camera, deformed):
        return render(self.scene, deformed, cam, self.background)

    def _accumulate_render_grads(self, grads: _GradBag, out, grad_image,
                                 deform_ctx=None, track_densify=False):
        rg = render_backward(out.ctx, grad_image)
        out.per_gaussian_screen_grad_norm = rg.screen_grad_norm
        grads.add("rotations", rg.dq)
        grads.add("log_scales", rg.ds)
        grads.add("opacity_logits", rg.dopacity_logit)
        grads.add("color_logits", rg.dcolor_logit)
        if deform_ctx is None:
            grads.add("positions", rg.dmu_deformed)
        else:
            fgrads, dpos = self.field.backward(deform_ctx, rg.dmu_deformed)
            grads.add("positions", rg.dmu_deformed + dpos)
            for name, g in fgrads.items():
                grads.add(name, g)
        if track_densify:
            visible = np.zeros(len(self.scene), dtype=np.float32)
            if len(out.ctx.pair_gauss):
                visible[np.unique(out.ctx.pair_gauss)] = 1.0
            self.densify_accum += (rg.screen_grad_norm * visible).astype(np.float32)
            self.densify_count += visible

    def _add_regularizer_grads(self, grads: _GradBag):
        c = self.config
        tv_total, tv_grads = losses.field_tv_loss_grad(self.field)
        sm_total, sm_grads = losses.smooth_loss_grad(self.field)
        w = c.omega_consistency
        for name, g in tv_grads.items():
            grads.add(name, w * c.omega_tv * g)
        for name, g in sm_grads.items():
            grads.add(name, w * c.omega_smooth * g)
        return tv_total, c.omega_smooth * sm_total

    def _log(self, iteration_type: str, report: losses.LossReport, extra=None):
        self._loss_history.append(report.total)
        if self.log_stream is None:
            return
        line = {"iter": self.global_iteration, "stage": self.stage,
                "stage_iter": self.stage_iteration, "type": iteration_type,
                "gaussians": len(self.scene), "total": report.total,
                "terms": {k: float(v) for k, v in report.terms.items()}}
        if extra:
            line.update(extra)
        self.log_stream.write(json.dumps(line, sort_keys=True) + "\n")

    def _maybe_checkpoint(self, force=False):
        if self.checkpoint_dir is None:
            return
        c = self.config
        if force or (self.stage_iteration % c.checkpoint_interval == 0
                     and self.stage_iteration > 0):
            from .io import save_trainer_checkpoint
            import os
            os.makedirs(self.checkpoint_dir, exist_ok=True)
            name = f"ckpt_{self.stage}_{self.stage_iteration:06d}.gs4d"
            save_trainer_checkpoint(os.path.join(self.checkpoint_dir, name), self)

    def _finish_stage(self, next_stage: str):
        hist = np.asarray(self._loss_history, dtype=np.float64)
        w = min(100, max(len(hist) // 2, 1))
        summary = {
            "stage": self.stage,
            "iterations": int(len(hist)),
            "start_loss": float(hist[:w].mean()) if len(hist) else 0.0,
            "end_loss": float(hist[-w:].mean()) if len(hist) else 0.0,
            "gaussians": len(self.scene),
        }
        summary["progress_ok"] = summary["end_loss"] < summary["start_loss"]
        if self.stage == "fine":
            summary["sds_skipped"] = self.sds_skipped
        self.stage_summaries.append(summary)
        self.stage = next_stage
        self.stage_iteration = 0
        self.opt_states = {}
        self._loss_history = []
        # boundary checkpoint carries the next stage tag at iteration 0
        self._maybe_checkpoint(force=True)

    # -- static stage -----------------------------------------------------

    def _step_static(self):
        c = self.config
        ds = self.dataset
        labels = ds.pseudo_labels[0]
        masks = ds.masks[0] if ds.masks is not None else None
        positions = self.scene.positions.astype(np.float64)

        outs = [self._render_view(cam, positions) for cam in ds.cameras]
        renders = [o.color for o in outs]
        pse, view_grads = losses.pseudo_loss_grad(
            renders, labels, masks, c.static_l1_weight, c.static_ssim_weight)

        grads = _GradBag()
        for out, g in zip(outs, view_grads):
            self._accumulate_render_grads(grads, out, c.omega_pseudo * g,
                                          track_densify=True)
        self._apply_grads(grads, SCENE_GROUPS)

        report = losses.total_loss({"pseudo": pse}, c.loss_weights)
        self._log("static", report)

        self.stage_iteration += 1
        self.global_iteration += 1
        if self.stage_iteration % c.densify_interval == 0:
            mean_grad = self.densify_accum / np.maximum(self.densify_count, 1.0)
            self.scene = densify_and_prune(self.scene, mean_grad, c, self.opt_states)
            n = len(self.scene)
            self.densify_accum = np.zeros(n, dtype=np.float32)
            self.densify_count = np.zeros(n, dtype=np.float32)
        self._maybe_checkpoint()

    def run_static(self) -> GaussianSet:
        if self.stage != "static":
            raise TrainingError(f"static stage already completed (stage={self.stage})")
        if len(self.dataset.pseudo_labels[0]) < 1:
            raise ParameterError("dataset has no views for the initial frame")
        while self.stage_iteration < self.config.static_iterations:
            self._step_static()
        self._finish_stage("coarse")
        return self.scene

    # -- coarse stage -----------------------------------------------------

    def _joint_render_step(self, t_idx: int, view: int):
        """One pseudo-label supervised render through the deformation field."""
        c = self.config
        ds = self.dataset
        t = ds.anchor_times[t_idx]
        deformed, dctx = self.field.deform(self.scene.positions.astype(np.float64), t)
        out = self._render_view(ds.cameras[view], deformed)
        mask = ds.masks[t_idx][view] if ds.masks is not None else None
        pse, gimg = losses.recon_loss_grad(out.color, ds.pseudo_labels[t_idx][view],
                                           mask, c.recon_l1_weight, c.recon_ssim_weight)
        grads = _GradBag()
        self._accumulate_render_grads(grads, out, c.omega_pseudo * gimg, dctx)
        return pse, grads

    def _step_coarse(self):
        c = self.config
        ds = self.dataset
        t_idx = self.rng.integers(0, ds.num_anchors)
        view = self.rng.integers(0, len(ds.cameras))
        pse, grads = self._joint_render_step(t_idx, view)
        tv_total, sm_total = self._add_regularizer_grads(grads)
        self._apply_grads(grads, list(SCENE_GROUPS) + list(self.field.named_parameters()))
        report = losses.total_loss({"pseudo": pse, "tv": tv_total, "smooth": sm_total},
                                   c.loss_weights)
        self._log("coarse", report)
        self.stage_iteration += 1
        self.global_iteration += 1
        self._maybe_checkpoint()

    def run_coarse(self):
        if self.stage != "coarse":
            raise TrainingError(
                f"coarse stage requires a completed static stage (stage={self.stage})")
        while self.stage_iteration < self.config.coarse_iterations:
            self._step_coarse()
        self._finish_stage("fine")
        return self.scene, self.field

    # -- fine stage -------------------------------------------------------

    def _step_fine_temporal(self):
        c = self.config
        ds = self.dataset
        idx = sample_subsequence_indices(ds.num_anchors, c, self.rng)
        grads = _GradBag()
        recon_total = 0.0
        front = ds.cameras[0]
        for i in idx:
            t = ds.anchor_times[i]
            deformed, dctx = self.field.deform(self.scene.positions.astype(np.float64), t)
            out = self._render_view(front, deformed)
            mask = ds.masks[i][0] if ds.masks is not None else None
            rec, gimg = losses.recon_loss_grad(out.color, ds.reference[i], mask,
                                               c.recon_l1_weight, c.recon_ssim_weight)
            recon_total += rec / len(idx)
            self._accumulate_render_grads(grads, out, gimg / len(idx), dctx)
        tv_total, sm_total = self._add_regularizer_grads(grads)
        self._apply_grads(grads, list(SCENE_GROUPS) + list(self.field.named_parameters()))
        report = losses.total_loss(
            {"recon": recon_total, "tv": tv_total, "smooth": sm_total}, c.loss_weights)
        self._log("temporal", report, {"times": [int(v) for v in idx]})

    def _step_fine_sds(self, prior):
        c = self.config
        ds = self.dataset
        t_idx = self.rng.integers(0, ds.num_anchors)
        az = self.rng.uniform(low=c.sds_azimuth_min, high=c.sds_azimuth_max)
        el = self.rng.uniform(low=c.sds_elevation_min, high=c.sds_elevation_max)
        noise_level = self.rng.integers(c.sds_noise_min, c.sds_noise_max + 1)
        sds_seed = int(self.rng.raw(1)[0])
        t = ds.anchor_times[t_idx]

        grads = _GradBag()
        sds_mag = 0.0
        skipped = False
        use_sds = (prior is not None and c.omega_sds > 0.0 and c.omega_consistency > 0.0)
        if use_sds:
            deformed, dctx = self.field.deform(self.scene.positions.astype(np.float64), t)
            pose = OrbitPose(az, el, ds.radius)
            cam = orbit_to_camera(pose, ds.cameras[0].intrinsics)
            out = self._render_view(cam, deformed)
            cond = PriorCondition(reference_image=ds.reference[t_idx],
                                  delta_azimuth_deg=az, delta_elevation_deg=el,
                                  delta_radius=0.0)
            sgrad = losses.sds_inject(prior, out.color, cond, noise_level,
                                      sds_seed, schedule=c.schedule)
            if sgrad is None:
                skipped = True
                self.sds_skipped += 1
            else:
                sds_mag = losses.sds_magnitude(sgrad)
                self._accumulate_render_grads(
                    grads, out, c.omega_consistency * c.omega_sds * sgrad, dctx)

        # front-view pseudo supervision keeps the grounding signal active
        pse, pgrads = self._joint_render_step(t_idx, 0)
        for name, g in pgrads.items():
            grads.add(name, g)
        tv_total, sm_total = self._add_regularizer_grads(grads)
        self._apply_grads(grads, list(SCENE_GROUPS) + list(self.field.named_parameters()))
        report = losses.total_loss(
            {"pseudo": pse, "tv": tv_total, "smooth": sm_total, "sds": sds_mag},
            c.loss_weights)
        self._log("sds", report, {"skipped_sds": skipped, "view": [az, el]})

    def _step_fine(self, prior):
        if self.rng.uniform() < self.config.temporal_fraction:
            self._step_fine_temporal()
        else:
            self._step_fine_sds(prior)
        self.stage_iteration += 1
        self.global_iteration += 1
        self._maybe_checkpoint()

    def run_fine(self, prior=None):
        if self.stage != "fine":
            raise TrainingError(
                f"fine stage requires a completed coarse stage (stage={self.stage})")
        while self.stage_iteration < self.config.fine_iterations:
            self._step_fine(prior)
        self._finish_stage("done")
        return self.scene, self.field


# -- module-level stage operations (spec surface) -------------------------------

def train_static(config: TrainConfig, dataset, init: GaussianSet | None = None,
                 **kw) -> GaussianSet:
    trainer = Trainer(config, dataset, scene=init, **kw)
    return trainer.run_static()


def train_coarse(config: TrainConfig, dataset, scene: GaussianSet,
                 field: HexPlaneField, _stage: str = "coarse", **kw):
    trainer = Trainer(config, dataset, scene=scene, field=field, **kw)
    trainer.stage = _stage
    return trainer.run_coarse()


def train_fine(config: TrainConfig, dataset, scene: GaussianSet,
               field: HexPlaneField, prior=None, _stage: str = "fine", **kw):
    trainer = Trainer(config, dataset, scene=scene, field=field, **kw)
    trainer.stage = _stage
    return trainer.run_fine(prior)
