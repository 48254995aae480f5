"""Training objectives: reconstruction, pseudo-label, plane regularizers,
SDS gradient injection, and their weighted total.

Total objective:  L = L_recon + w4 * L_pseudo + w5 * L_consistency
with              L_consistency = L_smooth + w2 * L_TV + w3 * L_SDS.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import ssim as ssim_mod
from .errors import NumericalError, ParameterError, PriorUnavailableError
from .rng import CounterRng

log = logging.getLogger(__name__)

SDS_NOISE_STREAM = 7  # RNG stream dedicated to SDS noise draws


@dataclass(frozen=True)
class LossWeights:
    tv: float = 1e-3           # w2
    sds: float = 0.01          # w3
    pseudo: float = 1.0        # w4
    consistency: float = 1.0   # w5

    def __post_init__(self):
        vals = (self.tv, self.sds, self.pseudo, self.consistency)
        if any(not np.isfinite(v) or v < 0 for v in vals):
            raise ParameterError(f"loss weights must be finite and non-negative: {vals}")


@dataclass
class LossReport:
    terms: dict = field(default_factory=dict)       # raw per-term values
    weighted: dict = field(default_factory=dict)    # contributions to the total
    consistency: float = 0.0
    total: float = 0.0

    def to_json(self) -> dict:
        return {"terms": {k: float(v) for k, v in self.terms.items()},
                "weighted": {k: float(v) for k, v in self.weighted.items()},
                "consistency": float(self.consistency),
                "total": float(self.total)}


# -- plane regularizers ---------------------------------------------------

def tv_loss(values) -> float:
    """Total variation of one feature plane, Sum of squared neighbor
    differences over both axes, normalized by channels * rows * cols.
    Out-of-range neighbors are skipped."""
    return tv_loss_grad(values)[0]


def tv_loss_grad(values):
    v = np.asarray(values)
    if v.dtype not in (np.float32, np.float64):
        v = v.astype(np.float64)
    if v.ndim == 2:
        v = v[..., None]
    rows, cols, ch = v.shape
    norm = 1.0 / (ch * rows * cols)
    di = v[1:, :, :] - v[:-1, :, :]
    dj = v[:, 1:, :] - v[:, :-1, :]
    loss = norm * (np.sum(di * di) + np.sum(dj * dj))
    grad = np.zeros_like(v)
    grad[1:, :, :] += 2 * di
    grad[:-1, :, :] -= 2 * di
    grad[:, 1:, :] += 2 * dj
    grad[:, :-1, :] -= 2 * dj
    grad *= norm
    if np.asarray(values).ndim == 2:
        grad = grad[..., 0]
    return float(loss), grad


def field_tv_loss_grad(hex_field):
    """TV summed over all six planes at every level; grads keyed by parameter name."""
    total = 0.0
    grads = {}
    for lvl, planes in enumerate(hex_field.levels):
        for axes, plane in planes.items():
            loss, g = tv_loss_grad(plane.values)
            total += loss
            grads[f"plane_l{lvl}_{axes[0]}{axes[1]}"] = g
    return total, grads


def plane_smooth_loss_grad(values):
    """Squared second differences along the column (time) axis of one plane."""
    v = np.asarray(values)
    if v.dtype not in (np.float32, np.float64):
        v = v.astype(np.float64)
    if v.ndim == 2:
        v = v[..., None]
    rows, cols, ch = v.shape
    g = np.zeros_like(v)
    total = 0.0
    if cols >= 3:
        acc = v[:, :-2, :] - 2 * v[:, 1:-1, :] + v[:, 2:, :]
        norm = 1.0 / (ch * rows * cols)
        total = norm * np.sum(acc * acc)
        g[:, :-2, :] += 2 * acc
        g[:, 1:-1, :] -= 4 * acc
        g[:, 2:, :] += 2 * acc
        g *= norm
    if np.asarray(values).ndim == 2:
        g = g[..., 0]
    return float(total), g


def smooth_loss(hex_field) -> float:
    """Squared second differences along the time axis of the space-time planes."""
    return smooth_loss_grad(hex_field)[0]


def smooth_loss_grad(hex_field):
    total = 0.0
    grads = {}
    for lvl, planes in enumerate(hex_field.levels):
        for axes, plane in planes.items():
            if not plane.is_temporal:
                continue
            if plane.values.shape[1] < 3:
                log.warning("smooth_loss: plane %s level %d has time resolution %d < 3",
                            axes, lvl, plane.values.shape[1])
            loss, g = plane_smooth_loss_grad(plane.values)
            total += loss
            grads[f"plane_l{lvl}_{axes[0]}{axes[1]}"] = g
    return float(total), grads


# -- image losses ----------------------------------------------------------

def _l1_weighted_with_grad(render, reference, weights):
    h, w, c = render.shape
    if weights is None:
        wmap = np.full((h, w), 1.0)
    else:
        wmap = np.asarray(weights, dtype=np.float64)
        if wmap.shape != (h, w):
            raise ParameterError(f"mask shape {wmap.shape} != image {(h, w)}")
    total = wmap.sum() * c
    if total <= 0:
        return 0.0, np.zeros_like(render)
    wfull = np.repeat(wmap[..., None], c, axis=2) / total
    diff = render - reference
    return float(np.sum(np.abs(diff) * wfull)), np.sign(diff) * wfull


def recon_loss(render, reference, mask=None, l1_weight: float = 0.8,
               ssim_weight: float = 0.2) -> float:
    """Photometric reconstruction metric: l1_weight * L1 + ssim_weight * (1 - SSIM)."""
    return recon_loss_grad(render, reference, mask, l1_weight, ssim_weight)[0]


def recon_loss_grad(render, reference, mask=None, l1_weight: float = 0.8,
                    ssim_weight: float = 0.2):
    render = np.asarray(render, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if render.shape != reference.shape:
        raise ParameterError(f"image shapes differ: {render.shape} vs {reference.shape}")
    l1, dl1 = _l1_weighted_with_grad(render, reference, mask)
    loss = l1_weight * l1
    grad = l1_weight * dl1
    if ssim_weight != 0.0:
        s, ds = ssim_mod.ssim_weighted_with_grad(render, reference, mask)
        loss += ssim_weight * (1.0 - s)
        grad -= ssim_weight * ds
    return float(loss), grad


def pseudo_loss(renders, labels, masks=None, l1_weight: float = 0.8,
                ssim_weight: float = 0.2) -> float:
    """Mean reconstruction loss over the pseudo-labeled views of one timestep."""
    return pseudo_loss_grad(renders, labels, masks, l1_weight, ssim_weight)[0]


def pseudo_loss_grad(renders, labels, masks=None, l1_weight: float = 0.8,
                     ssim_weight: float = 0.2):
    if len(renders) != len(labels):
        raise ParameterError(f"{len(renders)} renders vs {len(labels)} labels")
    if masks is not None and len(masks) != len(renders):
        raise ParameterError(f"{len(masks)} masks vs {len(renders)} renders")
    n = len(renders)
    total = 0.0
    grads = []
    for i in range(n):
        m = None if masks is None else masks[i]
        l, g = recon_loss_grad(renders[i], labels[i], m, l1_weight, ssim_weight)
        total += l / n
        grads.append(g / n)
    return float(total), grads


# -- score distillation ----------------------------------------------------

def sds_inject(prior, render, condition, noise_level: int, seed: int,
               schedule=None, weight: float = 1.0):
    """SDS gradient w(t) * (eps_hat - eps) to inject as dL/dRender.

    Noise is drawn deterministically from ``seed``.  Returns None (and logs)
    if the prior is unavailable, so training can skip the term and continue.
    """
    from .prior import CosineSchedule
    schedule = schedule or CosineSchedule()
    if not (schedule.t_min <= noise_level <= schedule.t_max):
        raise ParameterError(
            f"noise_level {noise_level} outside [{schedule.t_min}, {schedule.t_max}]")
    render = np.asarray(render, dtype=np.float64)
    rng = CounterRng(seed, stream=SDS_NOISE_STREAM)
    eps = rng.normal(render.shape)
    ab = schedule.alpha_bar(noise_level)
    x_t = np.sqrt(ab) * render + np.sqrt(1.0 - ab) * eps
    try:
        eps_hat = prior.predict_noise(x_t, noise_level, condition, clean_render=render)
    except PriorUnavailableError as exc:
        log.warning("SDS skipped: prior unavailable (%s)", exc)
        return None
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    if eps_hat.shape != render.shape:
        raise ParameterError(
            f"prior returned shape {eps_hat.shape}, expected {render.shape}")
    return weight * (eps_hat - eps)


def sds_magnitude(sds_grad) -> float:
    """Scalar stand-in for the SDS term in loss reports: mean |gradient|."""
    return 0.0 if sds_grad is None else float(np.mean(np.abs(sds_grad)))


# -- totals ------------------------------------------------------------------

def total_loss(parts: dict, weights: LossWeights) -> LossReport:
    """Weighted total of the active loss terms (missing parts count as 0)."""
    known = {"recon", "pseudo", "tv", "smooth", "sds"}
    unknown = set(parts) - known
    if unknown:
        raise ParameterError(f"unknown loss parts: {sorted(unknown)}")
    vals = {k: float(parts.get(k, 0.0)) for k in known}
    for name, v in vals.items():
        if not np.isfinite(v):
            raise NumericalError(f"loss term '{name}' is not finite: {v}")
    consistency = vals["smooth"] + weights.tv * vals["tv"] + weights.sds * vals["sds"]
    weighted = {
        "recon": vals["recon"],
        "pseudo": weights.pseudo * vals["pseudo"],
        "smooth": weights.consistency * vals["smooth"],
        "tv": weights.consistency * weights.tv * vals["tv"],
        "sds": weights.consistency * weights.sds * vals["sds"],
    }
    total = vals["recon"] + weights.pseudo * vals["pseudo"] + weights.consistency * consistency
    return LossReport(terms=vals, weighted=weighted,
                      consistency=float(consistency), total=float(total))
