"""Evaluation reports: per-image PSNR/SSIM with per-view / per-timestep
aggregates, emitted as JSON, a delimited table (CSV), a human-readable
table, and matplotlib figures."""

from __future__ import annotations

import json
import math
import os
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .io import load_image
from .metrics import PSNR_CAP_DB, capped_psnr, psnr, ssim

_TIME_PAT = re.compile(r"(?:^|[_/])t(\d+)|frame_(\d+)")
_VIEW_PAT = re.compile(r"view(\d+)")


def _parse_indices(name: str):
    tm = _TIME_PAT.search(name)
    vm = _VIEW_PAT.search(name)
    timestep = int(next(g for g in tm.groups() if g is not None)) if tm else None
    view = int(vm.group(1)) if vm else None
    return timestep, view


@dataclass
class EvalReport:
    images: list = field(default_factory=list)
    per_view: dict = field(default_factory=dict)
    per_timestep: dict = field(default_factory=dict)
    overall: dict = field(default_factory=dict)

    def to_json(self) -> str:
        def clean(x):
            return "identical" if x == math.inf else round(float(x), 6)

        payload = {
            "images": [{"name": im["name"], "psnr": clean(im["psnr"]),
                        "ssim": round(float(im["ssim"]), 6),
                        "timestep": im["timestep"], "view": im["view"]}
                       for im in self.images],
            "per_view": self.per_view,
            "per_timestep": self.per_timestep,
            "overall": self.overall,
        }
        return json.dumps(payload, indent=1, sort_keys=True)

    def to_csv(self) -> str:
        lines = ["name,timestep,view,psnr_db,ssim"]
        for im in self.images:
            p = PSNR_CAP_DB if im["psnr"] == math.inf else im["psnr"]
            t = "" if im["timestep"] is None else im["timestep"]
            v = "" if im["view"] is None else im["view"]
            lines.append(f"{im['name']},{t},{v},{p:.6f},{im['ssim']:.6f}")
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        rows = [f"{'image':<28} {'psnr(dB)':>10} {'ssim':>8}"]
        for im in self.images:
            p = "identical" if im["psnr"] == math.inf else f"{im['psnr']:.2f}"
            rows.append(f"{im['name']:<28} {p:>10} {im['ssim']:>8.4f}")
        o = self.overall
        rows.append(f"{'mean':<28} {o['psnr_mean']:>10.2f} {o['ssim_mean']:>8.4f}")
        return "\n".join(rows)


def _aggregate(pairs):
    ps = [capped_psnr(p) for p, _ in pairs]
    ss = [s for _, s in pairs]
    return {"psnr_mean": round(float(np.mean(ps)), 6),
            "ssim_mean": round(float(np.mean(ss)), 6), "count": len(pairs)}


def evaluate_directories(render_dir, truth_dir) -> EvalReport:
    """Pair PNGs by filename between the two directories and score them."""
    names = sorted(f for f in os.listdir(render_dir) if f.endswith(".png"))
    truth_names = {f for f in os.listdir(truth_dir) if f.endswith(".png")}
    if not names:
        raise ParameterError(f"no PNG files in {render_dir}")
    missing = [n for n in names if n not in truth_names]
    if missing:
        raise ParameterError(f"ground truth missing for: {missing[:5]}")

    report = EvalReport()
    by_view, by_time = {}, {}
    for name in names:
        a = load_image(os.path.join(render_dir, name))
        b = load_image(os.path.join(truth_dir, name))
        p = psnr(a, b)
        s = ssim(a, b)
        timestep, view = _parse_indices(name)
        report.images.append({"name": name, "psnr": p, "ssim": s,
                              "timestep": timestep, "view": view})
        if view is not None:
            by_view.setdefault(view, []).append((p, s))
        if timestep is not None:
            by_time.setdefault(timestep, []).append((p, s))

    report.per_view = {str(v): _aggregate(pairs) for v, pairs in sorted(by_view.items())}
    report.per_timestep = {str(t): _aggregate(pairs) for t, pairs in sorted(by_time.items())}
    report.overall = _aggregate([(im["psnr"], im["ssim"]) for im in report.images])
    return report


def _plot_series(ax, keys, values, label):
    ax.plot(keys, values, marker="o", lw=1.5)
    ax.set_xlabel(label)
    ax.grid(True, alpha=0.3)


def write_report(report: EvalReport, out_dir) -> dict:
    """Write report.json / report.csv and metric figures; returns paths."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    os.makedirs(out_dir, exist_ok=True)
    paths = {"json": os.path.join(out_dir, "report.json"),
             "csv": os.path.join(out_dir, "report.csv")}
    with open(paths["json"], "w") as f:
        f.write(report.to_json() + "\n")
    with open(paths["csv"], "w") as f:
        f.write(report.to_csv())

    for metric in ("psnr", "ssim"):
        fig, axes = plt.subplots(1, 2, figsize=(9, 3.2))
        if report.per_timestep:
            keys = sorted(report.per_timestep, key=int)
            _plot_series(axes[0], [int(k) for k in keys],
                         [report.per_timestep[k][f"{metric}_mean"] for k in keys],
                         "timestep")
        axes[0].set_ylabel(metric)
        axes[0].set_title(f"{metric} by timestep")
        if report.per_view:
            keys = sorted(report.per_view, key=int)
            axes[1].bar([int(k) for k in keys],
                        [report.per_view[k][f"{metric}_mean"] for k in keys])
        axes[1].set_xlabel("view")
        axes[1].set_title(f"{metric} by view")
        axes[1].grid(True, alpha=0.3)
        fig.tight_layout()
        p = os.path.join(out_dir, f"{metric}.png")
        fig.savefig(p, dpi=110)
        plt.close(fig)
        paths[metric] = p
    return paths
