"""Command-line entry points: staged training, rendering, evaluation, export.

Exit codes: 0 success, 1 usage error, 2 runtime error.  Logs go to stderr;
data goes to files, or to stdout only when --out is "-".
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .errors import Gs4dError


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    p = _Parser(prog="gs4d", description=__doc__)
    sub = p.add_subparsers(dest="command", metavar="command")

    def add(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="TrainConfig file (.json or .toml)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", help="output path")
        return sp

    t0 = add("train-static", "optimize the static scene against frame-0 labels")
    t0.add_argument("--dataset", required=False)
    t0.add_argument("--checkpoint-dir", help="periodic checkpoint directory")

    t1 = add("train-coarse", "joint warm-up of scene and deformation field")
    t1.add_argument("--dataset")
    t1.add_argument("--checkpoint", help="checkpoint from a completed static stage")
    t1.add_argument("--checkpoint-dir")

    t2 = add("train-fine", "fine stage with SDS and consistency priors")
    t2.add_argument("--dataset")
    t2.add_argument("--checkpoint", help="checkpoint from a completed coarse stage")
    t2.add_argument("--checkpoint-dir")
    t2.add_argument("--prior-endpoint", help="HTTP endpoint of the prior server "
                                             "(omitted: SDS term is skipped)")

    r = add("render", "render an orbit viewpoint over a sweep of timesteps")
    r.add_argument("--checkpoint")
    r.add_argument("--orbit", default="0,0,2.0", help='"azimuth,elevation,radius"')
    r.add_argument("--timesteps", default="0:1:8", help='"start:end:count" normalized')
    r.add_argument("--resolution", help="WxH (default from config)")
    r.add_argument("--fov", type=float, default=50.0)

    e = add("eval", "PSNR/SSIM of a render directory against ground truth")
    e.add_argument("--renders")
    e.add_argument("--truth")

    x = add("export", "export the checkpoint scene as a binary PLY")
    x.add_argument("--checkpoint")
    return p


def _require(args, *names):
    missing = [n for n in names if getattr(args, n.replace("-", "_"), None) is None]
    if missing:
        raise _UsageError("missing required flags: " + ", ".join(f"--{n}" for n in missing))


def _load_config(args):
    from .trainer import TrainConfig
    cfg = TrainConfig.from_file(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        cfg = TrainConfig.from_dict(dict(cfg.to_dict(), seed=args.seed))
    return cfg


def _cmd_train_static(args):
    from .io import load_dataset, save_trainer_checkpoint
    from .trainer import Trainer
    _require(args, "dataset", "out")
    cfg = _load_config(args)
    trainer = Trainer(cfg, load_dataset(args.dataset), log_stream=sys.stderr,
                      checkpoint_dir=args.checkpoint_dir)
    trainer.run_static()
    save_trainer_checkpoint(args.out, trainer)
    print(f"static stage complete: {len(trainer.scene)} Gaussians -> {args.out}",
          file=sys.stderr)


def _resumed_trainer(args, expected_stage):
    from .io import load_dataset, trainer_from_checkpoint
    _require(args, "dataset", "checkpoint", "out")
    trainer = trainer_from_checkpoint(args.checkpoint, load_dataset(args.dataset),
                                      log_stream=sys.stderr,
                                      checkpoint_dir=args.checkpoint_dir)
    if trainer.stage != expected_stage:
        raise Gs4dError(f"checkpoint stage is '{trainer.stage}'; "
                        f"expected a checkpoint ready for '{expected_stage}'")
    return trainer


def _cmd_train_coarse(args):
    from .io import save_trainer_checkpoint
    trainer = _resumed_trainer(args, "coarse")
    trainer.run_coarse()
    save_trainer_checkpoint(args.out, trainer)
    print(f"coarse stage complete -> {args.out}", file=sys.stderr)


def _cmd_train_fine(args):
    from .io import save_trainer_checkpoint
    trainer = _resumed_trainer(args, "fine")
    prior = None
    if args.prior_endpoint:
        from .prior import RemotePrior
        prior = RemotePrior(args.prior_endpoint)
    trainer.run_fine(prior)
    save_trainer_checkpoint(args.out, trainer)
    print(f"fine stage complete ({trainer.sds_skipped} SDS iterations skipped) "
          f"-> {args.out}", file=sys.stderr)


def _cmd_render(args):
    from .camera import Intrinsics, OrbitPose, orbit_to_camera
    from .io import load_checkpoint, field_from_checkpoint, scene_from_checkpoint, write_frames
    from .rasterizer import render
    _require(args, "checkpoint", "out")
    ckpt = load_checkpoint(args.checkpoint)
    scene = scene_from_checkpoint(ckpt)
    field = field_from_checkpoint(ckpt)

    try:
        az, el, radius = (float(v) for v in args.orbit.split(","))
        t0, t1, count = args.timesteps.split(":")
        times = np.linspace(float(t0), float(t1), int(count))
    except ValueError as exc:
        raise _UsageError(f"bad --orbit/--timesteps: {exc}") from exc
    if args.resolution:
        try:
            w, h = (int(v) for v in args.resolution.lower().split("x"))
        except ValueError as exc:
            raise _UsageError(f"bad --resolution: {exc}") from exc
    else:
        w, h = ckpt.config["render_width"], ckpt.config["render_height"]
    cam = orbit_to_camera(OrbitPose(az, el, radius),
                          Intrinsics.from_fov(args.fov, w, h))
    bg = np.asarray(ckpt.config["background"], dtype=np.float64)
    frames = []
    for t in times:
        deformed, _ = field.deform(scene.positions.astype(np.float64), float(t))
        frames.append(render(scene, deformed, cam, bg).color)
    paths = write_frames(frames, args.out)
    print(f"wrote {len(paths)} frames to {args.out}", file=sys.stderr)


def _cmd_eval(args):
    from .report import evaluate_directories, write_report
    _require(args, "renders", "truth", "out")
    report = evaluate_directories(args.renders, args.truth)
    if args.out == "-":
        sys.stdout.write(report.to_json() + "\n")
    else:
        paths = write_report(report, args.out)
        with open(f"{args.out}/report.txt", "w") as f:
            f.write(report.to_table() + "\n")
        print(report.to_table(), file=sys.stderr)
        print(f"report written to {paths['json']}", file=sys.stderr)


def _cmd_export(args):
    from .io import export_ply, load_checkpoint, scene_from_checkpoint
    _require(args, "checkpoint", "out")
    scene = scene_from_checkpoint(load_checkpoint(args.checkpoint))
    export_ply(scene, args.out)
    print(f"exported {len(scene)} Gaussians to {args.out}", file=sys.stderr)


_COMMANDS = {
    "train-static": _cmd_train_static,
    "train-coarse": _cmd_train_coarse,
    "train-fine": _cmd_train_fine,
    "render": _cmd_render,
    "eval": _cmd_eval,
    "export": _cmd_export,
}


def run_cli(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise _UsageError("a subcommand is required")
        _COMMANDS[args.command](args)
        return 0
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_help(sys.stderr)
        return 1
    except SystemExit as exc:  # argparse -h/--help
        return 0 if exc.code in (0, None) else 1
    except (Gs4dError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_cli())
