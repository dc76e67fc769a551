"""Command-line entry point.

Commands: gen-scenes, pretrain, gradcheck, probe, ablate.  Exit codes:
0 success, 1 invalid flags or configuration, 2 runtime failure (including
a gradcheck that finds a bad gradient).  All file outputs go under the
path given by --out.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import trainer
from .errors import ConfigurationError, SceneContrastError
from .scenegen import (
    SceneGeometry,
    SemanticOracleConfig,
    generate_scene,
    read_scene,
    write_scene,
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on bad flags; the contract wants 1
    def error(self, message):
        raise _UsageError(message)


def _scene_seed(base: int, scene: int) -> int:
    return int(np.random.SeedSequence((base, scene)).generate_state(1, np.uint64)[0])


def _load_scene_dir(path: str):
    files = sorted(Path(path).glob("*.cscs"))
    if not files:
        raise ConfigurationError(f"no .cscs files under {path}")
    return [read_scene(f) for f in files]


def _config_from_args(args) -> trainer.TrainConfig:
    cfg = trainer.load_config(args.config) if args.config else trainer.TrainConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "fraction", None) is not None:
        cfg = replace(cfg, probe_fraction=args.fraction)
    cfg.validate()
    return cfg


def _cmd_gen_scenes(args) -> int:
    cfg = SemanticOracleConfig(
        num_classes=args.classes,
        objects_per_scene=args.objects,
        oversegment_factor=args.oversegment,
        noise=args.noise,
    )
    geom = SceneGeometry(
        num_points=args.points,
        num_cameras=args.cameras,
        height=args.height,
        width=args.width,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for s in range(args.count):
        frame = generate_scene(_scene_seed(args.seed, s), cfg, geom, scene_id=s)
        write_scene(frame, out / f"scene_{s:04d}_f00.cscs")
    print(f"wrote {args.count} scenes to {out}")
    return 0


def _cmd_pretrain(args) -> int:
    cfg = _config_from_args(args)
    frames = _load_scene_dir(args.scenes)
    result = trainer.pretrain(frames, cfg, out_dir=args.out)
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"metrics:    {result.metrics_path}")
    return 0


def _cmd_gradcheck(args) -> int:
    report = trainer.gradcheck(seed=args.seed if args.seed is not None else 0)
    sys.stdout.write(report.summary())
    return 0 if report.all_passed else 2


def _cmd_probe(args) -> int:
    cfg = _config_from_args(args)
    frames = _load_scene_dir(args.scenes)
    feat_dim = frames[0].pixel_features.shape[3]
    model = trainer.load_model(args.ckpt, feat_dim, cfg.embed_dim)
    report = trainer.linear_probe(model, frames, cfg)
    sys.stdout.write(report.summary())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "probe.txt").write_text(report.summary())
    return 0


def _cmd_ablate(args) -> int:
    cfg = _config_from_args(args)
    frames = _load_scene_dir(args.scenes)
    if args.arm:
        cfg = replace(trainer.arm_config(cfg, args.arm), seed=cfg.seed)
        result = trainer.pretrain(frames, cfg, out_dir=None)
        acc = trainer.linear_probe(result.model, frames, cfg).mean_accuracy
        print(f"{args.arm},{cfg.seed},{acc!r}")
        return 0
    seeds = list(range(args.seeds))
    rows = trainer.run_ablation(frames, cfg, seeds)
    csv = trainer.ablation_csv(rows)
    sys.stdout.write(csv)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "ablate.csv").write_text(csv)
    return 0


def build_parser() -> _Parser:
    p = _Parser(prog="scenecontrast", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-scenes", help="write deterministic synthetic scenes")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--count", type=int, default=8)
    g.add_argument("--out", required=True)
    g.add_argument("--classes", type=int, default=8)
    g.add_argument("--objects", type=int, default=6)
    g.add_argument("--oversegment", type=int, default=1)
    g.add_argument("--noise", type=float, default=0.0)
    g.add_argument("--cameras", type=int, default=2)
    g.add_argument("--points", type=int, default=4096)
    g.add_argument("--height", type=int, default=64)
    g.add_argument("--width", type=int, default=64)
    g.set_defaults(fn=_cmd_gen_scenes)

    t = sub.add_parser("pretrain", help="run the contrastive pre-training loop")
    t.add_argument("--config", default=None)
    t.add_argument("--scenes", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, default=None)
    t.set_defaults(fn=_cmd_pretrain)

    c = sub.add_parser(
        "gradcheck",
        help="finite-difference audit; exit 0 only if every component passes",
    )
    c.add_argument("--seed", type=int, default=None)
    c.set_defaults(fn=_cmd_gradcheck)

    r = sub.add_parser("probe", help="linear probe of a trained checkpoint")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--scenes", required=True)
    r.add_argument("--fraction", type=float, default=None)
    r.add_argument("--config", default=None)
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--out", default=None)
    r.set_defaults(fn=_cmd_probe)

    a = sub.add_parser("ablate", help="train and probe the comparison arms")
    a.add_argument("--scenes", required=True)
    a.add_argument("--seeds", type=int, default=10)
    a.add_argument("--arm", choices=list(trainer.ARMS), default=None)
    a.add_argument("--config", default=None)
    a.add_argument("--fraction", type=float, default=None)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", default=None)
    a.set_defaults(fn=_cmd_ablate)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    try:
        return args.fn(args)
    except ConfigurationError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except SceneContrastError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
