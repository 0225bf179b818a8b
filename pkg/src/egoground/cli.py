"""Command-line interface.

Subcommands: synth, train, eval, infer, ablate. Exit codes: 0 on success,
2 on configuration errors, 3 on dataset errors. The only environment knob
is EGOGROUND_LOG_LEVEL (plus the kernel-backend switch documented in
egoground.kernels).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
from pathlib import Path

from .checkpoint import load_checkpoint
from .config import ConfigError, RunConfig, apply_overrides, load_config
from .core import seconds_per_clip
from .data import DatasetError, GeneratorConfig, generate_episode, generate_split, read_dataset, write_dataset
from .inference import decode_predictions, dump_predictions, soft_nms
from .model import GroundingModel, collate
from .train import phase_flags, run_ablate, run_eval, run_finetune, run_pretrain

log = logging.getLogger("egoground")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3


def _add_config_args(p: argparse.ArgumentParser):
    p.add_argument("--config", required=True, help="JSON run config")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="group.key=value", help="override a config key")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="egoground")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    _add_config_args(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="run one training phase")
    _add_config_args(p)
    p.add_argument("--phase", required=True, choices=("pretrain", "finetune"))
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--init", default=None, help="checkpoint to resume or warm-start from")
    p.add_argument("--data", default=None, help="dataset dir (default: generate from config)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_config_args(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("infer", help="predict moments for one episode")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--episode", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--data", default=None, help="dataset dir holding the episode")

    p = sub.add_parser("ablate", help="run the ablation matrix")
    _add_config_args(p)
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--replicates", type=int, default=1)
    p.add_argument("--data", default=None)
    p.add_argument("--out", required=True)
    return parser


def _load(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.overrides:
        cfg = apply_overrides(cfg, args.overrides)
    return cfg


def cmd_synth(args) -> int:
    cfg = _load(args)
    out = Path(args.out)
    for split in ("train", "val"):
        records = generate_split(cfg.data, split)
        write_dataset(records, out / split, generator_config_hash=cfg.data.hash())
        log.info("wrote %d %s episodes under %s", len(records), split, out / split)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load(args)
    if args.phase == "pretrain":
        if args.init:
            raise ConfigError("--init is only valid for finetune or resuming; "
                              "use --phase finetune")
        run_pretrain(cfg, args.seed, args.out, data_dir=args.data)
    else:
        run_finetune(cfg, args.seed, args.out, init=args.init, data_dir=args.data)
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load(args)
    metrics = run_eval(cfg, args.ckpt, args.data, args.out)
    log.info("metrics: %s", metrics)
    return EXIT_OK


def _find_episode(args, cfg: RunConfig):
    if args.data is not None:
        for split in ("val", "train", "."):
            root = Path(args.data) / split if split != "." else Path(args.data)
            if (root / "manifest.json").exists():
                for rec in read_dataset(root):
                    if rec.episode_id == args.episode:
                        return rec
        raise DatasetError(f"episode {args.episode!r} not found under {args.data}")
    m = re.fullmatch(r"ep([0-9a-f]{8})-(\d{6})", args.episode)
    if not m or int(m.group(1), 16) != cfg.data.seed:
        raise DatasetError(
            f"episode {args.episode!r} not derivable from the checkpoint config; pass --data")
    return generate_episode(cfg.data, int(m.group(2)))


def cmd_infer(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    cfg = RunConfig.from_dict(ckpt.config_dict)
    record = _find_episode(args, cfg)
    model = GroundingModel(cfg, init_seed=0)
    model.store.load_arrays(ckpt.params)
    batch = collate([record], cfg)
    use_objects = phase_flags(cfg, ckpt.phase)[0]
    outputs = model.forward_main(batch, use_objects)
    moments = decode_predictions(outputs, 0, batch.num_clips,
                                 cfg.infer.pre_nms_floor, cfg.infer.pre_nms_topk)
    kept = soft_nms(moments, cfg.infer.sigma, cfg.infer.nms_floor, cfg.infer.max_keep)
    dump_predictions(args.out, record.episode_id, kept,
                     seconds_per_clip(cfg.data.window_frames, cfg.data.fps))
    log.info("wrote %d predictions to %s", len(kept), args.out)
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _load(args)
    run_ablate(cfg, args.seed, args.out, replicates=args.replicates, data_dir=args.data)
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "ablate": cmd_ablate,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get("EGOGROUND_LOG_LEVEL", "INFO").upper(),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        log.error("config error: %s", e)
        return EXIT_CONFIG
    except DatasetError as e:
        log.error("data error: %s", e)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
