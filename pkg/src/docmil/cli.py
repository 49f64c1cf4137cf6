"""Command line front end: one subcommand per pipeline stage.

Configuration comes from a JSON file (--config); a handful of flags
override the common knobs. Pipeline failures exit with status 2 and a
single machine-parsable `ErrorClass: message` line on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from docmil.errors import DocmilError
from docmil.pipeline import STAGES, PipelineConfig, run_stage

_LOSS_FLAG = {
    "clip": "clip",
    "mil-max": "mil_max",
    "mil-softmax": "mil_softmax",
    "mil-nce": "mil_nce",
    "choose-one": "choose_one",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="docmil",
        description="document layout corpora to bag-supervised image/text "
                    "retrieval: ingest, merge, bag, dedup, split, train, "
                    "eval, report, synth",
    )
    sub = parser.add_subparsers(dest="stage", required=True)
    for stage in STAGES:
        p = sub.add_parser(stage, help=f"run the {stage} stage")
        p.add_argument("--config", type=Path, help="pipeline config JSON")
        p.add_argument("--seed", type=int, help="override the pipeline seed")
        p.add_argument("--dry-run", action="store_true",
                       help="validate inputs, write nothing")
        p.add_argument("--prefilter", choices=("on", "off"),
                       help="toggle the dedup feature prefilter")
        p.add_argument("--loss", choices=sorted(_LOSS_FLAG),
                       help="override the training loss")
        p.add_argument("--lock", choices=("none", "image", "text", "star"),
                       help="override the adapter locking preset")
        p.add_argument("--rank", type=int, help="override the adapter rank")
    return parser


def _load_config(args) -> PipelineConfig:
    if args.config is not None:
        if not args.config.is_file():
            raise DocmilError(f"config file not found: {args.config}")
        cfg = PipelineConfig.from_json(args.config.read_bytes())
    else:
        cfg = PipelineConfig()
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.train = dataclasses.replace(cfg.train, seed=args.seed)
        cfg.synth = dataclasses.replace(cfg.synth, seed=args.seed)
    if args.prefilter is not None:
        cfg.dedup = dataclasses.replace(
            cfg.dedup, use_feature_prefilter=args.prefilter == "on")
    if args.loss is not None:
        cfg.loss = dataclasses.replace(cfg.loss, kind=_LOSS_FLAG[args.loss])
    if args.lock is not None:
        cfg.adapter = dataclasses.replace(cfg.adapter, lock=args.lock)
    if args.rank is not None:
        cfg.adapter = dataclasses.replace(cfg.adapter, rank=args.rank)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
        info = run_stage(args.stage, cfg, dry_run=args.dry_run)
    except DocmilError as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return 2
    table = info.pop("table", None)
    if table:
        print(table)
    else:
        print(json.dumps(info, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
