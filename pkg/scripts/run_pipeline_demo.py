"""Drive every pipeline stage over a small generated workspace.

    python3 scripts/run_pipeline_demo.py /tmp/docmil-demo
"""

import argparse
import json
import sys
from pathlib import Path

from docmil.dedup import DedupConfig
from docmil.losses import LossConfig
from docmil.pipeline import AdapterSpec, PipelineConfig, run_stage
from docmil.synth import SynthConfig
from docmil.training import TrainConfig

STAGES = ("synth", "ingest", "merge", "bag", "dedup", "split",
          "train", "eval", "report")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("workdir", type=Path)
    parser.add_argument("--docs", type=int, default=12)
    parser.add_argument("--pages", type=int, default=10)
    parser.add_argument("--epochs", type=int, default=5)
    parser.add_argument("--rank", type=int, default=8)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    ws = args.workdir
    ws.mkdir(parents=True, exist_ok=True)
    cfg = PipelineConfig(
        corpus_dir=str(ws / "corpus"),
        output_dir=str(ws / "out"),
        image_store=str(ws / "images.emb"),
        text_store=str(ws / "texts.emb"),
        dedup=DedupConfig(resize_side=32),
        loss=LossConfig("mil_nce"),
        adapter=AdapterSpec(rank=args.rank),
        train=TrainConfig(epochs=args.epochs, seed=args.seed),
        synth=SynthConfig(n_docs=args.docs, pages_per_doc=args.pages,
                          n_concepts=max(30, args.pages + 4), seed=args.seed,
                          write_rasters=True, raster_side=16),
        seed=args.seed,
    )
    (ws / "config.json").write_bytes(cfg.to_json())

    for stage in STAGES:
        info = run_stage(stage, cfg)
        table = info.pop("table", None)
        info.pop("artifacts", None)
        print(f"[{stage}] {json.dumps(info, sort_keys=True)}")
        if table:
            print()
            print(table)
    return 0


if __name__ == "__main__":
    sys.exit(main())
