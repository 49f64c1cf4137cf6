"""Command line front end: embed-exporter export ..."""

import argparse
import json
import sys

from embed_exporter.errors import ExportError
from embed_exporter.export import MODES, ExportJob, run_export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embed-exporter",
        description="Encode a bagged corpus into embedding store files.")
    sub = parser.add_subparsers(dest="command", required=True)
    exp = sub.add_parser("export", help="run one export job")
    exp.add_argument("--manifest", required=True,
                     help="manifest JSON file or directory of them")
    exp.add_argument("--corpus", required=True,
                     help="directory with layout JSON and raster files")
    exp.add_argument("--encoder", required=True, help="registered encoder name")
    exp.add_argument("--mode", choices=MODES, default="plain")
    exp.add_argument("--out-images", required=True)
    exp.add_argument("--out-texts", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    job = ExportJob(manifest=args.manifest, corpus=args.corpus,
                    encoder=args.encoder, out_images=args.out_images,
                    out_texts=args.out_texts, mode=args.mode)
    try:
        counts = run_export(job)
    except ExportError as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return 2
    print(json.dumps(counts))
    return 0


if __name__ == "__main__":
    sys.exit(main())
