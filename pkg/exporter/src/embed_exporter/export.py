"""Turn manifests plus corpus files into a pair of embedding stores."""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from embed_exporter.corpus import read_doc_content, read_manifests
from embed_exporter.encoders import load_encoder
from embed_exporter.errors import CorpusError, ExportError, MissingRaster
from embed_exporter.storefmt import write_store_bytes

MODES = ("plain", "concatenate")


@dataclass
class ExportJob:
    manifest: str
    corpus: str
    encoder: str
    out_images: str
    out_texts: str
    mode: str = "plain"


def run_export(job: ExportJob) -> dict:
    """Encode every bagged image and text named by the manifests.

    Plain mode writes one text row per distinct text id, first-seen
    order. Concatenate mode writes one pseudo-text per bag instead, id
    "cat::<image_id>", holding the bag's member texts joined by single
    spaces. Image rows always follow bag order.

    Returns counts: {"images": ..., "texts": ..., "dim": ...}.
    """
    if job.mode not in MODES:
        raise ExportError(f"mode must be one of {MODES}, got {job.mode!r}")
    encoder = load_encoder(job.encoder)
    manifests = read_manifests(job.manifest)

    image_ids: list[str] = []
    image_rows: list[np.ndarray] = []
    text_ids: list[str] = []
    text_rows: list[np.ndarray] = []
    seen_images: set[str] = set()
    seen_texts: set[str] = set()

    for man in manifests:
        content = read_doc_content(job.corpus, man.doc_id)
        for bag in man.bags:
            if bag.image_id in seen_images:
                raise CorpusError(f"image {bag.image_id!r} exported twice")
            seen_images.add(bag.image_id)
            path = content.raster_paths.get(bag.image_id)
            if path is None:
                raise CorpusError(
                    f"doc {man.doc_id!r}: image {bag.image_id!r} not in layout")
            if not path.is_file():
                raise MissingRaster(f"no pixel file at {path}")
            image_ids.append(bag.image_id)
            image_rows.append(encoder.encode_image(path))

            member_texts = []
            for tid in bag.text_ids:
                if tid not in content.texts:
                    raise CorpusError(
                        f"doc {man.doc_id!r}: text {tid!r} not in layout")
                member_texts.append(content.texts[tid])
                if job.mode == "plain" and tid not in seen_texts:
                    seen_texts.add(tid)
                    text_ids.append(tid)
                    text_rows.append(encoder.encode_text(content.texts[tid]))
            if job.mode == "concatenate":
                text_ids.append(f"cat::{bag.image_id}")
                text_rows.append(encoder.encode_text(" ".join(member_texts)))

    if not image_ids:
        raise ExportError("manifests name no bags to export")
    _write(job.out_images, image_ids, image_rows, "image")
    _write(job.out_texts, text_ids, text_rows, "text")
    return {"images": len(image_ids), "texts": len(text_ids), "dim": encoder.dim}


def _write(out_path: str, ids: list[str], rows: list[np.ndarray], modality: str):
    path = Path(out_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(write_store_bytes(ids, np.stack(rows), modality))
