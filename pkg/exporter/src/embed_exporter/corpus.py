"""Readers for the pipeline's on-disk corpus and manifest formats.

Everything here is parsed from files; nothing links against the
pipeline code. Layout JSON gives per-document text strings and raster
paths, manifest JSON gives the bag structure to export.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

from embed_exporter.errors import CorpusError


@dataclass
class Bag:
    image_id: str
    text_ids: list[str]


@dataclass
class DocManifest:
    doc_id: str
    bags: list[Bag]


@dataclass
class DocContent:
    """Text strings and raster paths for one document, keyed by id."""

    doc_id: str
    texts: dict[str, str] = field(default_factory=dict)
    raster_paths: dict[str, Path] = field(default_factory=dict)


def _load_json(path: Path):
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as e:
        raise CorpusError(f"cannot read {path}: {e}") from None
    try:
        return json.loads(raw)
    except json.JSONDecodeError as e:
        raise CorpusError(f"{path} is not valid JSON: {e}") from None


def read_manifests(manifest: str | Path) -> list[DocManifest]:
    """Load bag manifests from one JSON file or a directory of them.

    A file may hold a single manifest object or a list of them.
    Directories are scanned for *.json in sorted order.
    """
    path = Path(manifest)
    if path.is_dir():
        files = sorted(path.glob("*.json"))
        if not files:
            raise CorpusError(f"no manifest files under {path}")
        datas = [_load_json(f) for f in files]
    elif path.is_file():
        data = _load_json(path)
        datas = data if isinstance(data, list) else [data]
    else:
        raise CorpusError(f"manifest path {path} does not exist")

    out = []
    seen: set[str] = set()
    for data in datas:
        out.append(_parse_manifest(data))
        if out[-1].doc_id in seen:
            raise CorpusError(f"doc {out[-1].doc_id!r} appears twice")
        seen.add(out[-1].doc_id)
    return out


def _parse_manifest(data) -> DocManifest:
    if not isinstance(data, dict) or not isinstance(data.get("doc_id"), str):
        raise CorpusError("manifest entry lacks a doc_id string")
    doc_id = data["doc_id"]
    raw_bags = data.get("bags")
    if not isinstance(raw_bags, list):
        raise CorpusError(f"doc {doc_id!r}: manifest has no bag list")
    bags = []
    for b in raw_bags:
        image = b.get("image") if isinstance(b, dict) else None
        texts = b.get("texts") if isinstance(b, dict) else None
        if not isinstance(image, str) or not isinstance(texts, list) or not texts:
            raise CorpusError(f"doc {doc_id!r}: malformed bag entry {b!r}")
        bags.append(Bag(image_id=image, text_ids=[str(t) for t in texts]))
    return DocManifest(doc_id=doc_id, bags=bags)


def read_doc_content(corpus_dir: str | Path, doc_id: str) -> DocContent:
    """Pull text strings and raster paths out of one layout file."""
    corpus = Path(corpus_dir)
    layout_path = corpus / f"{doc_id}.json"
    if not layout_path.is_file():
        raise CorpusError(f"no layout file for doc {doc_id!r} under {corpus}")
    data = _load_json(layout_path)
    if data.get("doc_id") != doc_id:
        raise CorpusError(f"{layout_path} holds doc_id {data.get('doc_id')!r}")

    out = DocContent(doc_id=doc_id)
    for page in data.get("pages", []):
        for t in page.get("texts", []):
            out.texts[t["id"]] = t["text"]
        for im in page.get("images", []):
            out.raster_paths[im["id"]] = corpus / im["path"]
    return out
