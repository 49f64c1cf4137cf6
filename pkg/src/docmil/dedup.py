"""Group repeated images within a document and merge their text bags.

Candidate pairs (optionally prefiltered to each image's nearest feature
neighbors) are scored with normalized cross-correlation on canonicalized
rasters; pairs above the threshold are unioned into identity groups. The
groups drive test-time bag union and retrieval credit for identical
images.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from docmil.bagging import MERGED_TAG, BagManifest, MilBag
from docmil.embedstore import EmbeddingStore
from docmil.errors import (
    ConfigError,
    MissingFeature,
    PartitionMismatch,
    RasterLoadError,
    SchemaError,
)
from docmil.textmerge import _UnionFind


@dataclass
class DedupConfig:
    ncc_threshold: float = 0.7
    knn: int = 10
    resize_side: int = 224
    use_feature_prefilter: bool = False

    def __post_init__(self):
        if not (0.0 < self.ncc_threshold <= 1.0):
            raise ConfigError(f"ncc_threshold must be in (0, 1], got {self.ncc_threshold}")
        if not (isinstance(self.knn, int) and self.knn >= 1):
            raise ConfigError(f"knn must be a positive integer, got {self.knn}")
        if not (isinstance(self.resize_side, int) and self.resize_side >= 1):
            raise ConfigError(f"resize_side must be a positive integer, got {self.resize_side}")


@dataclass
class IdentityGroups:
    doc_id: str
    groups: list[list[str]]

    def representative(self, image_id: str) -> str:
        for g in self.groups:
            if image_id in g:
                return min(g)
        return image_id

    def membership(self) -> dict[str, list[str]]:
        table = {}
        for g in self.groups:
            for i in g:
                table[i] = list(g)
        return table

    def to_json(self) -> bytes:
        data = {"doc_id": self.doc_id, "groups": [list(g) for g in self.groups]}
        return json.dumps(data, ensure_ascii=False, indent=1).encode("utf-8")

    @staticmethod
    def from_json(raw: bytes | str) -> "IdentityGroups":
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8")
        try:
            data = json.loads(raw)
            return IdentityGroups(data["doc_id"], [list(g) for g in data["groups"]])
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise SchemaError(f"identity groups file invalid: {e}") from None

    @staticmethod
    def singletons(doc_id: str, image_ids: list[str]) -> "IdentityGroups":
        return IdentityGroups(doc_id, [[i] for i in sorted(set(image_ids))])


def load_raster(source) -> np.ndarray:
    """8-bit grayscale pixels from a path, PIL image, or 2-d uint8 array."""
    if isinstance(source, np.ndarray):
        if source.ndim != 2:
            raise RasterLoadError(f"raster array must be 2-d, got shape {source.shape}")
        return source.astype(np.uint8)
    if isinstance(source, Image.Image):
        return np.asarray(source.convert("L"), dtype=np.uint8)
    try:
        with Image.open(Path(source)) as im:
            return np.asarray(im.convert("L"), dtype=np.uint8)
    except FileNotFoundError:
        raise RasterLoadError(f"raster file not found: {source}") from None
    except Exception as e:
        raise RasterLoadError(f"cannot load raster {source}: {e}") from None


def _canonical(source, side: int) -> np.ndarray:
    """Grayscale, bilinear resize to side x side, return uint8 array."""
    gray = load_raster(source)
    im = Image.fromarray(gray, mode="L").resize((side, side), Image.BILINEAR)
    return np.asarray(im, dtype=np.uint8)


def ncc(a, b, cfg: DedupConfig | None = None) -> float:
    """Normalized cross-correlation of two rasters, in [-1, 1].

    Rasters are canonicalized (grayscale, bilinear resize), flattened,
    mean-subtracted, and L2-normalized before the dot product. A raster
    with zero variance correlates 1.0 only with a raster whose canonical
    bytes are identical (same constant), otherwise 0.0.
    """
    cfg = cfg or DedupConfig()
    return _ncc_canonical(_canonical(a, cfg.resize_side), _canonical(b, cfg.resize_side))


def _candidate_pairs(ids: list[str], features: EmbeddingStore | None, cfg: DedupConfig):
    n = len(ids)
    if not cfg.use_feature_prefilter:
        return [(i, j) for i in range(n) for j in range(i + 1, n)]
    if features is None:
        raise MissingFeature("prefilter enabled but no feature store given")
    for i in ids:
        if not features.has(i):
            raise MissingFeature(f"no feature vector for image {i!r}")
    feats = features.rows(ids)
    norms = np.sqrt((feats * feats).sum(axis=1, keepdims=True))
    norms[norms == 0.0] = 1.0
    unit = feats / norms
    sims = unit @ unit.T
    np.fill_diagonal(sims, -np.inf)
    pairs = set()
    k = min(cfg.knn, n - 1)
    for i in range(n):
        # ties at the kth similarity: argsort is stable, keep first k
        nearest = np.argsort(-sims[i], kind="stable")[:k]
        for j in nearest:
            pairs.add((min(i, int(j)), max(i, int(j))))
    return sorted(pairs)


def find_identities(
    doc_images: list,
    features: EmbeddingStore | None,
    cfg: DedupConfig,
    doc_id: str = "",
) -> IdentityGroups:
    """Partition a document's images into identity groups.

    doc_images is a list of (id, raster) pairs; raster may be a path, a
    PIL image, or a 2-d uint8 array. Pairs whose NCC exceeds the
    threshold are unioned transitively.
    """
    ids = [i for i, _ in doc_images]
    rasters = {i: r for i, r in doc_images}
    canon = {i: _canonical(rasters[i], cfg.resize_side) for i in ids}
    uf = _UnionFind(len(ids))
    for i, j in _candidate_pairs(ids, features, cfg):
        if _ncc_canonical(canon[ids[i]], canon[ids[j]]) > cfg.ncc_threshold:
            uf.union(i, j)
    by_root: dict[int, list[str]] = {}
    for k, i in enumerate(ids):
        by_root.setdefault(uf.find(k), []).append(i)
    groups = sorted((sorted(g) for g in by_root.values()), key=lambda g: g[0])
    return IdentityGroups(doc_id, groups)


def _ncc_canonical(ca: np.ndarray, cb: np.ndarray) -> float:
    va = ca.astype(np.float64).ravel()
    vb = cb.astype(np.float64).ravel()
    va -= va.mean()
    vb -= vb.mean()
    na = np.sqrt(va @ va)
    nb = np.sqrt(vb @ vb)
    if na == 0.0 or nb == 0.0:
        return 1.0 if np.array_equal(ca, cb) else 0.0
    return float((va / na) @ (vb / nb))


def merge_bags(manifest: BagManifest, groups: IdentityGroups) -> BagManifest:
    """Replace each identity group's text sets by their union.

    Texts gained from group mates keep no directional tag and are marked
    as merged; the bag-size cap does not apply after this step. Groups
    must cover every bagged image exactly once.
    """
    seen: dict[str, int] = {}
    for g in groups.groups:
        for i in g:
            seen[i] = seen.get(i, 0) + 1
    bagged = set(manifest.image_ids())
    for i, cnt in seen.items():
        if cnt > 1 and i in bagged:
            raise PartitionMismatch(f"image {i!r} appears in multiple groups")
    missing = bagged - seen.keys()
    if missing:
        raise PartitionMismatch(f"images not covered by groups: {sorted(missing)[:5]}")

    bag_of = {b.image_id: b for b in manifest.image_bags}
    union_texts: dict[str, dict[str, str]] = {}
    for g in groups.groups:
        members = [i for i in g if i in bag_of]
        if not members:
            continue
        combined: dict[str, str] = {}
        for i in members:
            b = bag_of[i]
            for tid, tag in zip(b.text_ids, b.tags):
                combined.setdefault(tid, tag)
        for i in members:
            union_texts[i] = combined

    merged = []
    for b in manifest.image_bags:
        combined = union_texts[b.image_id]
        text_ids = list(b.text_ids)
        tags = list(b.tags)
        for tid in sorted(set(combined) - set(text_ids)):
            text_ids.append(tid)
            tags.append(MERGED_TAG)
        merged.append(MilBag(b.image_id, text_ids, tags))
    return BagManifest(manifest.doc_id, merged, list(manifest.skipped_images))
