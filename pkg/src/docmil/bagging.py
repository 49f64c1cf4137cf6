"""Associate each image with up to five co-located text blocks.

Selection per image: the nearest text on each of the four sides (by edge
gap, requiring positive projection overlap on the perpendicular axis)
plus the text overlapping the image with the largest intersection area.
The resulting image bags invert into text bags, giving the many-to-many
annotation consumed by training and evaluation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from docmil.errors import SchemaError
from docmil.layout import LayoutDocument, Page

BAG_CAP = 5

# tag for texts gained through identity-group union, not direct association
MERGED_TAG = "merged"


@dataclass
class MilBag:
    image_id: str
    text_ids: list[str]
    tags: list[str]

    def __post_init__(self):
        if not 1 <= len(self.text_ids):
            raise SchemaError(f"bag for {self.image_id!r} is empty")
        if len(self.text_ids) != len(set(self.text_ids)):
            raise SchemaError(f"bag for {self.image_id!r} has duplicate texts")
        if len(self.tags) != len(self.text_ids):
            raise SchemaError(f"bag for {self.image_id!r}: tags do not align")


@dataclass
class BagManifest:
    doc_id: str
    image_bags: list[MilBag]
    skipped_images: list[str] = field(default_factory=list)

    def text_bags(self) -> dict[str, list[str]]:
        """Exact inversion of image_bags, first-seen order."""
        inv: dict[str, list[str]] = {}
        for bag in self.image_bags:
            for tid in bag.text_ids:
                inv.setdefault(tid, []).append(bag.image_id)
        return inv

    def image_ids(self) -> list[str]:
        return [b.image_id for b in self.image_bags]

    def to_json(self) -> bytes:
        data = {
            "doc_id": self.doc_id,
            "bags": [
                {"image": b.image_id, "texts": list(b.text_ids), "tags": list(b.tags)}
                for b in self.image_bags
            ],
            "skipped_images": list(self.skipped_images),
        }
        return json.dumps(data, ensure_ascii=False, indent=1).encode("utf-8")

    @staticmethod
    def from_json(raw: bytes | str) -> "BagManifest":
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8")
        try:
            data = json.loads(raw)
        except json.JSONDecodeError as e:
            raise SchemaError(f"bag manifest is not valid JSON: {e}") from None
        try:
            bags = [MilBag(b["image"], list(b["texts"]), list(b["tags"]))
                    for b in data["bags"]]
            return BagManifest(data["doc_id"], bags, list(data["skipped_images"]))
        except (KeyError, TypeError) as e:
            raise SchemaError(f"bag manifest missing field: {e}") from None


def _pick_direction(image_box, texts, side: str):
    """Nearest text strictly on one side, requiring projection overlap.

    Ties break toward larger projection overlap, then smaller id.
    """
    best = None
    for tb in texts:
        b = tb.bbox
        if side == "left":
            ok, gap = b.x1 <= image_box.x0, image_box.x0 - b.x1
        elif side == "right":
            ok, gap = b.x0 >= image_box.x1, b.x0 - image_box.x1
        elif side == "top":
            ok, gap = b.y1 <= image_box.y0, image_box.y0 - b.y1
        else:
            ok, gap = b.y0 >= image_box.y1, b.y0 - image_box.y1
        if not ok:
            continue
        if side in ("left", "right"):
            overlap = min(b.y1, image_box.y1) - max(b.y0, image_box.y0)
        else:
            overlap = min(b.x1, image_box.x1) - max(b.x0, image_box.x0)
        if overlap <= 0.0:
            continue
        key = (gap, -overlap, tb.id)
        if best is None or key < best[0]:
            best = (key, tb)
    return None if best is None else best[1]


def _pick_overlap(image_box, texts):
    best = None
    for tb in texts:
        area = image_box.intersection_area(tb.bbox)
        if area <= 0.0:
            continue
        key = (-area, tb.id)
        if best is None or key < best[0]:
            best = (key, tb)
    return None if best is None else best[1]


def associate(page: Page) -> list[MilBag]:
    """Build one bag per image from its page's text blocks.

    Candidate order is overlap, left, right, top, bottom; duplicates keep
    their first tag; the bag is capped at five. Images with no candidate
    are omitted (the manifest records them as skipped).
    """
    bags = []
    for image in page.images:
        picks = [("overlap", _pick_overlap(image.bbox, page.texts))]
        for side in ("left", "right", "top", "bottom"):
            picks.append((side, _pick_direction(image.bbox, page.texts, side)))
        text_ids: list[str] = []
        tags: list[str] = []
        for tag, tb in picks:
            if tb is None or tb.id in text_ids:
                continue
            text_ids.append(tb.id)
            tags.append(tag)
        text_ids, tags = text_ids[:BAG_CAP], tags[:BAG_CAP]
        if text_ids:
            bags.append(MilBag(image.id, text_ids, tags))
    return bags


def build_manifest(doc: LayoutDocument) -> BagManifest:
    """Bag every page of a document and record imageless-of-text skips."""
    image_bags: list[MilBag] = []
    skipped: list[str] = []
    for page in doc.pages:
        bags = associate(page)
        bagged = {b.image_id for b in bags}
        image_bags.extend(bags)
        skipped.extend(im.id for im in page.images if im.id not in bagged)
    return BagManifest(doc.doc_id, image_bags, skipped)
