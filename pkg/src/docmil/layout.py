"""Parse and validate layout-description files into a document model.

One JSON file describes one document: pages with text blocks and image
regions, each carrying a bounding box in page points (origin top-left,
y grows downward). Parsing clamps noisy boxes to the page instead of
rejecting them; inverted boxes are treated as schema violations.
"""

from __future__ import annotations

import json
import unicodedata
from dataclasses import dataclass, field, replace

from docmil.errors import DuplicateId, EmptyDocument, SchemaError


@dataclass
class BBox:
    """Axis-aligned box in page points, top-left origin, y down."""

    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height

    def clamped(self, page_width: float, page_height: float) -> "BBox":
        return BBox(
            min(max(self.x0, 0.0), page_width),
            min(max(self.y0, 0.0), page_height),
            min(max(self.x1, 0.0), page_width),
            min(max(self.y1, 0.0), page_height),
        )

    def touches(self, other: "BBox") -> bool:
        """Closed-interval overlap: shared boundary counts as contact."""
        return (
            self.x0 <= other.x1
            and other.x0 <= self.x1
            and self.y0 <= other.y1
            and other.y0 <= self.y1
        )

    def intersection_area(self, other: "BBox") -> float:
        w = min(self.x1, other.x1) - max(self.x0, other.x0)
        h = min(self.y1, other.y1) - max(self.y0, other.y0)
        if w <= 0.0 or h <= 0.0:
            return 0.0
        return w * h

    @staticmethod
    def hull(boxes: "list[BBox]") -> "BBox":
        return BBox(
            min(b.x0 for b in boxes),
            min(b.y0 for b in boxes),
            max(b.x1 for b in boxes),
            max(b.y1 for b in boxes),
        )


@dataclass
class TextBlock:
    id: str
    bbox: BBox
    text: str


@dataclass
class ImageRegion:
    id: str
    bbox: BBox
    pixels_ref: str


@dataclass
class Page:
    page_no: int
    width: float
    height: float
    texts: list[TextBlock] = field(default_factory=list)
    images: list[ImageRegion] = field(default_factory=list)


@dataclass
class LayoutDocument:
    doc_id: str
    manufacturer: str
    pages: list[Page] = field(default_factory=list)


def _require(obj: dict, key: str, kinds, where: str):
    if not isinstance(obj, dict):
        raise SchemaError(f"{where}: expected object, got {type(obj).__name__}")
    if key not in obj:
        raise SchemaError(f"{where}: missing field {key!r}")
    val = obj[key]
    # bool passes isinstance(int) but is never a valid number or id here
    if isinstance(val, bool) or not isinstance(val, kinds):
        raise SchemaError(f"{where}: field {key!r} has wrong type {type(val).__name__}")
    return val


def _number(obj: dict, key: str, where: str) -> float:
    v = _require(obj, key, (int, float), where)
    v = float(v)
    if v != v or v in (float("inf"), float("-inf")):
        raise SchemaError(f"{where}: field {key!r} is not finite")
    return v


def _bbox(raw, where: str) -> BBox:
    if not isinstance(raw, (list, tuple)) or len(raw) != 4:
        raise SchemaError(f"{where}: bbox must be a list of 4 numbers")
    vals = []
    for v in raw:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise SchemaError(f"{where}: bbox entries must be numbers")
        v = float(v)
        if v != v or v in (float("inf"), float("-inf")):
            raise SchemaError(f"{where}: bbox entry not finite")
        vals.append(v)
    x0, y0, x1, y1 = vals
    if x0 > x1 or y0 > y1:
        raise SchemaError(f"{where}: inverted bbox {vals}")
    return BBox(x0, y0, x1, y1)


def parse_layout(raw: bytes | str) -> LayoutDocument:
    """Parse one layout JSON file into a validated LayoutDocument.

    Boxes are clamped to the page; those whose clamped area is not
    positive (zero-size or fully off-page) are dropped. Inverted boxes
    raise SchemaError. Unknown JSON fields are ignored.
    """
    if isinstance(raw, bytes):
        raw = raw.decode("utf-8")
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as e:
        raise SchemaError(f"not valid JSON: {e}") from None

    doc_id = _require(data, "doc_id", str, "document")
    manufacturer = _require(data, "manufacturer", str, "document")
    raw_pages = _require(data, "pages", list, f"document {doc_id!r}")
    if not raw_pages:
        raise EmptyDocument(f"document {doc_id!r} has no pages")

    pages = []
    seen_pages: set[int] = set()
    seen_text_ids: set[str] = set()
    seen_image_ids: set[str] = set()
    for pi, rp in enumerate(raw_pages):
        where = f"document {doc_id!r} page[{pi}]"
        page_no = _require(rp, "page_no", int, where)
        if page_no < 1:
            raise SchemaError(f"{where}: page_no must be >= 1, got {page_no}")
        if page_no in seen_pages:
            raise DuplicateId(f"{where}: page_no {page_no} repeated")
        seen_pages.add(page_no)
        width = _number(rp, "width", where)
        height = _number(rp, "height", where)
        if width <= 0 or height <= 0:
            raise SchemaError(f"{where}: non-positive page size {width}x{height}")

        texts = []
        for rt in _require(rp, "texts", list, where):
            tid = _require(rt, "id", str, f"{where} text")
            if tid in seen_text_ids:
                raise DuplicateId(f"{where}: text id {tid!r} repeated")
            seen_text_ids.add(tid)
            box = _bbox(_require(rt, "bbox", (list, tuple), f"{where} text {tid!r}"),
                        f"{where} text {tid!r}").clamped(width, height)
            text = _require(rt, "text", str, f"{where} text {tid!r}")
            if box.area <= 0.0:
                continue
            texts.append(TextBlock(tid, box, text))

        images = []
        for ri in _require(rp, "images", list, where):
            iid = _require(ri, "id", str, f"{where} image")
            if iid in seen_image_ids:
                raise DuplicateId(f"{where}: image id {iid!r} repeated")
            seen_image_ids.add(iid)
            box = _bbox(_require(ri, "bbox", (list, tuple), f"{where} image {iid!r}"),
                        f"{where} image {iid!r}").clamped(width, height)
            path = _require(ri, "path", str, f"{where} image {iid!r}")
            if box.area <= 0.0:
                continue
            images.append(ImageRegion(iid, box, path))

        pages.append(Page(page_no, width, height, texts, images))

    pages.sort(key=lambda p: p.page_no)
    return LayoutDocument(doc_id, manufacturer, pages)


def clean_text(text: str) -> str:
    """Map newline and tab to space, strip other control characters."""
    out = []
    for ch in text:
        if ch in ("\n", "\t"):
            out.append(" ")
        elif unicodedata.category(ch) == "Cc":
            continue
        else:
            out.append(ch)
    return "".join(out)


def clean_text_blocks(doc: LayoutDocument) -> LayoutDocument:
    """Drop unusable text blocks and scrub control characters.

    Removes blocks that are empty or whitespace-only after cleaning and
    blocks with non-positive box area. Idempotent; never invents ids.
    """
    pages = []
    for page in doc.pages:
        kept = []
        for tb in page.texts:
            cleaned = clean_text(tb.text)
            if not cleaned.strip():
                continue
            if tb.bbox.area <= 0.0:
                continue
            kept.append(replace(tb, text=cleaned))
        pages.append(replace(page, texts=kept))
    return replace(doc, pages=pages)


def serialize_layout(doc: LayoutDocument) -> bytes:
    """Inverse of parse_layout for valid documents (round-trips exactly)."""
    data = {
        "doc_id": doc.doc_id,
        "manufacturer": doc.manufacturer,
        "pages": [
            {
                "page_no": p.page_no,
                "width": p.width,
                "height": p.height,
                "texts": [
                    {"id": t.id, "bbox": [t.bbox.x0, t.bbox.y0, t.bbox.x1, t.bbox.y1],
                     "text": t.text}
                    for t in p.texts
                ],
                "images": [
                    {"id": im.id, "bbox": [im.bbox.x0, im.bbox.y0, im.bbox.x1, im.bbox.y1],
                     "path": im.pixels_ref}
                    for im in p.images
                ],
            }
            for p in doc.pages
        ],
    }
    return json.dumps(data, ensure_ascii=False, indent=1).encode("utf-8")
