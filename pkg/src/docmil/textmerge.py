"""Merge fragmented text blocks by box dilation + connected components.

Each text box is transiently dilated (width grows by a fraction of the
page width, height by a multiple of that constant); boxes whose dilated
forms touch are merged transitively. The merge is applied repeatedly
until no pair of merged blocks overlaps any more, so the operation is a
fixpoint and therefore idempotent.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from docmil.errors import ConfigError
from docmil.layout import BBox, LayoutDocument, Page, TextBlock


@dataclass
class MergeConfig:
    horiz_frac: float = 0.01
    vert_mult: float = 4.0

    def __post_init__(self):
        if not (0.0 < self.horiz_frac < 0.5):
            raise ConfigError(f"horiz_frac must be in (0, 0.5), got {self.horiz_frac}")
        if not self.vert_mult > 0.0:
            raise ConfigError(f"vert_mult must be > 0, got {self.vert_mult}")


def dilate(bbox: BBox, page_width: float, cfg: MergeConfig) -> BBox:
    """Grow width by delta and height by vert_mult*delta, centered.

    delta = horiz_frac * page_width. The result may extend past the
    page; dilated boxes are only compared, never stored.
    """
    delta = cfg.horiz_frac * page_width
    half_w = delta / 2.0
    half_h = cfg.vert_mult * delta / 2.0
    return BBox(bbox.x0 - half_w, bbox.y0 - half_h, bbox.x1 + half_w, bbox.y1 + half_h)


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, i: int) -> int:
        root = i
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[i] != root:
            self.parent[i], i = root, self.parent[i]
        return root

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[max(ra, rb)] = min(ra, rb)
        return True


def _components(boxes: list, page_width, cfg) -> list:
    """Group box-index lists whose dilated boxes transitively touch."""
    uf = _UnionFind(len(boxes))
    dilated = [dilate(b, page_width, cfg) for b in boxes]
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            if dilated[i].touches(dilated[j]):
                uf.union(i, j)
    groups: dict[int, list[int]] = {}
    for i in range(len(boxes)):
        groups.setdefault(uf.find(i), []).append(i)
    return list(groups.values())


def merge_blocks(page: Page, cfg: MergeConfig) -> Page:
    """Merge transitively-overlapping (after dilation) text blocks.

    Merged bbox is the hull of the original member boxes; merged text is
    the member texts in reading order (y0, then x0, then id) joined by a
    single space; merged id is the smallest member id. Merging is
    repeated until stable, so a merged page passes through unchanged.
    """
    blocks = page.texts
    if len(blocks) <= 1:
        return replace(page, texts=list(blocks))

    uf = _UnionFind(len(blocks))
    # current working set: one (hull bbox, original member indices) per root
    members: dict[int, list[int]] = {i: [i] for i in range(len(blocks))}
    while True:
        roots = sorted(members)
        hulls = [BBox.hull([blocks[i].bbox for i in members[r]]) for r in roots]
        changed = False
        for group in _components(hulls, page.width, cfg):
            if len(group) == 1:
                continue
            changed = True
            target = roots[group[0]]
            for gi in group[1:]:
                uf.union(target, roots[gi])
            merged_root = uf.find(target)
            merged = []
            for gi in group:
                merged.extend(members.pop(roots[gi]))
            members[merged_root] = merged
        if not changed:
            break

    out = []
    for idxs in members.values():
        group = [blocks[i] for i in idxs]
        group.sort(key=lambda b: (b.bbox.y0, b.bbox.x0, b.id))
        out.append(TextBlock(
            id=min(b.id for b in group),
            bbox=BBox.hull([b.bbox for b in group]),
            text=" ".join(b.text for b in group),
        ))
    out.sort(key=lambda b: (b.bbox.y0, b.bbox.x0, b.id))
    return replace(page, texts=out)


def merge_document(doc: LayoutDocument, cfg: MergeConfig) -> LayoutDocument:
    return replace(doc, pages=[merge_blocks(p, cfg) for p in doc.pages])
