"""Deterministic document-level folds and the shot-setting splits.

Documents are shuffled per manufacturer with a seeded generator and
dealt round-robin into five folds. Settings derive train/test document
sets from the folds; one- and few-shot repetitions designate their
added document or fold by repetition index over the seeded order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from docmil.errors import ConfigError, SchemaError, TooFewDocuments

N_FOLDS = 5

SETTINGS = ("many_shot", "zero_shot", "one_shot", "few_shot", "all_data")


@dataclass
class SplitSpec:
    setting: str
    target: str | None
    repeat_index: int
    train_doc_ids: list[str]
    test_doc_ids: list[str]
    seed: int

    def __post_init__(self):
        if set(self.train_doc_ids) & set(self.test_doc_ids):
            raise SchemaError("train and test documents overlap")

    def to_json(self) -> bytes:
        data = {
            "setting": self.setting,
            "target": self.target,
            "repeat": self.repeat_index,
            "train": sorted(self.train_doc_ids),
            "test": sorted(self.test_doc_ids),
            "seed": self.seed,
        }
        return json.dumps(data, ensure_ascii=False, indent=1).encode("utf-8")

    @staticmethod
    def from_json(raw: bytes | str) -> "SplitSpec":
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8")
        try:
            data = json.loads(raw)
            return SplitSpec(data["setting"], data["target"], data["repeat"],
                             list(data["train"]), list(data["test"]), data["seed"])
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise SchemaError(f"split file invalid: {e}") from None


@dataclass
class Folds:
    """Per-manufacturer fold assignment plus the seeded document order."""

    seed: int
    by_manufacturer: dict[str, list[list[str]]] = field(default_factory=dict)

    def seeded_order(self, manufacturer: str) -> list[str]:
        """Inverse of the round-robin deal: the post-shuffle order."""
        folds = self.by_manufacturer[manufacturer]
        out = []
        for pos in range(max(len(f) for f in folds)):
            for f in folds:
                if pos < len(f):
                    out.append(f[pos])
        return out

    def manufacturers(self) -> list[str]:
        return sorted(self.by_manufacturer)


def make_folds(corpus, seed: int) -> Folds:
    """Deal each manufacturer's documents into five seeded folds.

    corpus is a list of LayoutDocument (or anything with doc_id and
    manufacturer attributes). Raises TooFewDocuments under five docs.
    """
    groups: dict[str, list[str]] = {}
    for doc in corpus:
        groups.setdefault(doc.manufacturer, []).append(doc.doc_id)
    folds = Folds(seed)
    for manufacturer in sorted(groups):
        doc_ids = sorted(groups[manufacturer])
        if len(doc_ids) < N_FOLDS:
            raise TooFewDocuments(
                f"manufacturer {manufacturer!r} has {len(doc_ids)} documents, "
                f"need at least {N_FOLDS}")
        rng = np.random.default_rng(
            np.random.SeedSequence([seed, *manufacturer.encode("utf-8")]))
        order = [doc_ids[i] for i in rng.permutation(len(doc_ids))]
        dealt: list[list[str]] = [[] for _ in range(N_FOLDS)]
        for k, doc_id in enumerate(order):
            dealt[k % N_FOLDS].append(doc_id)
        folds.by_manufacturer[manufacturer] = dealt
    return folds


def make_setting(folds: Folds, setting: str, target: str | None,
                 index: int) -> SplitSpec:
    """Build one SplitSpec; index selects the fold/document repetition."""
    if setting not in SETTINGS:
        raise ConfigError(f"unknown setting {setting!r}")
    if setting != "all_data" and target not in folds.by_manufacturer:
        raise ConfigError(f"unknown manufacturer {target!r}")
    if not 0 <= index < N_FOLDS:
        raise IndexError(f"repetition index {index} out of range")

    def spec(train, test):
        return SplitSpec(setting, target, index, sorted(train), sorted(test),
                         folds.seed)

    if setting == "all_data":
        train: list[str] = []
        test: list[str] = []
        for manufacturer in folds.manufacturers():
            for k, fold in enumerate(folds.by_manufacturer[manufacturer]):
                (test if k == index else train).extend(fold)
        return spec(train, test)

    own = folds.by_manufacturer[target]
    others = [doc for m in folds.manufacturers() if m != target
              for f in folds.by_manufacturer[m] for doc in f]
    target_docs = [doc for f in own for doc in f]

    if setting == "many_shot":
        test = own[index]
        train = [doc for k, f in enumerate(own) if k != index for doc in f]
        return spec(train, test)
    if setting == "zero_shot":
        return spec(others, target_docs)
    if setting == "one_shot":
        designated = folds.seeded_order(target)[index]
        return spec(others + [designated],
                    [d for d in target_docs if d != designated])
    designated_fold = set(own[index])
    return spec(others + sorted(designated_fold),
                [d for d in target_docs if d not in designated_fold])
