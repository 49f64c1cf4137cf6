"""File-based stage orchestration shared by the command line front end.

Every stage reads its predecessor's artifacts from the output directory,
computes in memory, and writes its own artifacts; a dry run performs
everything except the writes. All serialization is canonical, so a
stage re-run with identical inputs and seed is byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from docmil.adapters import AdapterModel, build_model, load_checkpoint, save_checkpoint
from docmil.bagging import BagManifest, build_manifest
from docmil.dedup import DedupConfig, IdentityGroups, find_identities, merge_bags
from docmil.embedstore import l2_normalize, read_store
from docmil.errors import ConfigError, DuplicateId, MissingArtifact
from docmil.layout import (
    LayoutDocument,
    clean_text_blocks,
    parse_layout,
    serialize_layout,
)
from docmil.losses import LossConfig
from docmil.retrieval import aggregate, eval_document
from docmil.splits import SplitSpec, make_folds, make_setting
from docmil.synth import SynthConfig, generate
from docmil.textmerge import MergeConfig, merge_document
from docmil.training import TrainConfig, train

STAGES = ("ingest", "merge", "bag", "dedup", "split", "train", "eval", "report", "synth")


@dataclass
class AdapterSpec:
    mode: str = "lora"
    rank: int = 0
    alpha: float | None = None
    lock: str = "none"
    sigma_trainable: bool = True


@dataclass
class SplitChoice:
    setting: str = "all_data"
    target: str | None = None
    index: int = 0


@dataclass
class PipelineConfig:
    corpus_dir: str = "corpus"
    output_dir: str = "out"
    image_store: str = "images.emb"
    text_store: str = "texts.emb"
    feature_store: str | None = None
    merge: MergeConfig = field(default_factory=MergeConfig)
    dedup: DedupConfig = field(default_factory=DedupConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    adapter: AdapterSpec = field(default_factory=AdapterSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    split: SplitChoice = field(default_factory=SplitChoice)
    synth: SynthConfig = field(default_factory=SynthConfig)
    seed: int = 0

    def to_json(self) -> bytes:
        data = asdict(self)
        data["synth"]["manufacturers"] = list(data["synth"]["manufacturers"])
        return json.dumps(data, sort_keys=True, indent=1).encode("utf-8")

    @staticmethod
    def from_json(raw: bytes | str) -> "PipelineConfig":
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8")
        try:
            data = json.loads(raw)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from None
        try:
            kwargs = dict(data)
            for key, cls in [("merge", MergeConfig), ("dedup", DedupConfig),
                             ("loss", LossConfig), ("adapter", AdapterSpec),
                             ("train", TrainConfig), ("split", SplitChoice),
                             ("synth", SynthConfig)]:
                if key in kwargs:
                    sub = dict(kwargs[key])
                    if key == "synth" and "manufacturers" in sub:
                        sub["manufacturers"] = tuple(sub["manufacturers"])
                    kwargs[key] = cls(**sub)
            return PipelineConfig(**kwargs)
        except TypeError as e:
            raise ConfigError(f"config has unknown or missing fields: {e}") from None


class StageIO:
    """Collects pending writes so a dry run can skip the commit."""

    def __init__(self, root: Path, dry_run: bool = False):
        self.root = Path(root)
        self.dry_run = dry_run
        self.pending: dict[str, bytes] = {}

    def put(self, relpath: str, data: bytes):
        self.pending[relpath] = data

    def commit(self) -> list[str]:
        written = sorted(self.pending)
        if not self.dry_run:
            for rel in written:
                path = self.root / rel
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_bytes(self.pending[rel])
        return written


def _read_stage_docs(out: Path, stage_dir: str) -> list[LayoutDocument]:
    d = out / stage_dir
    files = sorted(d.glob("*.json")) if d.is_dir() else []
    if not files:
        raise MissingArtifact(f"no documents under {d}; run the producing stage first")
    return [parse_layout(f.read_bytes()) for f in files]


def _read_manifests(out: Path, stage_dir: str) -> list[BagManifest]:
    d = out / stage_dir
    files = sorted(d.glob("*.json")) if d.is_dir() else []
    if not files:
        raise MissingArtifact(f"no bag manifests under {d}; run `bag` first")
    return [BagManifest.from_json(f.read_bytes()) for f in files]


def _read_store_file(path: str, what: str):
    p = Path(path)
    if not p.is_file():
        raise MissingArtifact(f"{what} store not found: {p}")
    return read_store(p.read_bytes())


def do_ingest(cfg: PipelineConfig, io: StageIO) -> dict:
    corpus = Path(cfg.corpus_dir)
    files = sorted(corpus.glob("*.json"))
    if not files:
        raise MissingArtifact(f"no layout files under {corpus}")
    seen: set[str] = set()
    for f in files:
        doc = clean_text_blocks(parse_layout(f.read_bytes()))
        if doc.doc_id in seen:
            raise DuplicateId(f"doc_id {doc.doc_id!r} appears twice in the corpus")
        seen.add(doc.doc_id)
        io.put(f"layout/{doc.doc_id}.json", serialize_layout(doc))
    return {"documents": len(seen)}


def do_merge(cfg: PipelineConfig, io: StageIO) -> dict:
    docs = _read_stage_docs(io.root, "layout")
    for doc in docs:
        io.put(f"merged/{doc.doc_id}.json",
               serialize_layout(merge_document(doc, cfg.merge)))
    return {"documents": len(docs)}


def do_bag(cfg: PipelineConfig, io: StageIO) -> dict:
    docs = _read_stage_docs(io.root, "merged")
    n_bags = 0
    for doc in docs:
        manifest = build_manifest(doc)
        n_bags += len(manifest.image_bags)
        io.put(f"bags/{doc.doc_id}.json", manifest.to_json())
    return {"documents": len(docs), "bags": n_bags}


def do_dedup(cfg: PipelineConfig, io: StageIO) -> dict:
    docs = _read_stage_docs(io.root, "merged")
    manifests = {m.doc_id: m for m in _read_manifests(io.root, "bags")}
    features = None
    if cfg.dedup.use_feature_prefilter:
        if not cfg.feature_store:
            raise MissingArtifact("prefilter enabled but no feature_store configured")
        features = _read_store_file(cfg.feature_store, "feature")
    corpus = Path(cfg.corpus_dir)
    n_groups = 0
    for doc in docs:
        doc_images = [(im.id, corpus / im.pixels_ref)
                      for page in doc.pages for im in page.images]
        groups = find_identities(doc_images, features, cfg.dedup, doc_id=doc.doc_id)
        n_groups += sum(1 for g in groups.groups if len(g) > 1)
        io.put(f"groups/{doc.doc_id}.json", groups.to_json())
        merged = merge_bags(manifests[doc.doc_id], groups)
        io.put(f"bags_merged/{doc.doc_id}.json", merged.to_json())
    return {"documents": len(docs), "nontrivial_groups": n_groups}


def do_split(cfg: PipelineConfig, io: StageIO) -> dict:
    docs = _read_stage_docs(io.root, "layout")
    folds = make_folds(docs, cfg.seed)
    spec = make_setting(folds, cfg.split.setting, cfg.split.target, cfg.split.index)
    io.put("split.json", spec.to_json())
    return {"train": len(spec.train_doc_ids), "test": len(spec.test_doc_ids)}


def _read_split(out: Path) -> SplitSpec:
    p = out / "split.json"
    if not p.is_file():
        raise MissingArtifact("split.json not found; run `split` first")
    return SplitSpec.from_json(p.read_bytes())


def do_train(cfg: PipelineConfig, io: StageIO) -> dict:
    manifests = _read_manifests(io.root, "bags")
    split = _read_split(io.root)
    image_store = l2_normalize(_read_store_file(cfg.image_store, "image"))
    text_store = l2_normalize(_read_store_file(cfg.text_store, "text"))
    model = build_model(
        image_store.dim, mode=cfg.adapter.mode, rank=cfg.adapter.rank,
        alpha=cfg.adapter.alpha, lock=cfg.adapter.lock, seed=cfg.train.seed,
        sigma=cfg.loss.sigma, sigma_trainable=cfg.adapter.sigma_trainable)
    train_cfg = cfg.train
    if train_cfg.epochs_override is None and split.setting in ("zero_shot", "few_shot"):
        # low-data settings get a short schedule unless the config pins one
        train_cfg = replace(train_cfg, epochs_override=2)
    trained, log = train(image_store, text_store, manifests, split,
                         cfg.loss, model, train_cfg)
    io.put("adapter.ckpt", save_checkpoint(trained))
    io.put("train_log.jsonl", "".join(
        json.dumps(entry, sort_keys=True) + "\n" for entry in log).encode("utf-8"))
    return {"epochs": len(log), "final_loss": log[-1]["mean_loss"] if log else None}


def do_eval(cfg: PipelineConfig, io: StageIO) -> dict:
    split = _read_split(io.root)
    merged_dir = io.root / "bags_merged"
    use_merged = merged_dir.is_dir() and any(merged_dir.glob("*.json"))
    manifests = _read_manifests(io.root, "bags_merged" if use_merged else "bags")
    groups: dict[str, IdentityGroups] = {}
    if use_merged:
        for f in sorted((io.root / "groups").glob("*.json")):
            g = IdentityGroups.from_json(f.read_bytes())
            groups[g.doc_id] = g
    docs = _read_stage_docs(io.root, "layout")
    manufacturer_of = {d.doc_id: d.manufacturer for d in docs}

    model: AdapterModel | None = None
    ckpt = io.root / "adapter.ckpt"
    if ckpt.is_file():
        model = load_checkpoint(ckpt.read_bytes())

    image_store = l2_normalize(_read_store_file(cfg.image_store, "image"))
    text_store = l2_normalize(_read_store_file(cfg.text_store, "text"))
    test = set(split.test_doc_ids)
    metrics = [
        eval_document(image_store, text_store, m, groups.get(m.doc_id), model)
        for m in manifests if m.doc_id in test
    ]
    if not metrics:
        raise MissingArtifact("no test documents have bag manifests")
    report = aggregate(metrics, manufacturer_of)
    io.put("report.json", report.to_json())
    io.put("report.csv", report.to_csv().encode("utf-8"))
    return {"documents": len(metrics),
            "i2t_r1": report.overall["i2t"]["1"],
            "adapter": ckpt.name if model is not None else None}


def do_report(cfg: PipelineConfig, io: StageIO) -> dict:
    p = io.root / "report.json"
    if not p.is_file():
        raise MissingArtifact("report.json not found; run `eval` first")
    data = json.loads(p.read_bytes())
    from docmil.retrieval import DocMetrics, RetrievalReport

    ks = tuple(data["ks"])
    docs = [
        DocMetrics(d["doc_id"], d["n_images"], d["n_texts"],
                   {k: d["i2t"][str(k)] for k in ks},
                   {k: d["t2i"][str(k)] for k in ks},
                   d["chance_i2t"], d["chance_t2i"])
        for d in data["documents"]
    ]
    report = RetrievalReport(docs, data["manufacturers"], data["overall"], ks)
    return {"table": report.render_table()}


def do_synth(cfg: PipelineConfig, io: StageIO) -> dict:
    synth_cfg = cfg.synth
    if io.dry_run:
        return {"would_generate": synth_cfg.n_docs}
    return generate(synth_cfg, Path(cfg.corpus_dir).parent or Path("."))


STAGE_FN = {
    "ingest": do_ingest,
    "merge": do_merge,
    "bag": do_bag,
    "dedup": do_dedup,
    "split": do_split,
    "train": do_train,
    "eval": do_eval,
    "report": do_report,
    "synth": do_synth,
}


def run_stage(stage: str, cfg: PipelineConfig, dry_run: bool = False) -> dict:
    if stage not in STAGE_FN:
        raise ConfigError(f"unknown stage {stage!r}")
    io = StageIO(Path(cfg.output_dir), dry_run=dry_run)
    info = STAGE_FN[stage](cfg, io)
    written = io.commit()
    out = dict(info)
    out["artifacts"] = written
    out["dry_run"] = dry_run
    return out
