"""Planted-alignment corpus generator checks."""

import json
from pathlib import Path

import numpy as np
import pytest

from docmil.dedup import load_raster
from docmil.embedstore import read_store
from docmil.errors import ConfigError
from docmil.layout import parse_layout
from docmil.retrieval import chance_rates
from docmil.synth import (
    SynthConfig,
    _sample_concepts,
    generate,
    generate_corpus,
    pipeline_manifests,
    run_experiment,
)

TINY = dict(n_docs=10, pages_per_doc=6, n_concepts=30, dim=24, signal_dim=6)


def tiny_cfg(**over) -> SynthConfig:
    return SynthConfig(**{**TINY, **over})


@pytest.fixture(scope="module")
def corpus():
    return generate_corpus(tiny_cfg())


def test_every_page_bags_five_texts(corpus):
    manifests = pipeline_manifests(corpus.docs)
    assert len(manifests) == 10
    for m in manifests:
        assert not m.skipped_images
        assert len(m.image_bags) == 6
        for bag in m.image_bags:
            assert len(bag.text_ids) == 5
            assert sorted(bag.tags) == sorted(
                ["overlap", "left", "right", "top", "bottom"])


def test_aligned_text_lands_in_own_bag(corpus):
    manifests = pipeline_manifests(corpus.docs)
    aligned = corpus.truth["aligned"]
    for m in manifests:
        for bag in m.image_bags:
            assert bag.image_id in aligned
            assert aligned[bag.image_id] in bag.text_ids


def test_aligned_pair_shares_concept(corpus):
    truth = corpus.truth
    for image_id, tid in truth["aligned"].items():
        assert truth["image_concept"][image_id] == truth["text_concept"][tid]
    # distractor texts never share the image's concept
    manifests = pipeline_manifests(corpus.docs)
    for m in manifests:
        for bag in m.image_bags:
            k = truth["image_concept"][bag.image_id]
            others = [t for t in bag.text_ids if t != truth["aligned"][bag.image_id]]
            assert all(truth["text_concept"][t] != k for t in others)


def test_modalities_live_in_disjoint_subspaces():
    synth = generate_corpus(tiny_cfg(noise=0.0))
    zi = synth.image_store.matrix.astype(np.float64)
    zt = synth.text_store.matrix.astype(np.float64)
    # without an adapter the raw cross-modal dot products are all zero
    assert np.abs(zi @ zt.T).max() < 1e-6
    # unit concepts through an orthonormal frame keep their length
    assert np.linalg.norm(zi, axis=1) == pytest.approx(1.0, abs=1e-6)
    assert np.linalg.norm(zt, axis=1) == pytest.approx(1.0, abs=1e-6)


def test_concept_sampler_respects_cosine_cap():
    rng = np.random.default_rng(0)
    concepts = _sample_concepts(rng, 20, 6, cap=0.7)
    gram = np.abs(concepts @ concepts.T)
    np.fill_diagonal(gram, 0.0)
    assert gram.max() <= 0.7 + 1e-12
    assert np.linalg.norm(concepts, axis=1) == pytest.approx(1.0)


def test_concept_sampler_gives_up_on_impossible_cap():
    rng = np.random.default_rng(0)
    with pytest.raises(ConfigError):
        _sample_concepts(rng, 50, 2, cap=0.05, max_tries=2000)


def test_generation_is_deterministic():
    a = generate_corpus(tiny_cfg())
    b = generate_corpus(tiny_cfg())
    assert a.image_store.ids == b.image_store.ids
    assert a.image_store.matrix.tobytes() == b.image_store.matrix.tobytes()
    assert a.text_store.matrix.tobytes() == b.text_store.matrix.tobytes()
    assert a.truth == b.truth
    c = generate_corpus(tiny_cfg(seed=1))
    assert a.image_store.matrix.tobytes() != c.image_store.matrix.tobytes()


def test_manufacturers_alternate(corpus):
    names = [d.manufacturer for d in corpus.docs]
    assert names == ["acme", "zephyr"] * 5
    for d in corpus.docs:
        assert d.doc_id.startswith(d.manufacturer + "-")


def test_chance_rate_follows_pool_sizes(corpus):
    manifests = pipeline_manifests(corpus.docs)
    for m in manifests:
        ci2t, ct2i = chance_rates(m, None)
        assert ci2t == pytest.approx(5 / 30)
        assert ct2i == pytest.approx(1 / 6)


@pytest.mark.parametrize("over", [
    dict(pages_per_doc=28),            # fewer than 4 spare concepts
    dict(signal_dim=13),               # subspaces cannot be disjoint
    dict(manufacturers=()),
    dict(n_docs=9),                    # second manufacturer underfilled
])
def test_config_rejects_bad_shapes(over):
    with pytest.raises(ConfigError):
        tiny_cfg(**over)


def test_generate_writes_loadable_corpus(tmp_path):
    cfg = tiny_cfg(write_rasters=True, raster_side=8)
    info = generate(cfg, tmp_path)
    assert info["n_docs"] == 10
    assert info["n_images"] == 60
    assert info["n_texts"] == 300

    corpus_dir = Path(info["corpus_dir"])
    doc_files = sorted(corpus_dir.glob("*.json"))
    assert len(doc_files) == 10
    synth = generate_corpus(cfg)
    parsed = parse_layout(doc_files[0].read_bytes())
    assert parsed == synth.docs[0]

    images = read_store(Path(info["image_store"]).read_bytes())
    texts = read_store(Path(info["text_store"]).read_bytes())
    assert images.ids == synth.image_store.ids
    assert images.matrix.tobytes() == synth.image_store.matrix.tobytes()
    assert texts.matrix.tobytes() == synth.text_store.matrix.tobytes()

    truth = json.loads((tmp_path / "truth.json").read_text())
    assert truth["aligned"] == synth.truth["aligned"]

    for page in synth.docs[0].pages[:2]:
        for region in page.images:
            pixels = load_raster(corpus_dir / region.pixels_ref)
            assert pixels.shape == (8, 8)


def test_rasters_deterministic(tmp_path):
    cfg = tiny_cfg(write_rasters=True, raster_side=8)
    generate(cfg, tmp_path / "a")
    generate(cfg, tmp_path / "b")
    name = generate_corpus(cfg).image_store.ids[0] + ".pgm"
    pa = (tmp_path / "a" / "corpus" / "rasters" / name).read_bytes()
    pb = (tmp_path / "b" / "corpus" / "rasters" / name).read_bytes()
    assert pa == pb


def test_experiment_learns_on_tiny_corpus():
    result = run_experiment(tiny_cfg(), seeds=(0,), rank=8)
    assert result.chance_i2t == pytest.approx(5 / 30)
    assert len(result.nce_by_seed) == 1
    assert len(result.choose_by_seed) == 1
    assert result.nce_median > result.chance_i2t
    assert 0.0 <= result.rank0_heldout <= 1.0
    assert result.test_docs
