import pytest

from docmil.errors import ConfigError, SchemaError, TooFewDocuments
from docmil.layout import LayoutDocument
from docmil.splits import N_FOLDS, SETTINGS, SplitSpec, make_folds, make_setting


def corpus(counts):
    docs = []
    for manufacturer, n in counts.items():
        for k in range(n):
            docs.append(LayoutDocument(f"{manufacturer}-{k:02d}", manufacturer, []))
    return docs


def test_ten_docs_give_five_folds_of_two():
    folds = make_folds(corpus({"m": 10}), seed=0)
    sizes = [len(f) for f in folds.by_manufacturer["m"]]
    assert sizes == [2, 2, 2, 2, 2]


def test_seven_docs_round_robin_sizes():
    folds = make_folds(corpus({"m": 7}), seed=0)
    sizes = [len(f) for f in folds.by_manufacturer["m"]]
    assert sizes == [2, 2, 1, 1, 1]


def test_folds_partition_the_documents():
    docs = corpus({"m": 13, "k": 8})
    folds = make_folds(docs, seed=3)
    for manufacturer, ids in (("m", 13), ("k", 8)):
        dealt = [d for f in folds.by_manufacturer[manufacturer] for d in f]
        assert sorted(dealt) == [f"{manufacturer}-{i:02d}" for i in range(ids)]
        assert len(set(dealt)) == len(dealt)


def test_folds_deterministic_and_seed_sensitive():
    docs = corpus({"m": 11})
    a = make_folds(docs, seed=5).by_manufacturer["m"]
    b = make_folds(docs, seed=5).by_manufacturer["m"]
    c = make_folds(docs, seed=6).by_manufacturer["m"]
    assert a == b
    assert a != c


def test_fold_assignment_ignores_document_order():
    docs = corpus({"m": 9})
    a = make_folds(docs, seed=1).by_manufacturer["m"]
    b = make_folds(list(reversed(docs)), seed=1).by_manufacturer["m"]
    assert a == b


def test_too_few_documents():
    with pytest.raises(TooFewDocuments):
        make_folds(corpus({"m": 4}), seed=0)


def test_seeded_order_inverts_the_deal():
    folds = make_folds(corpus({"m": 12}), seed=7)
    order = folds.seeded_order("m")
    dealt = [[] for _ in range(N_FOLDS)]
    for k, doc in enumerate(order):
        dealt[k % N_FOLDS].append(doc)
    assert dealt == folds.by_manufacturer["m"]


def fixture_folds():
    return make_folds(corpus({"alpha": 15, "beta": 10}), seed=42)


def test_many_shot_test_folds_cover_each_doc_once():
    folds = fixture_folds()
    seen = []
    for idx in range(N_FOLDS):
        spec = make_setting(folds, "many_shot", "alpha", idx)
        assert not set(spec.train_doc_ids) & set(spec.test_doc_ids)
        assert len(spec.train_doc_ids) + len(spec.test_doc_ids) == 15
        assert all(d.startswith("alpha") for d in spec.train_doc_ids)
        seen.extend(spec.test_doc_ids)
    assert sorted(seen) == [f"alpha-{k:02d}" for k in range(15)]


def test_zero_shot_excludes_target_from_training():
    folds = fixture_folds()
    spec = make_setting(folds, "zero_shot", "beta", 0)
    assert all(not d.startswith("beta") for d in spec.train_doc_ids)
    assert sorted(spec.test_doc_ids) == [f"beta-{k:02d}" for k in range(10)]
    assert sorted(spec.train_doc_ids) == [f"alpha-{k:02d}" for k in range(15)]


def test_one_shot_adds_exactly_one_target_doc():
    folds = fixture_folds()
    zero = make_setting(folds, "zero_shot", "beta", 0)
    specs = [make_setting(folds, "one_shot", "beta", k) for k in range(N_FOLDS)]
    added = []
    for spec in specs:
        extra = set(spec.train_doc_ids) - set(zero.train_doc_ids)
        assert len(extra) == 1
        doc = extra.pop()
        assert doc.startswith("beta")
        assert doc not in spec.test_doc_ids
        assert len(spec.test_doc_ids) == 9
        added.append(doc)
    assert len(set(added)) == N_FOLDS  # five distinct repetitions


def test_one_shot_reps_differ_in_exactly_one_doc():
    folds = fixture_folds()
    a = make_setting(folds, "one_shot", "beta", 0)
    b = make_setting(folds, "one_shot", "beta", 3)
    delta = set(a.train_doc_ids) ^ set(b.train_doc_ids)
    assert len(delta) == 2  # one swapped in, one swapped out


def test_few_shot_adds_exactly_one_fold():
    folds = fixture_folds()
    zero = make_setting(folds, "zero_shot", "beta", 0)
    for idx in range(N_FOLDS):
        spec = make_setting(folds, "few_shot", "beta", idx)
        extra = sorted(set(spec.train_doc_ids) - set(zero.train_doc_ids))
        assert extra == sorted(folds.by_manufacturer["beta"][idx])
        assert sorted(spec.test_doc_ids + extra) == sorted(zero.test_doc_ids)


def test_all_data_takes_one_fold_from_every_manufacturer():
    folds = fixture_folds()
    spec = make_setting(folds, "all_data", None, 2)
    want_test = sorted(folds.by_manufacturer["alpha"][2]
                       + folds.by_manufacturer["beta"][2])
    assert sorted(spec.test_doc_ids) == want_test
    assert len(spec.train_doc_ids) + len(spec.test_doc_ids) == 25


def test_every_setting_is_disjoint_and_json_round_trips():
    folds = fixture_folds()
    for setting in SETTINGS:
        target = None if setting == "all_data" else "alpha"
        for idx in range(N_FOLDS):
            spec = make_setting(folds, setting, target, idx)
            assert not set(spec.train_doc_ids) & set(spec.test_doc_ids)
            again = SplitSpec.from_json(spec.to_json())
            assert again == spec


def test_setting_validation():
    folds = fixture_folds()
    with pytest.raises(ConfigError):
        make_setting(folds, "some_shot", "alpha", 0)
    with pytest.raises(ConfigError):
        make_setting(folds, "zero_shot", "gamma", 0)
    with pytest.raises(IndexError):
        make_setting(folds, "many_shot", "alpha", 5)


def test_split_spec_rejects_overlap():
    with pytest.raises(SchemaError):
        SplitSpec("many_shot", "m", 0, ["a", "b"], ["b"], 0)
    with pytest.raises(SchemaError):
        SplitSpec.from_json(b"{}")
