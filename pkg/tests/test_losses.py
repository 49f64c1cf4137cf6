import math

import numpy as np
import pytest

from docmil.errors import BagSizeError, ConfigError
from docmil.losses import (
    Batch,
    LossConfig,
    choose_one,
    evaluate_loss,
    loss_clip,
    loss_mil_max,
    loss_mil_nce,
    loss_mil_softmax,
    milmax_picks,
)

from oracles import (
    clip_loss_oracle,
    fd_gradient,
    max_rel_err,
    mil_max_loss_oracle,
    mil_nce_loss_oracle,
    mil_softmax_loss_oracle,
)

LOSSES = {
    "clip": loss_clip,
    "mil_max": loss_mil_max,
    "mil_softmax": loss_mil_softmax,
    "mil_nce": loss_mil_nce,
}


def random_batch(rng, b=None, d=None, max_bag=4, unit_bags=False):
    b = b or int(rng.integers(1, 6))
    d = d or int(rng.integers(2, 8))
    sizes = (np.ones(b, dtype=int) if unit_bags
             else rng.integers(1, max_bag + 1, b))
    ptr = np.concatenate(([0], np.cumsum(sizes)))
    x = rng.standard_normal((b, d))
    y = rng.standard_normal((int(ptr[-1]), d))
    return Batch(x, y, ptr)


def test_batch_validation():
    with pytest.raises(BagSizeError):
        Batch(np.zeros((2, 3)), np.zeros((2, 3)), np.array([0, 1, 1]))
    with pytest.raises(BagSizeError):
        Batch(np.zeros((2, 3)), np.zeros((3, 3)), np.array([0, 1, 2]))
    with pytest.raises(BagSizeError):
        Batch(np.zeros((2, 3)), np.zeros((3, 4)), np.array([0, 1, 3]))


def test_batch_views():
    batch = Batch(np.zeros((2, 2)), np.zeros((3, 2)), np.array([0, 2, 3]))
    assert batch.size == 2
    assert list(batch.bag_sizes()) == [2, 1]
    assert list(batch.col_bag()) == [0, 0, 1]
    assert batch.own_mask().tolist() == [[True, True, False], [False, False, True]]


def test_clip_single_pair_is_zero():
    rng = np.random.default_rng(0)
    batch = random_batch(rng, b=1, unit_bags=True)
    for kind in LOSSES:
        value, grads = LOSSES[kind](batch, LossConfig(kind))
        assert value == 0.0
        assert np.all(grads.x == 0.0) and np.all(grads.y == 0.0)
        assert grads.sigma == 0.0


def test_clip_orthogonal_pairs_closed_form():
    x = np.array([[1.0, 0.0], [0.0, 1.0]])
    batch = Batch(x, x.copy(), np.array([0, 1, 2]))
    value, _ = loss_clip(batch, LossConfig("clip", sigma=1.0))
    assert value == pytest.approx(math.log(1.0 + math.e) - 1.0, abs=1e-12)
    # same number as softplus(-1)
    assert value == pytest.approx(0.31326168751822286, abs=1e-12)


def test_clip_rejects_multi_text_bags():
    rng = np.random.default_rng(1)
    batch = Batch(rng.standard_normal((2, 3)), rng.standard_normal((3, 3)),
                  np.array([0, 2, 3]))
    with pytest.raises(BagSizeError):
        loss_clip(batch, LossConfig("clip"))


def test_losses_coincide_on_unit_bags():
    rng = np.random.default_rng(2)
    for _ in range(40):
        batch = random_batch(rng, unit_bags=True)
        cfg = {k: LossConfig(k, sigma=float(rng.uniform(0.05, 2.0))) for k in LOSSES}
        base = LOSSES["clip"](batch, cfg["clip"])[0]
        for kind in ("mil_max", "mil_softmax", "mil_nce"):
            other = LOSSES[kind](batch, LossConfig(kind, sigma=cfg["clip"].sigma))[0]
            assert abs(other - base) < 1e-9


def test_values_match_naive_loop_oracles():
    rng = np.random.default_rng(3)
    for _ in range(30):
        batch = random_batch(rng)
        sigma = float(rng.uniform(0.1, 1.5))
        sigma_sm = float(rng.uniform(0.05, 0.8))
        x, y, ptr = batch.x, batch.y, batch.bag_ptr
        got = loss_mil_max(batch, LossConfig("mil_max", sigma=sigma))[0]
        assert got == pytest.approx(mil_max_loss_oracle(x, y, ptr, sigma), rel=1e-10)
        got = loss_mil_nce(batch, LossConfig("mil_nce", sigma=sigma))[0]
        assert got == pytest.approx(mil_nce_loss_oracle(x, y, ptr, sigma), rel=1e-10)
        got = loss_mil_softmax(
            batch, LossConfig("mil_softmax", sigma=sigma, sigma_sm=sigma_sm))[0]
        want = mil_softmax_loss_oracle(x, y, ptr, sigma, sigma_sm)
        assert got == pytest.approx(want, rel=1e-10)
        if np.all(batch.bag_sizes() == 1):
            got = loss_clip(batch, LossConfig("clip", sigma=sigma))[0]
            assert got == pytest.approx(clip_loss_oracle(x, y, sigma), rel=1e-10)


def test_mil_nce_invariant_to_duplicating_bag_members():
    rng = np.random.default_rng(4)
    for k in (2, 3):
        batch = random_batch(rng)
        sizes = batch.bag_sizes()
        y_dup = np.concatenate([
            np.tile(batch.y[batch.bag_ptr[i]:batch.bag_ptr[i + 1]], (k, 1))
            for i in range(batch.size)])
        ptr_dup = np.concatenate(([0], np.cumsum(sizes * k)))
        dup = Batch(batch.x, y_dup, ptr_dup)
        a = loss_mil_nce(batch, LossConfig("mil_nce"))[0]
        b = loss_mil_nce(dup, LossConfig("mil_nce"))[0]
        assert abs(a - b) < 1e-9


def test_mil_max_duplicate_member_changes_cross_denominator():
    """Duplicating a bag member leaves that bag's own term alone but
    inflates every other image's denominator, so the total moves; the
    faithful formula (checked against the naive oracle) shows it."""
    rng = np.random.default_rng(5)
    x = rng.standard_normal((2, 4))
    y1 = rng.standard_normal((1, 4))
    y2 = rng.standard_normal((1, 4))
    flat = Batch(x, np.vstack([y1, y2]), np.array([0, 1, 2]))
    dup = Batch(x, np.vstack([y1, y1, y2, y2]), np.array([0, 2, 4]))
    sigma = 0.5
    v_flat = loss_mil_max(flat, LossConfig("mil_max", sigma=sigma))[0]
    v_dup = loss_mil_max(dup, LossConfig("mil_max", sigma=sigma))[0]
    assert v_dup == pytest.approx(
        mil_max_loss_oracle(dup.x, dup.y, dup.bag_ptr, sigma), rel=1e-10)
    assert v_dup != pytest.approx(v_flat, abs=1e-9)
    assert v_dup > v_flat  # extra copies can only grow the denominators


def test_mil_softmax_approaches_mil_max_as_weights_sharpen():
    rng = np.random.default_rng(6)
    batch = random_batch(rng, b=3, d=5, max_bag=3)
    # keep a strict max in every bag so the sharp limit is well defined
    sigma = 0.3
    v_max = loss_mil_max(batch, LossConfig("mil_max", sigma=sigma))[0]
    v_soft = loss_mil_softmax(
        batch, LossConfig("mil_softmax", sigma=sigma, sigma_sm=1e-4))[0]
    assert abs(v_soft - v_max) < 1e-6


def test_milmax_pick_unchanged_by_constant_shift():
    rng = np.random.default_rng(7)
    for _ in range(20):
        batch = random_batch(rng, b=3, d=6)
        picks = milmax_picks(batch)
        i = int(rng.integers(batch.size))
        xi = batch.x[i]
        c = float(rng.uniform(-3, 3))
        y2 = batch.y.copy()
        lo, hi = batch.bag_ptr[i], batch.bag_ptr[i + 1]
        y2[lo:hi] += c * xi / float(xi @ xi)
        shifted = Batch(batch.x, y2, batch.bag_ptr)
        assert milmax_picks(shifted)[i] == picks[i]


def test_milmax_tie_picks_first_member():
    x = np.array([[1.0, 0.0]])
    y = np.array([[0.5, 0.2], [0.5, -0.9]])  # equal first coordinates: tie
    batch = Batch(x, y, np.array([0, 2]))
    assert milmax_picks(batch)[0] == 0


def test_batch_order_permutation_invariance():
    rng = np.random.default_rng(8)
    for _ in range(10):
        batch = random_batch(rng, b=4)
        perm = rng.permutation(batch.size)
        cols = np.concatenate([
            np.arange(batch.bag_ptr[i], batch.bag_ptr[i + 1]) for i in perm])
        sizes = batch.bag_sizes()[perm]
        permuted = Batch(batch.x[perm], batch.y[cols],
                         np.concatenate(([0], np.cumsum(sizes))))
        for kind, fn in LOSSES.items():
            if kind == "clip":
                continue
            cfg = LossConfig(kind)
            assert fn(permuted, cfg)[0] == pytest.approx(fn(batch, cfg)[0], rel=1e-12)


def test_bag_member_permutation_invariance():
    rng = np.random.default_rng(9)
    for _ in range(10):
        batch = random_batch(rng, b=3)
        y2 = batch.y.copy()
        for i in range(batch.size):
            lo, hi = batch.bag_ptr[i], batch.bag_ptr[i + 1]
            y2[lo:hi] = y2[lo:hi][rng.permutation(hi - lo)]
        permuted = Batch(batch.x, y2, batch.bag_ptr)
        for kind, fn in LOSSES.items():
            if kind == "clip":
                continue
            cfg = LossConfig(kind)
            assert fn(permuted, cfg)[0] == pytest.approx(fn(batch, cfg)[0], rel=1e-12)


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(10)
    for kind, fn in LOSSES.items():
        for _ in range(5):
            batch = random_batch(rng, b=3, d=4, unit_bags=(kind == "clip"))
            cfg = LossConfig(kind, sigma=float(rng.uniform(0.2, 1.0)))
            _, grads = fn(batch, cfg)
            fd_x = fd_gradient(lambda: fn(batch, cfg)[0], batch.x)
            fd_y = fd_gradient(lambda: fn(batch, cfg)[0], batch.y)
            assert max_rel_err(grads.x, fd_x) < 1e-4, kind
            assert max_rel_err(grads.y, fd_y) < 1e-4, kind


def test_sigma_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    for kind, fn in LOSSES.items():
        batch = random_batch(rng, b=3, d=4, unit_bags=(kind == "clip"))
        sigma = 0.4
        _, grads = fn(batch, LossConfig(kind, sigma=sigma))
        h = 1e-6
        fp = fn(batch, LossConfig(kind, sigma=sigma + h))[0]
        fm = fn(batch, LossConfig(kind, sigma=sigma - h))[0]
        fd = (fp - fm) / (2 * h)
        assert abs(grads.sigma - fd) / max(1e-8, abs(fd)) < 1e-4, kind


def test_choose_one_keeps_unit_bags():
    rng = np.random.default_rng(12)
    batch = random_batch(rng, unit_bags=True)
    picked = choose_one(batch, np.random.default_rng(0))
    assert np.array_equal(picked.y, batch.y)
    assert np.array_equal(picked.bag_ptr, batch.bag_ptr)


def test_choose_one_deterministic_under_seed():
    rng = np.random.default_rng(13)
    batch = random_batch(rng, b=5, max_bag=5)
    a = choose_one(batch, np.random.default_rng(99))
    b = choose_one(batch, np.random.default_rng(99))
    assert np.array_equal(a.y, b.y)
    assert all(s == 1 for s in a.bag_sizes())


def test_choose_one_is_roughly_uniform():
    rng = np.random.default_rng(14)
    x = rng.standard_normal((1, 3))
    y = rng.standard_normal((5, 3))
    batch = Batch(x, y, np.array([0, 5]))
    draw_rng = np.random.default_rng(15)
    counts = np.zeros(5, dtype=int)
    for _ in range(10_000):
        picked = choose_one(batch, draw_rng)
        member = int(np.where((y == picked.y[0]).all(axis=1))[0][0])
        counts[member] += 1
    assert np.all(np.abs(counts - 2000) <= 150)


def test_evaluate_loss_dispatch():
    rng = np.random.default_rng(16)
    batch = random_batch(rng, unit_bags=True)
    v_direct = loss_mil_nce(batch, LossConfig("mil_nce"))[0]
    v_dispatch = evaluate_loss(batch, LossConfig("mil_nce"))[0]
    assert v_direct == v_dispatch
    with pytest.raises(ConfigError):
        evaluate_loss(batch, LossConfig("choose_one"))


def test_loss_config_validation():
    with pytest.raises(ConfigError):
        LossConfig("nope")
    with pytest.raises(ConfigError):
        LossConfig("clip", sigma=0.0)
    with pytest.raises(ConfigError):
        LossConfig("mil_softmax", sigma_sm=-1.0)
