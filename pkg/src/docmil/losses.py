"""Bag-aware contrastive losses with analytic gradients.

All losses operate on a batch of image vectors paired with bags of text
vectors and score both retrieval directions; every variant is averaged
as half the sum of the two per-direction means, so with single-text
bags they all coincide with the symmetric cross-entropy loss.

Conventions: similarities are raw dot products divided by a learned
temperature sigma; bag weighting for the softmax variant uses a fixed
scale sigma_sm. Gradients are returned for every image vector, every
text vector, and sigma.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from docmil.errors import BagSizeError, ConfigError

SIGMA_INIT = 0.07
SIGMA_MIN = 0.01
SIGMA_MAX = 100.0

LOSS_KINDS = ("clip", "mil_max", "mil_softmax", "mil_nce", "choose_one")


@dataclass
class LossConfig:
    kind: str = "clip"
    sigma: float = SIGMA_INIT
    sigma_sm: float = 0.07

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ConfigError(f"unknown loss kind {self.kind!r}")
        if not self.sigma > 0.0:
            raise ConfigError(f"sigma must be positive, got {self.sigma}")
        if not self.sigma_sm > 0.0:
            raise ConfigError(f"sigma_sm must be positive, got {self.sigma_sm}")


@dataclass
class Batch:
    """B image vectors and their text bags, bag-contiguous.

    y holds all bag members concatenated; bag i owns rows
    y[bag_ptr[i]:bag_ptr[i+1]]. Bags must be non-empty.
    """

    x: np.ndarray
    y: np.ndarray
    bag_ptr: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        self.bag_ptr = np.asarray(self.bag_ptr, dtype=np.int64)
        if self.x.ndim != 2 or self.y.ndim != 2 or self.x.shape[1] != self.y.shape[1]:
            raise BagSizeError(
                f"dimension mismatch: x {self.x.shape} vs y {self.y.shape}")
        b = self.x.shape[0]
        if self.bag_ptr.shape != (b + 1,) or self.bag_ptr[0] != 0 \
                or self.bag_ptr[-1] != self.y.shape[0]:
            raise BagSizeError("bag_ptr does not span the text rows")
        if (np.diff(self.bag_ptr) < 1).any():
            raise BagSizeError("every bag must have at least one text")

    @property
    def size(self) -> int:
        return self.x.shape[0]

    def bag_sizes(self) -> np.ndarray:
        return np.diff(self.bag_ptr)

    def col_bag(self) -> np.ndarray:
        """Bag index that owns each text row."""
        return np.repeat(np.arange(self.size), self.bag_sizes())

    def own_mask(self) -> np.ndarray:
        """(B, T) boolean: entry (i, t) true when text t is in bag i."""
        return self.col_bag()[None, :] == np.arange(self.size)[:, None]


@dataclass
class LossGrads:
    x: np.ndarray
    y: np.ndarray
    sigma: float


def _pack(batch: Batch, s: np.ndarray, sigma: float,
          loss_sum: float, gz: np.ndarray, gw: np.ndarray | None = None,
          sigma_sm: float | None = None) -> tuple[float, LossGrads]:
    """Fold d(loss)/d(z) [and optional weight-logit path] into vector grads.

    z = s / sigma are the cross-entropy exponents; w = s / sigma_sm the
    bag-weight logits. Only the z path reaches sigma.
    """
    b = batch.size
    graw = gz / sigma
    if gw is not None:
        graw = graw + gw / sigma_sm
    gx = graw @ batch.y
    gy = graw.T @ batch.x
    gsigma = float(-(gz * s).sum() / (sigma * sigma))
    scale = 1.0 / (2.0 * b)
    return loss_sum * scale, LossGrads(gx * scale, gy * scale, gsigma * scale)


def loss_clip(batch: Batch, cfg: LossConfig) -> tuple[float, LossGrads]:
    """Symmetric two-direction cross-entropy; requires single-text bags."""
    if (batch.bag_sizes() != 1).any():
        raise BagSizeError("this loss requires every bag to hold exactly one text")
    b = batch.size
    s = batch.x @ batch.y.T
    z = s / cfg.sigma
    diag = np.arange(b)

    rmax = z.max(axis=1, keepdims=True)
    er = np.exp(z - rmax)
    denr = er.sum(axis=1)
    l_rows = -(z[diag, diag] - rmax[:, 0]) + np.log(denr)

    cmax = z.max(axis=0, keepdims=True)
    ec = np.exp(z - cmax)
    denc = ec.sum(axis=0)
    l_cols = -(z[diag, diag] - cmax[0, :]) + np.log(denc)

    gz = er / denr[:, None] + ec / denc[None, :]
    gz[diag, diag] -= 2.0
    return _pack(batch, s, cfg.sigma, l_rows.sum() + l_cols.sum(), gz)


def _t2i_best_member(batch: Batch, z: np.ndarray):
    """Text-to-image direction shared by the max and softmax variants.

    Each bag contributes the smallest cross-entropy among its members,
    where a member's positive is its own image against all batch images.
    First member wins ties.
    """
    b, t = z.shape
    col_bag = batch.col_bag()
    cmax = z.max(axis=0)
    ecol = np.exp(z - cmax[None, :])
    colsum = ecol.sum(axis=0)
    z_pos = z[col_bag, np.arange(t)]
    v = -(z_pos - cmax) + np.log(colsum)

    bagmin = np.minimum.reduceat(v, batch.bag_ptr[:-1])
    is_min = v == bagmin[col_bag]
    cand = np.where(is_min, np.arange(t), t)
    qhat = np.minimum.reduceat(cand, batch.bag_ptr[:-1])

    gz = np.zeros_like(z)
    gz[:, qhat] = ecol[:, qhat] / colsum[qhat][None, :]
    gz[col_bag[qhat], qhat] -= 1.0
    return float(v[qhat].sum()), gz


def milmax_picks(batch: Batch) -> np.ndarray:
    """Column index of each bag's highest-similarity member (first wins ties)."""
    s = batch.x @ batch.y.T
    return np.where(batch.own_mask(), s, -np.inf).argmax(axis=1)


def loss_mil_max(batch: Batch, cfg: LossConfig) -> tuple[float, LossGrads]:
    """Best-member contrastive loss.

    Image side: the bag member with the largest similarity is the
    positive; the other own-bag members are excluded from the
    denominator, which otherwise runs over all other bags' members.
    Text side: each bag scores its best member against all images.
    Ties pick the first member.
    """
    b = batch.size
    s = batch.x @ batch.y.T
    z = s / cfg.sigma
    own = batch.own_mask()
    diag_rows = np.arange(b)

    mhat = milmax_picks(batch)
    z_nonown = np.where(own, -np.inf, z)
    # all-own rows (B == 1) max to -inf, which exp() turns into zero terms
    nonown_max = z_nonown.max(axis=1)
    z_pos = z[diag_rows, mhat]
    rmax = np.maximum(z_pos, nonown_max)
    e_cross = np.exp(z_nonown - rmax[:, None])
    e_pos = np.exp(z_pos - rmax)
    den = e_pos + e_cross.sum(axis=1)
    l_i2t = -(z_pos - rmax) + np.log(den)

    gz_i2t = e_cross / den[:, None]
    gz_i2t[diag_rows, mhat] += e_pos / den - 1.0

    l_t2i, gz_t2i = _t2i_best_member(batch, z)
    return _pack(batch, s, cfg.sigma, l_i2t.sum() + l_t2i, gz_i2t + gz_t2i)


def loss_mil_softmax(batch: Batch, cfg: LossConfig) -> tuple[float, LossGrads]:
    """Soft best-member loss.

    The image-side numerator is the bag's similarity-softmax-weighted
    average of member exponentials (weights scaled by sigma_sm); the
    denominator adds all other bags' members. Text side as in the max
    variant. Gradients include the path through the weights.
    """
    s = batch.x @ batch.y.T
    z = s / cfg.sigma
    own = batch.own_mask()

    w_own = np.where(own, s / cfg.sigma_sm, -np.inf)
    ew = np.exp(w_own - w_own.max(axis=1, keepdims=True))
    sw = ew / ew.sum(axis=1, keepdims=True)

    rmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - rmax)
    ez_cross = np.where(own, 0.0, ez)
    num = (sw * ez).sum(axis=1)
    den = num + ez_cross.sum(axis=1)
    l_i2t = -np.log(num) + np.log(den)

    g_num = (-1.0 / num + 1.0 / den)[:, None]
    gz_i2t = g_num * sw * ez + ez_cross / den[:, None]
    gw = g_num * sw * (ez - num[:, None]) * own

    l_t2i, gz_t2i = _t2i_best_member(batch, z)
    return _pack(batch, s, cfg.sigma, l_i2t.sum() + l_t2i, gz_i2t + gz_t2i,
                 gw=gw, sigma_sm=cfg.sigma_sm)


def loss_mil_nce(batch: Batch, cfg: LossConfig) -> tuple[float, LossGrads]:
    """Whole-bag noise-contrastive loss, symmetric in both directions.

    Image side: the numerator sums the own bag's exponentials and the
    denominator sums over every bag member in the batch. Text side is
    the transposed form: a bag's members against all images.
    """
    s = batch.x @ batch.y.T
    z = s / cfg.sigma
    own = batch.own_mask()
    col_bag = batch.col_bag()
    ptr = batch.bag_ptr[:-1]

    rmax = z.max(axis=1, keepdims=True)
    e = np.exp(z - rmax)
    den = e.sum(axis=1)
    num = (e * own).sum(axis=1)
    l_i2t = np.log(den) - np.log(num)
    gz_i2t = e / den[:, None] - own * (e / num[:, None])

    blockmax = np.maximum.reduceat(z.max(axis=0), ptr)[col_bag]
    f = np.exp(z - blockmax[None, :])
    colden = np.add.reduceat(f.sum(axis=0), ptr)
    colnum = np.add.reduceat((f * own).sum(axis=0), ptr)
    l_t2i = np.log(colden) - np.log(colnum)
    gz_t2i = f / colden[col_bag][None, :] - own * (f / colnum[col_bag][None, :])

    return _pack(batch, s, cfg.sigma, l_i2t.sum() + l_t2i.sum(), gz_i2t + gz_t2i)


def choose_one(batch: Batch, rng: np.random.Generator) -> Batch:
    """Truncate every bag to one uniformly drawn member."""
    sizes = batch.bag_sizes()
    picks = batch.bag_ptr[:-1] + rng.integers(0, sizes)
    return Batch(batch.x, batch.y[picks], np.arange(batch.size + 1))


_LOSS_FN = {
    "clip": loss_clip,
    "mil_max": loss_mil_max,
    "mil_softmax": loss_mil_softmax,
    "mil_nce": loss_mil_nce,
}


def evaluate_loss(batch: Batch, cfg: LossConfig) -> tuple[float, LossGrads]:
    """Dispatch on cfg.kind; choose_one batches must be reduced first."""
    if cfg.kind == "choose_one":
        raise ConfigError("choose_one is a batch transform; reduce the batch "
                          "with choose_one() and evaluate the clip loss")
    return _LOSS_FN[cfg.kind](batch, cfg)
