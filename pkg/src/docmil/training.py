"""Mini-batch adapter trainer over frozen embeddings.

Training units are image bags: one image vector plus its text-bag
vectors, drawn from the training split's manifests. Each step applies
the adapters, re-normalizes, evaluates the configured loss, and takes
a hand-rolled Adam step on every trainable array plus log(sigma),
clamping sigma afterwards. Runs are bitwise deterministic for a fixed
seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from docmil.adapters import AdapterModel, renorm_backward
from docmil.bagging import BagManifest
from docmil.embedstore import EmbeddingStore, normalize_rows
from docmil.errors import ConfigError, EmptySplit
from docmil.losses import (
    SIGMA_MAX,
    SIGMA_MIN,
    Batch,
    LossConfig,
    choose_one,
    evaluate_loss,
)


@dataclass
class TrainConfig:
    lr: float = 5e-5
    batch_size: int = 64
    epochs: int = 20
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs_override: int | None = None

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 1 or self.eps <= 0:
            raise ConfigError("lr, batch_size, epochs, and eps must be positive")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("betas must lie in [0, 1)")
        if self.epochs_override is not None and self.epochs_override < 1:
            raise ConfigError("epochs_override must be positive")

    @property
    def effective_epochs(self) -> int:
        return self.epochs_override if self.epochs_override is not None else self.epochs


class Adam:
    """Standard Adam over a list of numpy arrays, updated in place."""

    def __init__(self, params: list[np.ndarray], lr: float,
                 beta1: float, beta2: float, eps: float):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]):
        self.t += 1
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


class _Units:
    """Flattened training units: per-unit image row and text-bag rows."""

    def __init__(self, image_store: EmbeddingStore, text_store: EmbeddingStore,
                 manifests: list[BagManifest], train_doc_ids: set):
        image_ids: list[str] = []
        text_ids: list[str] = []
        ptr = [0]
        for manifest in manifests:
            if manifest.doc_id not in train_doc_ids:
                continue
            for bag in manifest.image_bags:
                image_ids.append(bag.image_id)
                text_ids.extend(bag.text_ids)
                ptr.append(len(text_ids))
        if not image_ids:
            raise EmptySplit("no training units in the selected documents")
        self.x = normalize_rows(image_store.rows(image_ids))
        self.y = normalize_rows(text_store.rows(text_ids))
        self.ptr = np.asarray(ptr, dtype=np.int64)
        self.sizes = np.diff(self.ptr)
        self.count = len(image_ids)

    def batch(self, unit_idx: np.ndarray) -> Batch:
        cols = np.concatenate(
            [np.arange(self.ptr[u], self.ptr[u + 1]) for u in unit_idx])
        bag_ptr = np.concatenate(([0], np.cumsum(self.sizes[unit_idx])))
        return Batch(self.x[unit_idx], self.y[cols], bag_ptr)


def train(
    image_store: EmbeddingStore,
    text_store: EmbeddingStore,
    manifests: list[BagManifest],
    split,
    loss_cfg: LossConfig,
    model: AdapterModel,
    train_cfg: TrainConfig,
) -> tuple[AdapterModel, list[dict]]:
    """Fine-tune a copy of the model; returns (model, per-epoch log)."""
    model = model.clone()
    units = _Units(image_store, text_store, manifests, set(split.train_doc_ids))

    params: list[np.ndarray] = []
    sources: list[tuple[str, str]] = []
    for side_name in ("image", "text"):
        side = model.side(side_name)
        for name, arr in side.param_items():
            side.weights[name] = np.asarray(arr, dtype=np.float64)
            params.append(side.weights[name])
            sources.append((side_name, name))
    log_sigma = np.array(math.log(model.sigma))
    if model.sigma_trainable:
        params.append(log_sigma)
        sources.append(("sigma", "log_sigma"))

    opt = Adam(params, train_cfg.lr, train_cfg.beta1, train_cfg.beta2, train_cfg.eps)
    rng = np.random.default_rng(train_cfg.seed)
    eval_kind = "clip" if loss_cfg.kind == "choose_one" else loss_cfg.kind
    log = []

    for epoch in range(train_cfg.effective_epochs):
        order = rng.permutation(units.count)
        losses = []
        for start in range(0, units.count, train_cfg.batch_size):
            base = units.batch(order[start:start + train_cfg.batch_size])
            if loss_cfg.kind == "choose_one":
                base = choose_one(base, rng)

            ux = model.image.forward(base.x)
            uy = model.text.forward(base.y)
            zx = normalize_rows(ux)
            zy = normalize_rows(uy)
            sigma = float(np.exp(log_sigma))
            cfg = LossConfig(eval_kind, sigma=sigma, sigma_sm=loss_cfg.sigma_sm)
            value, grads = evaluate_loss(Batch(zx, zy, base.bag_ptr), cfg)
            losses.append(value)
            if not params:
                continue

            dux = renorm_backward(ux, zx, grads.x)
            duy = renorm_backward(uy, zy, grads.y)
            _, gimg = model.image.backward(base.x, dux)
            _, gtxt = model.text.backward(base.y, duy)
            gsig = grads.sigma * sigma

            gvec = []
            for side_name, name in sources:
                if side_name == "sigma":
                    gvec.append(np.array(gsig))
                elif side_name == "image":
                    gvec.append(gimg[name])
                else:
                    gvec.append(gtxt[name])
            opt.step(gvec)
            np.clip(log_sigma, math.log(SIGMA_MIN), math.log(SIGMA_MAX), out=log_sigma)

        model.sigma = float(np.exp(log_sigma))
        log.append({"epoch": epoch, "mean_loss": float(np.mean(losses)),
                    "sigma": model.sigma})
    return model, log
