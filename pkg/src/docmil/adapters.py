"""Embedding-space adapter heads: identity, full linear, low-rank residual.

A model holds one adapter per modality plus the shared temperature.
The low-rank head computes v + (alpha/r) * B (A v) with B zero at init,
so a fresh adapter is exactly the identity; rank 0 degenerates to the
identity as well. Adapter outputs are re-normalized to unit length
before scoring, and the backward pass threads gradients through that
normalization.
"""

from __future__ import annotations

import copy
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from docmil.embedstore import EmbeddingStore, normalize_rows
from docmil.errors import ConfigError, DimMismatch, FormatError, TruncatedFile
from docmil.losses import SIGMA_INIT

MODES = ("identity", "full", "lora")
LOCKS = ("none", "image", "text", "star")


@dataclass
class SideAdapter:
    mode: str
    dim: int
    rank: int = 0
    alpha: float | None = None
    trainable: bool = True
    weights: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown adapter mode {self.mode!r}")
        if self.dim < 1:
            raise ConfigError(f"dim must be >= 1, got {self.dim}")
        if self.rank < 0:
            raise ConfigError(f"rank must be >= 0, got {self.rank}")
        if self.mode == "lora" and self.alpha is None:
            self.alpha = float(self.rank)
        if self.mode == "identity":
            self.trainable = False

    @property
    def scale(self) -> float:
        return self.alpha / self.rank if self.rank else 0.0

    def init_params(self, rng: np.random.Generator):
        d = self.dim
        if self.mode == "full":
            self.weights = {"W": np.eye(d), "b": np.zeros(d)}
        elif self.mode == "lora" and self.rank > 0:
            self.weights = {
                "A": rng.standard_normal((self.rank, d)) / np.sqrt(d),
                "B": np.zeros((d, self.rank)),
            }
        else:
            self.weights = {}
        return self

    def forward(self, v: np.ndarray) -> np.ndarray:
        if v.shape[-1] != self.dim:
            raise DimMismatch(f"adapter dim {self.dim}, input dim {v.shape[-1]}")
        if self.mode == "full":
            return v @ self.weights["W"].T + self.weights["b"]
        if self.mode == "lora" and self.rank > 0:
            return v + self.scale * (v @ self.weights["A"].T) @ self.weights["B"].T
        return v

    def backward(self, v: np.ndarray, du: np.ndarray):
        """Gradients of a scalar loss w.r.t. parameters and input rows.

        v is the forward input, du the gradient at the forward output.
        Returns (dv, param_grads) with param_grads keyed like weights.
        """
        if self.mode == "full":
            w = self.weights["W"]
            return du @ w, {"W": du.T @ v, "b": du.sum(axis=0)}
        if self.mode == "lora" and self.rank > 0:
            a, bm = self.weights["A"], self.weights["B"]
            c = self.scale
            dub = du @ bm
            return (
                du + c * dub @ a,
                {"A": c * dub.T @ v, "B": c * du.T @ (v @ a.T)},
            )
        return du, {}

    def param_items(self):
        if not self.trainable:
            return []
        return sorted(self.weights.items())


@dataclass
class AdapterModel:
    image: SideAdapter
    text: SideAdapter
    sigma: float = SIGMA_INIT
    sigma_trainable: bool = True

    def side(self, which: str) -> SideAdapter:
        if which == "image":
            return self.image
        if which == "text":
            return self.text
        raise ConfigError(f"unknown side {which!r}")

    def clone(self) -> "AdapterModel":
        return copy.deepcopy(self)


def build_model(
    dim: int,
    mode: str = "lora",
    rank: int = 0,
    alpha: float | None = None,
    lock: str = "none",
    seed: int = 0,
    sigma: float = SIGMA_INIT,
    sigma_trainable: bool = True,
) -> AdapterModel:
    """Assemble a two-sided model under a locking preset.

    lock=none trains both sides; lock=image freezes the image side to
    the identity (text side keeps the requested mode); lock=text is the
    mirror; lock=star freezes the image side and gives the text side a
    trainable full linear head regardless of the requested mode.
    """
    if lock not in LOCKS:
        raise ConfigError(f"unknown lock {lock!r}")
    rng_img = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    rng_txt = np.random.default_rng(np.random.SeedSequence([seed, 1]))

    def make(side_mode, trainable, rng):
        return SideAdapter(side_mode, dim, rank=rank if side_mode == "lora" else 0,
                           alpha=alpha, trainable=trainable).init_params(rng)

    if lock == "none":
        image, text = make(mode, True, rng_img), make(mode, True, rng_txt)
    elif lock == "image":
        image, text = make("identity", False, rng_img), make(mode, True, rng_txt)
    elif lock == "text":
        image, text = make(mode, True, rng_img), make("identity", False, rng_txt)
    else:
        image, text = make("identity", False, rng_img), make("full", True, rng_txt)
    return AdapterModel(image, text, sigma=sigma, sigma_trainable=sigma_trainable)


def adapt_rows(side: SideAdapter, rows: np.ndarray) -> np.ndarray:
    """Adapter forward plus unit re-normalization, in float64."""
    return normalize_rows(side.forward(np.asarray(rows, dtype=np.float64)))


def renorm_backward(u: np.ndarray, z: np.ndarray, gz: np.ndarray) -> np.ndarray:
    """Gradient through z = u / ||u|| given rows u, outputs z, and dL/dz."""
    norms = np.sqrt((u * u).sum(axis=1, keepdims=True))
    return (gz - (gz * z).sum(axis=1, keepdims=True) * z) / norms


def apply_adapter(model: AdapterModel, store: EmbeddingStore, side: str) -> EmbeddingStore:
    """Adapt a whole store and re-normalize rows; returns a new store."""
    rows = store.matrix.astype(np.float64)
    out = adapt_rows(model.side(side), rows)
    return EmbeddingStore(list(store.ids), out.astype(np.float32), store.modality)


# checkpoint layout: one JSON header line, then f32 parameter blobs in
# header-declared order (image side first, then text side, names sorted)

def save_checkpoint(model: AdapterModel) -> bytes:
    header = {
        "mode_image": model.image.mode,
        "mode_text": model.text.mode,
        "rank": max(model.image.rank, model.text.rank),
        "alpha": model.image.alpha if model.image.mode == "lora" else model.text.alpha,
        "dim": model.image.dim,
        "sigma": model.sigma,
        "params": [f"{side}.{name}" for side in ("image", "text")
                   for name, _ in sorted(model.side(side).weights.items())],
    }
    blobs = [
        np.ascontiguousarray(arr, dtype="<f4").tobytes()
        for side in ("image", "text")
        for _, arr in sorted(model.side(side).weights.items())
    ]
    return json.dumps(header, sort_keys=True).encode("utf-8") + b"\n" + b"".join(blobs)


def load_checkpoint(data: bytes, lock: str = "none") -> AdapterModel:
    nl = data.find(b"\n")
    if nl < 0:
        raise FormatError("checkpoint has no header line")
    try:
        header = json.loads(data[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"checkpoint header invalid: {e}") from None
    dim = int(header["dim"])
    rank = int(header["rank"])
    alpha = header.get("alpha")
    model = AdapterModel(
        SideAdapter(header["mode_image"], dim, rank=rank if header["mode_image"] == "lora" else 0,
                    alpha=alpha).init_params(np.random.default_rng(0)),
        SideAdapter(header["mode_text"], dim, rank=rank if header["mode_text"] == "lora" else 0,
                    alpha=alpha).init_params(np.random.default_rng(0)),
        sigma=float(header["sigma"]),
    )
    if lock != "none":
        if lock in ("image", "star"):
            model.image.trainable = False
        if lock == "text":
            model.text.trainable = False
    pos = nl + 1
    for key in header["params"]:
        side_name, pname = key.split(".", 1)
        side = model.side(side_name)
        if pname not in side.weights:
            raise FormatError(f"checkpoint parameter {key!r} does not fit the modes")
        shape = side.weights[pname].shape
        nbytes = int(np.prod(shape)) * 4
        if pos + nbytes > len(data):
            raise TruncatedFile(f"checkpoint blob for {key!r} is truncated")
        arr = np.frombuffer(data[pos:pos + nbytes], dtype="<f4").reshape(shape)
        side.weights[pname] = arr.astype(np.float64)
        pos += nbytes
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes in checkpoint")
    return model
