"""Built-in dual encoders.

Each encoder maps raster files and text strings into one shared
d-dimensional space. The bundled ones are deliberately lightweight and
fully deterministic: hashed character trigrams on the text side, pooled
grayscale statistics pushed through a fixed random projection on the
image side. Real models plug in by registering another factory.
"""

import hashlib
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from embed_exporter.errors import EncoderLoadError, MissingRaster

_GRID = 4
_RESIZE = 32


def _unit(v: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(v))
    if n == 0.0:
        out = np.zeros_like(v)
        out[0] = 1.0
        return out
    return v / n


class HashGridEncoder:
    """Trigram-hash text features and grid-statistic image features."""

    def __init__(self, dim: int, seed: int = 1234):
        self.dim = dim
        feat = _GRID * _GRID * 2 + 2
        rng = np.random.default_rng(seed)
        self._proj = rng.standard_normal((feat, dim)) / np.sqrt(feat)

    def encode_text(self, text: str) -> np.ndarray:
        v = np.zeros(self.dim)
        padded = f"  {text.lower()} "
        for i in range(len(padded) - 2):
            h = hashlib.md5(padded[i:i + 3].encode("utf-8")).digest()
            bucket = int.from_bytes(h[:4], "little") % self.dim
            sign = 1.0 if h[4] & 1 else -1.0
            v[bucket] += sign
        return _unit(v)

    def encode_image(self, path: Path) -> np.ndarray:
        try:
            with Image.open(path) as im:
                gray = im.convert("L").resize((_RESIZE, _RESIZE), Image.BILINEAR)
        except (OSError, UnidentifiedImageError):
            raise MissingRaster(f"cannot read raster {path}") from None
        px = np.asarray(gray, dtype=np.float64) / 255.0
        cells = px.reshape(_GRID, _RESIZE // _GRID, _GRID, _RESIZE // _GRID)
        feat = np.concatenate([
            cells.mean(axis=(1, 3)).ravel(),
            cells.std(axis=(1, 3)).ravel(),
            [px.mean(), px.std()],
        ])
        return _unit(feat @ self._proj)


_REGISTRY = {
    "hashgrid64": lambda: HashGridEncoder(64),
    "hashgrid16": lambda: HashGridEncoder(16),
}


def register_encoder(name: str, factory) -> None:
    """Make a factory available to load_encoder under the given name."""
    _REGISTRY[name] = factory


def load_encoder(name: str):
    try:
        factory = _REGISTRY[name]
    except KeyError:
        known = ", ".join(sorted(_REGISTRY))
        raise EncoderLoadError(f"no encoder named {name!r} (have: {known})") from None
    return factory()
