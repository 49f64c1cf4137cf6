"""Bit-exact binary container for id-indexed embedding matrices.

Layout, little-endian: magic "FETAEMB1", version u32 = 1, modality u8
(0 = image, 1 = text), count u32, dim u32, then count ids as
[u16 byte-length, UTF-8 bytes], then the count x dim f32 matrix in
row-major order. Values are stored in 32 bits; all downstream math
promotes to 64 bits.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from docmil.errors import (
    DuplicateId,
    FormatError,
    MissingEmbedding,
    TruncatedFile,
    ZeroNormRow,
)

MAGIC = b"FETAEMB1"
VERSION = 1
_MODALITY_CODE = {"image": 0, "text": 1}
_MODALITY_NAME = {v: k for k, v in _MODALITY_CODE.items()}


@dataclass(eq=False)
class EmbeddingStore:
    ids: list[str]
    matrix: np.ndarray  # (n, d) float32
    modality: str

    def __post_init__(self):
        if self.modality not in _MODALITY_CODE:
            raise FormatError(f"unknown modality {self.modality!r}")
        m = np.asarray(self.matrix, dtype=np.float32)
        if m.ndim != 2 or m.shape[1] < 1:
            raise FormatError(f"matrix must be 2-d with dim >= 1, got {m.shape}")
        if m.shape[0] != len(self.ids):
            raise FormatError(f"{len(self.ids)} ids but {m.shape[0]} rows")
        if len(set(self.ids)) != len(self.ids):
            raise DuplicateId("store ids are not unique")
        if not np.isfinite(m).all():
            raise FormatError("matrix contains non-finite values")
        self.matrix = m
        self._index = {i: k for k, i in enumerate(self.ids)}

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def row(self, id: str) -> np.ndarray:
        """Row as float64; raises MissingEmbedding for an unknown id."""
        k = self._index.get(id)
        if k is None:
            raise MissingEmbedding(f"{self.modality} id {id!r} has no embedding")
        return self.matrix[k].astype(np.float64)

    def rows(self, ids: list[str]) -> np.ndarray:
        idx = []
        for i in ids:
            k = self._index.get(i)
            if k is None:
                raise MissingEmbedding(f"{self.modality} id {i!r} has no embedding")
            idx.append(k)
        return self.matrix[idx].astype(np.float64)

    def has(self, id: str) -> bool:
        return id in self._index


def write_store(store: EmbeddingStore) -> bytes:
    n, d = store.matrix.shape
    parts = [MAGIC, struct.pack("<IBII", VERSION, _MODALITY_CODE[store.modality], n, d)]
    for i in store.ids:
        enc = i.encode("utf-8")
        if len(enc) > 0xFFFF:
            raise FormatError(f"id too long to encode: {i[:32]!r}...")
        parts.append(struct.pack("<H", len(enc)))
        parts.append(enc)
    mat = np.ascontiguousarray(store.matrix, dtype="<f4")
    parts.append(mat.tobytes())
    return b"".join(parts)


def read_store(data: bytes) -> EmbeddingStore:
    """Parse store bytes; strict about magic, version, and exact length."""
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise TruncatedFile(f"ran out of bytes reading {what}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    if take(8, "magic") != MAGIC:
        raise FormatError("bad magic")
    version, mod_code, count, dim = struct.unpack("<IBII", take(13, "header"))
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    if mod_code not in _MODALITY_NAME:
        raise FormatError(f"unknown modality code {mod_code}")
    if dim < 1:
        raise FormatError("dim must be >= 1")
    ids = []
    for k in range(count):
        (ln,) = struct.unpack("<H", take(2, f"id[{k}] length"))
        ids.append(take(ln, f"id[{k}]").decode("utf-8"))
    raw = take(count * dim * 4, "matrix")
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes after matrix")
    mat = np.frombuffer(raw, dtype="<f4").reshape(count, dim).copy()
    return EmbeddingStore(ids, mat, _MODALITY_NAME[mod_code])


def l2_normalize(store: EmbeddingStore) -> EmbeddingStore:
    """Scale every row to unit L2 norm (computed in float64)."""
    mat = store.matrix.astype(np.float64)
    norms = np.sqrt((mat * mat).sum(axis=1))
    for i, nrm in zip(store.ids, norms):
        if nrm == 0.0:
            raise ZeroNormRow(f"row {i!r} has zero norm")
    out = (mat / norms[:, None]).astype(np.float32)
    return EmbeddingStore(list(store.ids), out, store.modality)


def normalize_rows(mat: np.ndarray) -> np.ndarray:
    """Float64 row normalization for in-memory matrices."""
    norms = np.sqrt((mat * mat).sum(axis=1, keepdims=True))
    if (norms == 0.0).any():
        raise ZeroNormRow("matrix has a zero-norm row")
    return mat / norms
