"""Writer for the binary embedding store container.

Layout, all little-endian: magic ``FETAEMB1``, u32 format version (1),
u8 modality (0 image, 1 text), u32 count, u32 dim, then per id a u16
byte length plus UTF-8 bytes, then count*dim float32 values row-major.
"""

import struct

import numpy as np

from embed_exporter.errors import CorpusError

MAGIC = b"FETAEMB1"
VERSION = 1
MODALITY_CODE = {"image": 0, "text": 1}


def write_store_bytes(ids: list[str], matrix: np.ndarray, modality: str) -> bytes:
    if modality not in MODALITY_CODE:
        raise CorpusError(f"unknown modality {modality!r}")
    mat = np.ascontiguousarray(matrix, dtype="<f4")
    if mat.ndim != 2 or mat.shape[0] != len(ids):
        raise CorpusError(f"matrix shape {mat.shape} does not fit {len(ids)} ids")
    if len(set(ids)) != len(ids):
        raise CorpusError("duplicate ids in export")
    if not np.isfinite(mat).all():
        raise CorpusError("non-finite embedding values")
    parts = [MAGIC, struct.pack("<IBII", VERSION, MODALITY_CODE[modality],
                                len(ids), mat.shape[1])]
    for i in ids:
        enc = i.encode("utf-8")
        parts.append(struct.pack("<H", len(enc)))
        parts.append(enc)
    parts.append(mat.tobytes())
    return b"".join(parts)
