"""Writer for the engine's EMBD corpus format.

Layout (little-endian): magic "GTE1", u32 n, u32 d, n*d float32 embeddings
row-major, n pairs of float64 (lat, lon), u64 trailer byte length, UTF-8 JSON
trailer {"ids": [...], "texts": [...] | null}. This file is the cross-package
contract; the adapter deliberately carries its own implementation instead of
importing the engine.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"GTE1"


def write_embd(path: str, ids, embeddings, coords, texts=None) -> None:
    embeddings = np.ascontiguousarray(embeddings, dtype="<f4")
    coords = np.ascontiguousarray(coords, dtype="<f8")
    n, d = embeddings.shape
    if len(ids) != n or coords.shape != (n, 2):
        raise ValueError("ids/embeddings/coords lengths disagree")
    if texts is not None and len(texts) != n:
        raise ValueError("texts length disagrees with n")
    trailer = {"ids": list(ids), "texts": list(texts) if texts is not None else None}
    blob = json.dumps(trailer, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", n, d))
        fh.write(embeddings.tobytes())
        fh.write(coords.tobytes())
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
