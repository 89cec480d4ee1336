"""Corpus loading, validation, serialization, and strided chunking.

Two on-disk formats are supported:

* JSONL — one object per line:
  ``{"id": str, "lat": f64, "lon": f64, "embedding": [f64 x d], "text": str?}``
* EMBD — binary, little-endian: magic ``GTE1``, u32 n, u32 d, n*d f32
  embeddings row-major, n pairs of f64 (lat, lon), then a u64 trailer length
  followed by a UTF-8 JSON trailer carrying ids and optional texts.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

EMBD_MAGIC = b"GTE1"


class CorpusError(ValueError):
    """Raised for malformed, inconsistent, or out-of-range corpus data."""


@dataclass(frozen=True)
class GeoCoordinate:
    """A WGS-style latitude/longitude pair in degrees."""

    lat: float
    lon: float

    def __post_init__(self):
        if not (np.isfinite(self.lat) and np.isfinite(self.lon)):
            raise CorpusError("coordinate out of range: non-finite lat/lon")
        if not -90.0 <= self.lat <= 90.0:
            raise CorpusError(f"coordinate out of range: lat={self.lat}")
        if not -180.0 <= self.lon <= 180.0:
            raise CorpusError(f"coordinate out of range: lon={self.lon}")


@dataclass
class Post:
    """One social-media post: id, semantic embedding, coordinate, optional text."""

    id: str
    embedding: np.ndarray
    coord: GeoCoordinate
    text: Optional[str] = None

    def __post_init__(self):
        emb = np.asarray(self.embedding, dtype=np.float32)
        if emb.ndim != 1 or emb.size < 1:
            raise CorpusError(f"post {self.id!r}: embedding must be a non-empty vector")
        if not np.all(np.isfinite(emb)):
            raise CorpusError(f"post {self.id!r}: embedding has NaN/Inf entries")
        self.embedding = emb


@dataclass
class Corpus:
    """An ordered collection of posts sharing one embedding dimensionality."""

    posts: list[Post]
    dim: int
    _embeddings: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    _coords: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not self.posts:
            raise CorpusError("empty corpus")
        if self.dim < 1:
            raise CorpusError("dim must be >= 1")
        seen = set()
        for p in self.posts:
            if p.embedding.shape[0] != self.dim:
                raise CorpusError(
                    f"dimension mismatch: post {p.id!r} has d={p.embedding.shape[0]}, "
                    f"corpus d={self.dim}"
                )
            if p.id in seen:
                raise CorpusError(f"duplicate id {p.id!r}")
            seen.add(p.id)

    def __len__(self) -> int:
        return len(self.posts)

    @property
    def n(self) -> int:
        return len(self.posts)

    @property
    def ids(self) -> list[str]:
        return [p.id for p in self.posts]

    @property
    def embeddings(self) -> np.ndarray:
        """(n, d) float32 matrix, row order = post order."""
        if self._embeddings is None:
            self._embeddings = np.stack([p.embedding for p in self.posts])
        return self._embeddings

    @property
    def coords(self) -> np.ndarray:
        """(n, 2) float64 matrix of (lat, lon)."""
        if self._coords is None:
            self._coords = np.array(
                [(p.coord.lat, p.coord.lon) for p in self.posts], dtype=np.float64
            )
        return self._coords

    @property
    def has_text(self) -> bool:
        return any(p.text is not None for p in self.posts)


@dataclass
class ChunkPlan:
    """Strided partition of corpus indices: chunk i holds indices i, i+s, i+2s, ..."""

    stride: int
    chunks: list[list[int]]


def stride_chunks(n: int, s: int) -> ChunkPlan:
    """Partition indices 0..n-1 into s interleaved chunks, chunk_i = range(i, n, s).

    Chunks are 0-based and disjoint; every index appears in exactly one chunk.
    """
    if s < 1 or s > n:
        raise ValueError(f"stride must satisfy 1 <= s <= n (got s={s}, n={n})")
    return ChunkPlan(stride=s, chunks=[list(range(i, n, s)) for i in range(s)])


# --- JSONL ---------------------------------------------------------------


def _post_from_record(rec: dict, lineno: int) -> Post:
    try:
        pid = rec["id"]
        lat = float(rec["lat"])
        lon = float(rec["lon"])
        emb = rec["embedding"]
    except (KeyError, TypeError, ValueError) as exc:
        raise CorpusError(f"malformed record at line {lineno}: {exc}") from exc
    if not isinstance(pid, str):
        raise CorpusError(f"malformed record at line {lineno}: id must be a string")
    text = rec.get("text")
    if text is not None and not isinstance(text, str):
        raise CorpusError(f"malformed record at line {lineno}: text must be a string")
    return Post(id=pid, embedding=np.asarray(emb, dtype=np.float32),
                coord=GeoCoordinate(lat, lon), text=text)


def _load_jsonl(path: str) -> Corpus:
    posts = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"malformed record at line {lineno}: {exc}") from exc
            posts.append(_post_from_record(rec, lineno))
    if not posts:
        raise CorpusError("empty corpus")
    return Corpus(posts=posts, dim=posts[0].embedding.shape[0])


def _write_jsonl(corpus: Corpus, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in corpus.posts:
            rec = {
                "id": p.id,
                "lat": p.coord.lat,
                "lon": p.coord.lon,
                "embedding": [float(x) for x in p.embedding],
            }
            if p.text is not None:
                rec["text"] = p.text
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


# --- EMBD binary ---------------------------------------------------------


def _write_embd(corpus: Corpus, path: str) -> None:
    n, d = corpus.n, corpus.dim
    texts = [p.text for p in corpus.posts]
    trailer = {"ids": corpus.ids, "texts": texts if any(t is not None for t in texts) else None}
    trailer_bytes = json.dumps(trailer, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(EMBD_MAGIC)
        fh.write(struct.pack("<II", n, d))
        fh.write(np.ascontiguousarray(corpus.embeddings, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(corpus.coords, dtype="<f8").tobytes())
        fh.write(struct.pack("<Q", len(trailer_bytes)))
        fh.write(trailer_bytes)


def _load_embd(path: str) -> Corpus:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != EMBD_MAGIC:
        raise CorpusError(f"not an EMBD file (bad magic {blob[:4]!r})")
    if len(blob) < 12:
        raise CorpusError("truncated EMBD header")
    n, d = struct.unpack_from("<II", blob, 4)
    off = 12
    emb_bytes = n * d * 4
    coord_bytes = n * 16
    if len(blob) < off + emb_bytes + coord_bytes + 8:
        raise CorpusError("truncated EMBD payload")
    emb = np.frombuffer(blob, dtype="<f4", count=n * d, offset=off).reshape(n, d)
    off += emb_bytes
    coords = np.frombuffer(blob, dtype="<f8", count=n * 2, offset=off).reshape(n, 2)
    off += coord_bytes
    (trailer_len,) = struct.unpack_from("<Q", blob, off)
    off += 8
    if len(blob) != off + trailer_len:
        raise CorpusError("EMBD trailer length does not match file size")
    try:
        trailer = json.loads(blob[off:].decode("utf-8"))
        ids = trailer["ids"]
        texts = trailer.get("texts")
    except (json.JSONDecodeError, UnicodeDecodeError, KeyError, TypeError) as exc:
        raise CorpusError(f"malformed EMBD trailer: {exc}") from exc
    if len(ids) != n or (texts is not None and len(texts) != n):
        raise CorpusError("EMBD trailer id/text count does not match n")
    posts = []
    for i in range(n):
        posts.append(Post(
            id=ids[i],
            embedding=emb[i].copy(),
            coord=GeoCoordinate(float(coords[i, 0]), float(coords[i, 1])),
            text=None if texts is None else texts[i],
        ))
    return Corpus(posts=posts, dim=d)


# --- public API ----------------------------------------------------------


def load_corpus(path: str, format: str = None) -> Corpus:
    """Load and validate a corpus; record order is preserved.

    `format` is "jsonl" or "embd"; when omitted it is inferred from the file
    extension.
    """
    fmt = format or ("embd" if str(path).endswith(".embd") else "jsonl")
    if fmt == "jsonl":
        return _load_jsonl(path)
    if fmt == "embd":
        return _load_embd(path)
    raise ValueError(f"unknown corpus format {fmt!r}")


def write_corpus(corpus: Corpus, path: str, format: str = None) -> None:
    """Write a corpus so that load_corpus(path) round-trips every field."""
    if not corpus.posts:
        raise CorpusError("empty corpus")
    fmt = format or ("embd" if str(path).endswith(".embd") else "jsonl")
    if fmt == "jsonl":
        _write_jsonl(corpus, path)
    elif fmt == "embd":
        _write_embd(corpus, path)
    else:
        raise ValueError(f"unknown corpus format {fmt!r}")


def corpus_from_arrays(ids, embeddings, coords, texts=None) -> Corpus:
    """Assemble a corpus from parallel arrays (ids, (n,d) embeddings, (n,2) coords)."""
    embeddings = np.asarray(embeddings, dtype=np.float32)
    coords = np.asarray(coords, dtype=np.float64)
    posts = []
    for i, pid in enumerate(ids):
        posts.append(Post(
            id=pid,
            embedding=embeddings[i],
            coord=GeoCoordinate(float(coords[i, 0]), float(coords[i, 1])),
            text=None if texts is None else texts[i],
        ))
    return Corpus(posts=posts, dim=embeddings.shape[1])
