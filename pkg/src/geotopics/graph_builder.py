"""Semantic and geographic kNN graphs, heterogeneous graphs, normalized operators.

Neighborhoods are exhaustive (dense brute force) by design: sparsity comes
solely from top-k selection, ties break toward the lower node index, and the
directed selection is union-symmetrized (an edge survives if either endpoint
picked it). Weights: semantic = cosine similarity, geographic = 1/(1 + d_km).
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .corpus_io import Corpus, GeoCoordinate

EARTH_RADIUS_KM = 6371.0
_DEGREE_EPS = 1e-12
GRAPH_CACHE_MAGIC = b"GTGC"

RELATIONS = ("semantic", "geographic")


@dataclass
class WeightedGraph:
    """Symmetric weighted graph over post indices, one relation per instance.

    Edges are stored as parallel arrays holding *both* directions, sorted by
    (src, dst) for deterministic emission. No self-loops.
    """

    n: int
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray
    relation: str

    def __post_init__(self):
        if self.relation not in RELATIONS:
            raise ValueError(f"unknown relation {self.relation!r}")

    @property
    def edges(self) -> list[tuple[int, int, float]]:
        return list(zip(self.src.tolist(), self.dst.tolist(), self.weight.tolist()))

    def edge_set(self) -> set[tuple[int, int]]:
        return set(zip(self.src.tolist(), self.dst.tolist()))

    def to_csr(self) -> sp.csr_matrix:
        mat = sp.coo_matrix(
            (self.weight, (self.src, self.dst)), shape=(self.n, self.n)
        ).tocsr()
        mat.sort_indices()
        return mat

    def neighbors(self, i: int) -> np.ndarray:
        return self.dst[self.src == i]


@dataclass
class HeteroGraph:
    """Two relations over one shared (semantic) neighborhood support."""

    n: int
    semantic: WeightedGraph
    geographic: WeightedGraph

    def __post_init__(self):
        if self.semantic.edge_set() != self.geographic.edge_set():
            raise ValueError("hetero graph relations must share the same edge support")


@dataclass
class NormalizedAdjacency:
    """Sparse message-passing operator A_hat = D^{-1/2} (A + I) D^{-1/2}."""

    n: int
    matrix: sp.csr_matrix

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x


def cosine_similarity(u, v) -> float:
    """Cosine of the angle between two vectors; raises on zero-norm input."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError("cosine_similarity requires equal-length vectors")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("degenerate embedding: zero norm")
    return float(np.dot(u, v) / (nu * nv))


def haversine_km(p: GeoCoordinate, q: GeoCoordinate) -> float:
    """Great-circle distance between two coordinates on a 6371 km sphere."""
    return float(_haversine_matrix(
        np.array([[p.lat, p.lon]]), np.array([[q.lat, q.lon]])
    )[0, 0])


def _haversine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise haversine distances (km) between (m,2) and (k,2) degree arrays."""
    lat1 = np.radians(a[:, 0])[:, None]
    lon1 = np.radians(a[:, 1])[:, None]
    lat2 = np.radians(b[:, 0])[None, :]
    lon2 = np.radians(b[:, 1])[None, :]
    s = (np.sin((lat2 - lat1) / 2.0) ** 2
         + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2.0) ** 2)
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(s, 0.0, 1.0)))


def geo_weight(d):
    """Proximity weight 1/(1+d); strictly decreasing, range (0, 1]."""
    d = np.asarray(d, dtype=np.float64)
    if np.any(d < 0):
        raise ValueError("distance must be non-negative")
    w = 1.0 / (1.0 + d)
    return float(w) if w.ndim == 0 else w


def _check_embeddings(corpus: Corpus) -> np.ndarray:
    x = corpus.embeddings.astype(np.float64)
    norms = np.linalg.norm(x, axis=1)
    bad = np.flatnonzero(norms == 0.0)
    if bad.size:
        names = ", ".join(corpus.posts[i].id for i in bad[:5])
        raise ValueError(f"degenerate embedding: zero norm for node(s) {names}")
    return x / norms[:, None]


def topk_by_score(scores: np.ndarray, k: int) -> np.ndarray:
    """Per-row indices of the k highest scores, self excluded, ties to lower index.

    `scores` is (n, n); the diagonal is ignored. Returns (n, k) int indices in
    descending score order (stable, so equal scores keep index order).
    """
    n = scores.shape[0]
    masked = scores.copy()
    np.fill_diagonal(masked, -np.inf)
    order = np.argsort(-masked, axis=1, kind="stable")
    return order[:, :k]


def _symmetrize(n: int, topk: np.ndarray, weight_of) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Union-symmetrize a directed top-k selection into sorted edge arrays."""
    k = topk.shape[1]
    rows = np.repeat(np.arange(n), k)
    cols = topk.ravel()
    sel = sp.coo_matrix((np.ones(rows.size, dtype=bool), (rows, cols)), shape=(n, n)).tocsr()
    sel = ((sel + sel.T) > 0).tocoo()
    src, dst = sel.row, sel.col
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    return src, dst, weight_of(src, dst)


def semantic_knn_graph(corpus: Corpus, k: int) -> WeightedGraph:
    """kNN graph by cosine similarity; weights are the cosines themselves."""
    n = corpus.n
    if not 1 <= k < n:
        raise ValueError(f"k must satisfy 1 <= k < n (got k={k}, n={n})")
    xh = _check_embeddings(corpus)
    sims = xh @ xh.T
    topk = topk_by_score(sims, k)
    src, dst, w = _symmetrize(n, topk, lambda s, d: sims[s, d])
    return WeightedGraph(n=n, src=src, dst=dst, weight=w, relation="semantic")


def geographic_knn_graph(corpus: Corpus, k: int) -> WeightedGraph:
    """kNN graph by great-circle distance; weights 1/(1 + d_km)."""
    n = corpus.n
    if not 1 <= k < n:
        raise ValueError(f"k must satisfy 1 <= k < n (got k={k}, n={n})")
    dist = _haversine_matrix(corpus.coords, corpus.coords)
    topk = topk_by_score(-dist, k)
    src, dst, w = _symmetrize(n, topk, lambda s, d: geo_weight(dist[s, d]))
    return WeightedGraph(n=n, src=src, dst=dst, weight=w, relation="geographic")


def mono_hetero_graph(corpus: Corpus, k: int) -> HeteroGraph:
    """Heterogeneous graph: semantic kNN support carrying both edge types."""
    sem = semantic_knn_graph(corpus, k)
    dist = _haversine_matrix(corpus.coords, corpus.coords)
    geo = WeightedGraph(
        n=sem.n, src=sem.src.copy(), dst=sem.dst.copy(),
        weight=geo_weight(dist[sem.src, sem.dst]), relation="geographic",
    )
    return HeteroGraph(n=sem.n, semantic=sem, geographic=geo)


def normalize_adjacency(g: WeightedGraph) -> NormalizedAdjacency:
    """Self-loop renormalization A_hat = D^{-1/2}(A + I)D^{-1/2} with weighted A.

    Degrees use |w| (plus a tiny guard) so negative semantic weights cannot
    produce a non-positive degree; any node whose signed degree 1 + sum(w)
    would still be <= 0 is reduced to its self-loop.
    """
    a = sp.coo_matrix((g.weight, (g.src, g.dst)), shape=(g.n, g.n)).tocsr()
    if a.nnz:
        asym = abs(a - a.T)
        if asym.nnz and asym.max() > 1e-12:
            raise ValueError("asymmetric graph: symmetrize before normalization")
    signed_deg = 1.0 + np.asarray(a.sum(axis=1)).ravel()
    bad = np.flatnonzero(signed_deg <= 0.0)
    if bad.size:
        mask = np.ones(g.n, dtype=bool)
        mask[bad] = False
        keep = mask[g.src] & mask[g.dst]
        a = sp.coo_matrix(
            (g.weight[keep], (g.src[keep], g.dst[keep])), shape=(g.n, g.n)
        ).tocsr()
    m = (a + sp.identity(g.n, format="csr")).tocsr()
    deg = 1.0 + np.asarray(abs(a).sum(axis=1)).ravel() + _DEGREE_EPS
    d_inv_sqrt = 1.0 / np.sqrt(deg)
    a_hat = sp.diags(d_inv_sqrt) @ m @ sp.diags(d_inv_sqrt)
    a_hat = a_hat.tocsr()
    a_hat.sort_indices()
    return NormalizedAdjacency(n=g.n, matrix=a_hat)


# --- graph cache ----------------------------------------------------------


def graph_content_hash(corpus: Corpus, k: int, relation: str) -> bytes:
    """Content hash binding a cache file to (corpus, k, relation)."""
    h = hashlib.sha256()
    h.update(relation.encode())
    h.update(struct.pack("<I", k))
    h.update(np.ascontiguousarray(corpus.embeddings, dtype="<f4").tobytes())
    h.update(np.ascontiguousarray(corpus.coords, dtype="<f8").tobytes())
    return h.digest()


def save_graph_cache(graph: WeightedGraph, path: str, content_hash: bytes) -> None:
    csr = graph.to_csr()
    with open(path, "wb") as fh:
        fh.write(GRAPH_CACHE_MAGIC)
        fh.write(struct.pack("<B", RELATIONS.index(graph.relation)))
        fh.write(struct.pack("<I", graph.n))
        fh.write(content_hash)
        fh.write(struct.pack("<Q", csr.indices.size))
        fh.write(np.ascontiguousarray(csr.indptr, dtype="<u8").tobytes())
        fh.write(np.ascontiguousarray(csr.indices, dtype="<u4").tobytes())
        fh.write(np.ascontiguousarray(csr.data, dtype="<f8").tobytes())


def load_graph_cache(path: str, expected_hash: bytes = None):
    """Load a cached graph; returns None when the content hash does not match."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != GRAPH_CACHE_MAGIC:
        raise ValueError("not a graph cache file")
    (rel_idx,) = struct.unpack_from("<B", blob, 4)
    (n,) = struct.unpack_from("<I", blob, 5)
    stored_hash = blob[9:41]
    if expected_hash is not None and stored_hash != expected_hash:
        return None
    (nnz,) = struct.unpack_from("<Q", blob, 41)
    off = 49
    indptr = np.frombuffer(blob, dtype="<u8", count=n + 1, offset=off).astype(np.int64)
    off += (n + 1) * 8
    indices = np.frombuffer(blob, dtype="<u4", count=nnz, offset=off).astype(np.int64)
    off += nnz * 4
    data = np.frombuffer(blob, dtype="<f8", count=nnz, offset=off)
    csr = sp.csr_matrix((data, indices, indptr), shape=(n, n)).tocoo()
    order = np.lexsort((csr.col, csr.row))
    return WeightedGraph(
        n=n, src=csr.row[order], dst=csr.col[order],
        weight=csr.data[order], relation=RELATIONS[rel_idx],
    )
