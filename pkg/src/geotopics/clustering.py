"""K-means (training pseudo-labels) and spectral clustering (post hoc topics).

Both algorithms are deterministic for a fixed (data, k, seed): k-means++
seeding draws from the given seed, Lloyd iterations run to an assignment
fixpoint (or 300 iterations) with a farthest-point rule for empty clusters,
and the spectral pipeline uses a dense symmetric eigendecomposition up to
4096 nodes and a seeded Lanczos solver beyond that.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg

from . import losses
from .graph_builder import topk_by_score

DENSE_EIG_LIMIT = 4096
KMEANS_MAX_ITER = 300


@dataclass
class ClusterAssignment:
    """Per-node labels; centroids/inertia only populated by k-means."""

    labels: np.ndarray
    k: int
    centroids: Optional[np.ndarray] = None
    inertia: Optional[float] = None
    empty_clusters: list = field(default_factory=list)
    inertia_history: list = field(default_factory=list)


def _plus_plus_init(z, k, rng):
    n = z.shape[0]
    centers = np.empty((k, z.shape[1]))
    chosen = np.full(k, -1)
    first = int(rng.integers(n))
    centers[0] = z[first]
    chosen[0] = first
    d2 = ((z - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # all remaining mass on already-chosen points: lowest unused index
            remaining = sorted(set(range(n)) - set(chosen[:c].tolist()))
            idx = remaining[0]
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[c] = z[idx]
        chosen[c] = idx
        d2 = np.minimum(d2, ((z - centers[c]) ** 2).sum(axis=1))
    return centers


def _lloyd(z, k, rng, max_iter):
    n = z.shape[0]
    centers = _plus_plus_init(z, k, rng)
    labels = None
    history = []
    for _ in range(max_iter):
        dist2 = _dist2_blocked(z, centers)
        new_labels = dist2.argmin(axis=1)
        history.append(float(dist2[np.arange(n), new_labels].sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, z)
        nonempty = counts > 0
        centers[nonempty] = sums[nonempty] / counts[nonempty, None]
        empties = np.flatnonzero(~nonempty)
        if empties.size:
            point_d2 = ((z - centers[labels]) ** 2).sum(axis=1)
            order = np.argsort(-point_d2, kind="stable")
            used = set()
            for c in empties:
                pick = next(int(i) for i in order if int(i) not in used)
                used.add(pick)
                centers[c] = z[pick]
    dist2 = _dist2_blocked(z, centers)
    labels = dist2.argmin(axis=1)
    inertia = float(dist2[np.arange(n), labels].sum())
    return labels, centers, inertia, history


def kmeans(z, k: int, seed: int, max_iter: int = KMEANS_MAX_ITER,
           n_init: int = 10) -> ClusterAssignment:
    """Lloyd's algorithm, k-means++ seeded from `seed`, best of `n_init` restarts.

    Empty clusters re-seed at the point farthest from its currently assigned
    centroid (ties to lower index). Deterministic for fixed (z, k, seed): the
    restarts consume one seeded stream and ties keep the earliest run.
    """
    z = np.asarray(z, dtype=np.float64)
    n = z.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if n < k:
        raise ValueError(f"need n >= k (got n={n}, k={k})")
    if n_init < 1:
        raise ValueError("n_init must be >= 1")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        run = _lloyd(z, k, rng, max_iter)
        if best is None or run[2] < best[2]:
            best = run
    labels, centers, inertia, history = best
    final_counts = np.bincount(labels, minlength=k)
    return ClusterAssignment(
        labels=labels, k=k, centroids=centers, inertia=inertia,
        empty_clusters=np.flatnonzero(final_counts == 0).tolist(),
        inertia_history=history,
    )


def _dist2_blocked(z, centers, block=4096):
    n = z.shape[0]
    out = np.empty((n, centers.shape[0]))
    c_sq = (centers ** 2).sum(axis=1)
    for start in range(0, n, block):
        zz = z[start:start + block]
        out[start:start + block] = (
            (zz ** 2).sum(axis=1)[:, None] - 2.0 * zz @ centers.T + c_sq[None, :]
        )
    np.maximum(out, 0.0, out=out)
    return out


def cosine_affinity(z, k_aff: int = 10) -> sp.csr_matrix:
    """Symmetric kNN affinity with shifted-cosine weights (1 + cos)/2 in [0, 1]."""
    z = np.asarray(z, dtype=np.float64)
    n = z.shape[0]
    k_aff = min(k_aff, n - 1)
    norms = np.maximum(np.linalg.norm(z, axis=1), 1e-12)
    zhat = z / norms[:, None]
    cos = zhat @ zhat.T
    topk = topk_by_score(cos, k_aff)
    rows = np.repeat(np.arange(n), k_aff)
    cols = topk.ravel()
    vals = (1.0 + cos[rows, cols]) / 2.0
    a = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    a = a.maximum(a.T)
    a.setdiag(0.0)
    a.eliminate_zeros()
    return a


def _bottom_eigenvectors(lap: sp.csr_matrix, k: int, seed: int):
    n = lap.shape[0]
    if n <= DENSE_EIG_LIMIT:
        vals, vecs = scipy.linalg.eigh(lap.toarray())
        return vals[:k], vecs[:, :k]
    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(n)
    try:
        vals, vecs = sp.linalg.eigsh(lap, k=k, which="SA", v0=v0, tol=1e-8)
    except sp.linalg.ArpackNoConvergence as exc:
        partial = exc.eigenvalues
        residual = float("nan")
        if partial is not None and len(partial):
            v = exc.eigenvectors[:, 0]
            residual = float(np.linalg.norm(lap @ v - partial[0] * v))
        raise RuntimeError(f"eigensolver failure (residual norm {residual})") from exc
    order = np.argsort(vals)
    return vals[order], vecs[:, order]


def spectral_clustering(z, k: int, seed: int, k_aff: int = 10) -> ClusterAssignment:
    """Normalized spectral clustering on a shifted-cosine kNN affinity.

    L_sym = I - D^{-1/2} A D^{-1/2}; bottom-k eigenvectors, row-normalized,
    then k-means with the given seed on the spectral embedding.
    """
    z = np.asarray(z, dtype=np.float64)
    n = z.shape[0]
    if n <= k:
        raise ValueError(f"need n > k (got n={n}, k={k})")
    if k == 1:
        return ClusterAssignment(labels=np.zeros(n, dtype=np.int64), k=1)
    a = cosine_affinity(z, k_aff)
    deg = np.asarray(a.sum(axis=1)).ravel()
    d_inv_sqrt = 1.0 / np.sqrt(np.maximum(deg, 1e-12))
    lap = sp.identity(n, format="csr") - sp.diags(d_inv_sqrt) @ a @ sp.diags(d_inv_sqrt)
    _, vecs = _bottom_eigenvectors(lap.tocsr(), k, seed)
    row_norm = np.linalg.norm(vecs, axis=1, keepdims=True)
    embedding = np.divide(vecs, row_norm, out=np.zeros_like(vecs), where=row_norm > 0)
    inner = kmeans(embedding, k, seed)
    return ClusterAssignment(labels=inner.labels, k=k,
                             empty_clusters=inner.empty_clusters)


def cluster_metrics(z, assignment: ClusterAssignment) -> dict:
    """Inter/intra cosine metrics (same formulas the coherence loss uses)."""
    labels = losses.PseudoLabels.from_assignment(np.asarray(z, dtype=np.float64),
                                                 assignment.labels, assignment.k)
    return {
        "intra": losses.intra_cluster_similarity(z, labels),
        "inter": losses.inter_cluster_similarity(z, labels),
    }


def write_assignment_csv(path: str, ids, assignment: ClusterAssignment) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "cluster"])
        for pid, lab in zip(ids, assignment.labels):
            writer.writerow([pid, int(lab)])


def read_assignment_csv(path: str) -> dict:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out[row["id"]] = int(row["cluster"])
    return out


def write_metrics_json(path: str, metrics: dict, k: int, method: str, seed: int) -> None:
    payload = {"inter": metrics["inter"], "intra": metrics["intra"],
               "k": k, "method": method, "seed": seed}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
