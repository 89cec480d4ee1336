"""Training orchestration: chunking, pseudo-label refresh, Adam, early stopping.

One epoch = refresh K-means pseudo-labels on full-corpus eval-mode embeddings,
then process every strided chunk sequentially (forward, composite loss over
that chunk's training nodes, backward, Adam step). Early stopping plateaus on
the holdout (intra - inter) metric. Everything downstream of the single
config seed is deterministic: identical (corpus, config) reproduce identical
history and bit-identical embeddings.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from . import gnn_core, losses
from .clustering import kmeans
from .corpus_io import Corpus, stride_chunks
from .graph_builder import (
    geographic_knn_graph,
    mono_hetero_graph,
    normalize_adjacency,
    semantic_knn_graph,
)
from .seeding import derive_seed

CHECKPOINT_MAGIC = b"GTCK"
CHECKPOINT_VERSION = 1

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    arch: str = "mono"
    epochs: int = 50
    lr: float = 1e-3
    weights: losses.LossWeights = field(default_factory=losses.LossWeights)
    k_graph: int = 10
    k_means: int = 15
    kmeans_seed: int = 42
    seed: int = 42
    stride: int = 1
    patience: int = 5
    min_delta: float = 1e-4
    holdout_fraction: float = 0.1
    hidden_dim: int = 256
    embed_dim: int = 128
    heads: int = 4
    dropout: float = 0.3
    fusion: str = "attention"
    halo: int = 0

    def __post_init__(self):
        if self.arch not in ("mono", "multi"):
            raise ValueError(f"unknown arch {self.arch!r}")
        if self.epochs < 0 or self.lr < 0 or self.stride < 1 or self.patience < 1:
            raise ValueError("epochs/lr must be >= 0, stride/patience >= 1")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ValueError("holdout_fraction must lie in (0, 1)")
        if self.halo < 0:
            raise ValueError("halo must be >= 0")
        if isinstance(self.weights, dict):
            self.weights = losses.LossWeights(**self.weights)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "weights" in d and isinstance(d["weights"], dict):
            d["weights"] = losses.LossWeights(**d["weights"])
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    contrast: float
    coherence: float
    align: float
    total: float
    holdout_intra: float
    holdout_inter: float
    holdout_metric: float
    skipped_anchors: int
    wall_time: float


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    chunk_logs: list = field(default_factory=list)
    stop_epoch: int = 0
    stopped_early: bool = False
    best_metric: float = float("-inf")
    config: Optional[dict] = None

    def to_jsonl(self, path: str) -> None:
        """Per-chunk loss components, one JSON object per line."""
        with open(path, "w", encoding="utf-8") as fh:
            for entry in self.chunk_logs:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")


@dataclass
class TrainResult:
    embeddings: np.ndarray
    history: TrainHistory
    params: object


# --- Adam -------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def init_like(cls, tensors: dict) -> "AdamState":
        return cls(m={k: np.zeros_like(v) for k, v in tensors.items()},
                   v={k: np.zeros_like(v) for k, v in tensors.items()})


def adam_step(tensors: dict, grads: dict, state: AdamState, lr: float) -> None:
    """Standard bias-corrected Adam update, applied in place."""
    state.t += 1
    bc1 = 1.0 - ADAM_BETA1 ** state.t
    bc2 = 1.0 - ADAM_BETA2 ** state.t
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient for tensor {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        tensors[name] -= lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)


# --- chunk plumbing ----------------------------------------------------------


@dataclass
class _ChunkData:
    core: np.ndarray        # global indices owned by this chunk
    nodes: np.ndarray       # core + halo, the graph's node set
    core_local: np.ndarray  # positions of core nodes within `nodes`
    a_sem: object
    a_geo: object
    sem_src: np.ndarray     # semantic edges, local indexing
    sem_dst: np.ndarray
    x: np.ndarray           # float64 features for `nodes`


def _halo_nodes(xhat: np.ndarray, core: np.ndarray, h: int) -> np.ndarray:
    if h == 0:
        return np.empty(0, dtype=np.int64)
    n = xhat.shape[0]
    out = np.setdiff1d(np.arange(n), core)
    if out.size == 0:
        return np.empty(0, dtype=np.int64)
    h = min(h, out.size)
    sims = xhat[core] @ xhat[out].T
    order = np.argsort(-sims, axis=1, kind="stable")[:, :h]
    return np.unique(out[order.ravel()])


def _subcorpus(corpus: Corpus, nodes: np.ndarray) -> Corpus:
    return Corpus(posts=[corpus.posts[i] for i in nodes], dim=corpus.dim)


def _prepare_chunks(corpus: Corpus, config: TrainConfig) -> list:
    x = corpus.embeddings.astype(np.float64)
    norms = np.maximum(np.linalg.norm(x, axis=1), 1e-12)
    xhat = x / norms[:, None]
    plan = stride_chunks(corpus.n, config.stride)
    chunks = []
    for idx_list in plan.chunks:
        core = np.asarray(idx_list, dtype=np.int64)
        halo = _halo_nodes(xhat, core, config.halo)
        nodes = np.concatenate([core, halo])
        nodes.sort()
        if config.k_graph >= nodes.size:
            raise ValueError(
                f"k_graph={config.k_graph} needs chunks larger than k "
                f"(chunk has {nodes.size} nodes; lower stride or k_graph)"
            )
        sub = _subcorpus(corpus, nodes)
        if config.arch == "mono":
            hg = mono_hetero_graph(sub, config.k_graph)
            sem, geo = hg.semantic, hg.geographic
        else:
            sem = semantic_knn_graph(sub, config.k_graph)
            geo = geographic_knn_graph(sub, config.k_graph)
        core_local = np.searchsorted(nodes, core)
        chunks.append(_ChunkData(
            core=core, nodes=nodes, core_local=np.sort(core_local),
            a_sem=normalize_adjacency(sem), a_geo=normalize_adjacency(geo),
            sem_src=sem.src, sem_dst=sem.dst, x=x[nodes],
        ))
    return chunks


def init_params(corpus_dim: int, config: TrainConfig):
    init_seed = derive_seed(config.seed, "init")
    if config.arch == "mono":
        return gnn_core.init_mono_params(corpus_dim, config.hidden_dim,
                                         config.embed_dim, init_seed)
    return gnn_core.init_multi_params(corpus_dim, config.hidden_dim, config.embed_dim,
                                      config.heads, config.dropout, config.fusion,
                                      init_seed)


def _eval_embeddings(chunks, params, out_dim, n) -> np.ndarray:
    z = np.empty((n, out_dim))
    for ch in chunks:
        z_c = gnn_core.model_forward(params, ch.a_sem, ch.a_geo, ch.x, training=False)
        z[ch.nodes[ch.core_local]] = z_c[ch.core_local]
    return z


def encode_corpus(corpus: Corpus, config: TrainConfig, params) -> np.ndarray:
    """Eval-mode embeddings for every node under the given parameters."""
    chunks = _prepare_chunks(corpus, config)
    out_dim = params.out_dim if isinstance(params, gnn_core.MultiParams) else params.embed_dim
    return _eval_embeddings(chunks, params, out_dim, corpus.n)


def _holdout_metric(z, assignment, holdout) -> tuple:
    sub = z[holdout]
    labs = assignment[holdout]
    try:
        pl = losses.PseudoLabels.from_assignment(sub, labs)
        intra = losses.intra_cluster_similarity(sub, pl)
        inter = losses.inter_cluster_similarity(sub, pl)
        return intra, inter, intra - inter
    except losses.UndefinedLossError:
        return float("nan"), float("nan"), float("-inf")


def train(corpus: Corpus, config: TrainConfig) -> TrainResult:
    """Train an encoder on the corpus; returns eval-mode embeddings for all nodes."""
    chunks = _prepare_chunks(corpus, config)
    params = init_params(corpus.dim, config)
    out_dim = params.out_dim if isinstance(params, gnn_core.MultiParams) else params.embed_dim
    n = corpus.n

    holdout_rng = np.random.default_rng(derive_seed(config.seed, "holdout"))
    n_hold = max(1, int(round(config.holdout_fraction * n)))
    holdout = np.sort(holdout_rng.choice(n, size=n_hold, replace=False))
    is_train = np.ones(n, dtype=bool)
    is_train[holdout] = False

    # per-chunk loss-node bookkeeping (training nodes within the chunk core)
    loss_sel = []
    positives = []
    skipped_base = []
    for ch in chunks:
        train_global = ch.nodes[is_train[ch.nodes]]
        core_train = np.intersect1d(train_global, ch.core)
        local = np.searchsorted(ch.nodes, core_train)
        sub_pos = np.full(ch.nodes.size, -1, dtype=np.int64)
        sub_pos[local] = np.arange(local.size)
        keep = (sub_pos[ch.sem_src] >= 0) & (sub_pos[ch.sem_dst] >= 0)
        pairs = np.column_stack([sub_pos[ch.sem_src[keep]], sub_pos[ch.sem_dst[keep]]])
        loss_sel.append(local)
        positives.append(pairs)
        skipped_base.append(local.size - np.unique(pairs[:, 0]).size if pairs.size else local.size)

    dropout_rng = np.random.default_rng(derive_seed(config.seed, "dropout"))
    state = AdamState.init_like(params.tensors)
    history = TrainHistory(config=config.to_dict())

    z_eval = _eval_embeddings(chunks, params, out_dim, n)
    best = float("-inf")
    bad_epochs = 0

    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        ca = kmeans(z_eval, config.k_means, config.kmeans_seed, n_init=1)
        pl_full = losses.PseudoLabels.from_assignment(z_eval, ca.labels, config.k_means)

        comp_sums = {"contrast": 0.0, "coherence": 0.0, "align": 0.0, "total": 0.0}
        for ci, ch in enumerate(chunks):
            trace = {}
            z_c = gnn_core.model_forward(
                params, ch.a_sem, ch.a_geo, ch.x,
                training=True, rng=dropout_rng, trace=trace,
            )
            sel = loss_sel[ci]
            sub_labels = losses.PseudoLabels(
                assignment=pl_full.assignment[ch.nodes[sel]],
                centroids=pl_full.centroids,
            )
            value, d_sub, comps = losses.total_loss_and_grad(
                z_c[sel], sub_labels, positives[ci], config.weights,
            )
            if not np.isfinite(value):
                raise RuntimeError(
                    f"divergence: non-finite loss at epoch {epoch}, chunk {ci}"
                )
            d_full = np.zeros_like(z_c)
            d_full[sel] = d_sub
            grads = gnn_core.model_backward(trace, d_full)
            adam_step(params.tensors, grads, state, config.lr)
            entry = {"epoch": epoch, "chunk": ci, **{k: comps[k] for k in
                                                     ("contrast", "coherence", "align", "total")}}
            history.chunk_logs.append(entry)
            for key in comp_sums:
                comp_sums[key] += comps[key]

        z_eval = _eval_embeddings(chunks, params, out_dim, n)
        h_intra, h_inter, metric = _holdout_metric(z_eval, pl_full.assignment, holdout)
        n_chunks = len(chunks)
        history.records.append(EpochRecord(
            epoch=epoch,
            contrast=comp_sums["contrast"] / n_chunks,
            coherence=comp_sums["coherence"] / n_chunks,
            align=comp_sums["align"] / n_chunks,
            total=comp_sums["total"] / n_chunks,
            holdout_intra=h_intra, holdout_inter=h_inter, holdout_metric=metric,
            skipped_anchors=int(sum(skipped_base)),
            wall_time=time.perf_counter() - t0,
        ))
        history.stop_epoch = epoch
        if metric > best + config.min_delta:
            best = metric
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                history.stopped_early = True
                break

    history.best_metric = best
    return TrainResult(embeddings=z_eval, history=history, params=params)


# --- checkpoints --------------------------------------------------------------


def save_checkpoint(path: str, params) -> None:
    """Versioned named-tensor table, little-endian f32."""
    if isinstance(params, gnn_core.MultiParams):
        meta = {"arch": "multi", "heads": params.heads,
                "dropout": params.dropout, "fusion": params.fusion}
    else:
        meta = {"arch": "mono"}
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<H", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<I", len(params.tensors)))
        for name, tensor in params.tensors.items():
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", tensor.ndim))
            for dim in tensor.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())


def load_checkpoint(path: str):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ValueError("not a checkpoint file")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    (meta_len,) = struct.unpack_from("<I", blob, 6)
    off = 10
    meta = json.loads(blob[off:off + meta_len].decode("utf-8"))
    off += meta_len
    (count,) = struct.unpack_from("<I", blob, off)
    off += 4
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off:off + name_len].decode("utf-8")
        off += name_len
        (ndim,) = struct.unpack_from("<B", blob, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(blob, dtype="<f4", count=size, offset=off) \
            .astype(np.float64).reshape(shape)
        off += size * 4
    if meta["arch"] == "mono":
        return gnn_core.MonoParams(tensors=tensors)
    return gnn_core.MultiParams(tensors=tensors, heads=meta["heads"],
                                dropout=meta["dropout"], fusion=meta["fusion"])
