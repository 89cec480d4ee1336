"""Forward and backward passes for the MonoGraph and MultiGraph encoders.

The architectures are fixed (two GCN layers per relation/branch, optional
dropout + layer norm, node-level multi-head cross-attention fusion), so
reverse-mode gradients come from an explicit trace of each forward pass
rather than a generic autodiff graph.

Attention is applied per node over a length-1 sequence: the softmax over a
single logit is identically 1, so the fused output reduces to the value/output
projection of the semantic branch and W_Q/W_K receive exactly zero gradient.
That degeneracy is deliberate and tested, not hidden.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph_builder import HeteroGraph, NormalizedAdjacency, WeightedGraph, normalize_adjacency

LN_EPS = 1e-5

FUSIONS = ("attention", "concat", "concat_mlp")


@dataclass
class GcnLayer:
    """One graph convolution: X -> act(A_hat X W)."""

    weight: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ("relu", "none"):
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class MonoParams:
    """Per-relation GCN weights for the 2-layer heterogeneous encoder."""

    tensors: dict

    @property
    def embed_dim(self) -> int:
        return self.tensors["sem2"].shape[1]


@dataclass
class MultiParams:
    """Branch GCN weights, layer-norm parameters, and fusion projections."""

    tensors: dict
    heads: int
    dropout: float
    fusion: str = "attention"

    def __post_init__(self):
        if self.fusion not in FUSIONS:
            raise ValueError(f"unknown fusion {self.fusion!r}")
        if self.fusion == "attention" and self.embed_dim % self.heads != 0:
            raise ValueError(
                f"embed_dim {self.embed_dim} not divisible by heads {self.heads}"
            )

    @property
    def embed_dim(self) -> int:
        return self.tensors["sem2"].shape[1]

    @property
    def out_dim(self) -> int:
        return 2 * self.embed_dim if self.fusion == "concat" else self.embed_dim


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_mono_params(d_in: int, hidden_dim: int, embed_dim: int, seed: int) -> MonoParams:
    rng = np.random.default_rng(seed)
    t = {
        "sem1": glorot(rng, d_in, hidden_dim),
        "geo1": glorot(rng, d_in, hidden_dim),
        "sem2": glorot(rng, hidden_dim, embed_dim),
        "geo2": glorot(rng, hidden_dim, embed_dim),
    }
    return MonoParams(tensors=t)


def init_multi_params(d_in: int, hidden_dim: int, embed_dim: int, heads: int,
                      dropout: float, fusion: str, seed: int) -> MultiParams:
    rng = np.random.default_rng(seed)
    t = {}
    for branch in ("sem", "geo"):
        t[f"{branch}1"] = glorot(rng, d_in, hidden_dim)
        t[f"{branch}2"] = glorot(rng, hidden_dim, embed_dim)
        t[f"ln1_{branch}_gain"] = np.ones(hidden_dim)
        t[f"ln1_{branch}_bias"] = np.zeros(hidden_dim)
        t[f"ln2_{branch}_gain"] = np.ones(embed_dim)
        t[f"ln2_{branch}_bias"] = np.zeros(embed_dim)
    if fusion == "attention":
        for name in ("wq", "wk", "wv", "wo"):
            t[name] = glorot(rng, embed_dim, embed_dim)
    elif fusion == "concat_mlp":
        t["fuse1"] = glorot(rng, 2 * embed_dim, embed_dim)
        t["fuse2"] = glorot(rng, embed_dim, embed_dim)
    return MultiParams(tensors=t, heads=heads, dropout=dropout, fusion=fusion)


def zero_gradients(params) -> dict:
    return {k: np.zeros_like(v) for k, v in params.tensors.items()}


# --- primitive layers ------------------------------------------------------


def gcn_layer_forward(a_hat: NormalizedAdjacency, x: np.ndarray, layer: GcnLayer) -> np.ndarray:
    """One message-passing step: act(A_hat X W)."""
    if x.shape[1] != layer.weight.shape[0]:
        raise ValueError(
            f"dimension mismatch: features d={x.shape[1]}, weight expects {layer.weight.shape[0]}"
        )
    pre = a_hat.apply(x) @ layer.weight
    return np.maximum(pre, 0.0) if layer.activation == "relu" else pre


def layer_norm_forward(x, gain, bias):
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv
    return xhat * gain + bias, (xhat, inv, gain)


def layer_norm_backward(dy, cache):
    xhat, inv, gain = cache
    dgain = (dy * xhat).sum(axis=0)
    dbias = dy.sum(axis=0)
    dxhat = dy * gain
    dx = inv * (
        dxhat
        - dxhat.mean(axis=1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
    )
    return dx, dgain, dbias


def draw_dropout_mask(rng: np.random.Generator, shape, rate: float) -> np.ndarray:
    return (rng.random(shape) >= rate).astype(np.float64)


# --- MonoGraph --------------------------------------------------------------


def mono_forward_ops(a_sem: NormalizedAdjacency, a_geo: NormalizedAdjacency,
                     x: np.ndarray, params: MonoParams, trace: dict = None) -> np.ndarray:
    """Two layers of summed relation-specific convolutions with ReLU."""
    t = params.tensors
    h = x
    for layer in (1, 2):
        axs = a_sem.apply(h)
        axg = a_geo.apply(h)
        pre = axs @ t[f"sem{layer}"] + axg @ t[f"geo{layer}"]
        out = np.maximum(pre, 0.0)
        if trace is not None:
            trace[f"axs{layer}"] = axs
            trace[f"axg{layer}"] = axg
            trace[f"mask{layer}"] = pre > 0
        h = out
    if trace is not None:
        trace["a_sem"] = a_sem
        trace["a_geo"] = a_geo
        trace["params"] = params
    return h


def mono_forward(g: HeteroGraph, x: np.ndarray, params: MonoParams) -> np.ndarray:
    return mono_forward_ops(
        normalize_adjacency(g.semantic), normalize_adjacency(g.geographic), x, params
    )


def mono_backward(trace: dict, d_out: np.ndarray) -> dict:
    t = trace["params"].tensors
    a_sem, a_geo = trace["a_sem"], trace["a_geo"]
    grads = {}
    dh = d_out
    for layer in (2, 1):
        dpre = dh * trace[f"mask{layer}"]
        grads[f"sem{layer}"] = trace[f"axs{layer}"].T @ dpre
        grads[f"geo{layer}"] = trace[f"axg{layer}"].T @ dpre
        if layer > 1:
            dh = a_sem.apply(dpre @ t[f"sem{layer}"].T) + a_geo.apply(dpre @ t[f"geo{layer}"].T)
    return grads


# --- MultiGraph branches ----------------------------------------------------


def _branch_forward(a_hat, x, params, branch, training, masks, trace):
    t = params.tensors
    ax1 = a_hat.apply(x)
    pre1 = ax1 @ t[f"{branch}1"]
    act1 = np.maximum(pre1, 0.0)
    if training and params.dropout > 0.0:
        mask = masks[branch]
        dropped = act1 * mask / (1.0 - params.dropout)
    else:
        mask = None
        dropped = act1
    n1, ln1_cache = layer_norm_forward(dropped, t[f"ln1_{branch}_gain"], t[f"ln1_{branch}_bias"])
    ax2 = a_hat.apply(n1)
    pre2 = ax2 @ t[f"{branch}2"]
    act2 = np.maximum(pre2, 0.0)
    n2, ln2_cache = layer_norm_forward(act2, t[f"ln2_{branch}_gain"], t[f"ln2_{branch}_bias"])
    if trace is not None:
        trace[branch] = {
            "a_hat": a_hat, "ax1": ax1, "mask1": pre1 > 0, "drop_mask": mask,
            "ln1": ln1_cache, "ax2": ax2, "mask2": pre2 > 0, "ln2": ln2_cache,
        }
    return n2


def _branch_backward(trace_b, dn2, params, branch, training, grads):
    t = params.tensors
    da2, dg2, db2 = layer_norm_backward(dn2, trace_b["ln2"])
    grads[f"ln2_{branch}_gain"] = dg2
    grads[f"ln2_{branch}_bias"] = db2
    dpre2 = da2 * trace_b["mask2"]
    grads[f"{branch}2"] = trace_b["ax2"].T @ dpre2
    dn1 = trace_b["a_hat"].apply(dpre2 @ t[f"{branch}2"].T)
    dd1, dg1, db1 = layer_norm_backward(dn1, trace_b["ln1"])
    grads[f"ln1_{branch}_gain"] = dg1
    grads[f"ln1_{branch}_bias"] = db1
    if training and trace_b["drop_mask"] is not None:
        da1 = dd1 * trace_b["drop_mask"] / (1.0 - params.dropout)
    else:
        da1 = dd1
    dpre1 = da1 * trace_b["mask1"]
    grads[f"{branch}1"] = trace_b["ax1"].T @ dpre1


def multi_branch_forward_ops(a_sem, a_geo, x, params: MultiParams, training=False,
                             rng: np.random.Generator = None, dropout_masks: dict = None,
                             trace: dict = None):
    """Both branch encoders; returns (semantic output, geographic output).

    In training mode the dropout masks come from `rng` unless `dropout_masks`
    replays recorded ones.
    """
    masks = None
    if training and params.dropout > 0.0:
        hidden = params.tensors["sem1"].shape[1]
        if dropout_masks is not None:
            masks = dropout_masks
        else:
            if rng is None:
                raise ValueError("training-mode forward needs an rng or recorded masks")
            masks = {b: draw_dropout_mask(rng, (x.shape[0], hidden), params.dropout)
                     for b in ("sem", "geo")}
    if trace is not None:
        trace["training"] = training
        trace["params"] = params
        trace["masks"] = masks
    x_s = _branch_forward(a_sem, x, params, "sem", training, masks, trace)
    x_g = _branch_forward(a_geo, x, params, "geo", training, masks, trace)
    return x_s, x_g


def multi_branch_forward(g_s: WeightedGraph, g_g: WeightedGraph, x, params: MultiParams,
                         training=False, rng=None, dropout_masks=None):
    return multi_branch_forward_ops(
        normalize_adjacency(g_s), normalize_adjacency(g_g), x, params,
        training=training, rng=rng, dropout_masks=dropout_masks,
    )


# --- fusion -----------------------------------------------------------------


def attention_head_weights(x_g, x_s, params: MultiParams) -> np.ndarray:
    """Literal per-node, per-head softmax weights (always exactly 1 for length-1)."""
    t = params.tensors
    n = x_g.shape[0]
    dk = params.embed_dim // params.heads
    q = (x_g @ t["wq"]).reshape(n, params.heads, dk)
    k = (x_s @ t["wk"]).reshape(n, params.heads, dk)
    logits = (q * k).sum(axis=2) / np.sqrt(dk)
    # softmax over a sequence axis of length 1
    shifted = logits - logits
    return np.exp(shifted) / np.exp(shifted)


def cross_attention_fuse(x_g, x_s, params: MultiParams, trace: dict = None) -> np.ndarray:
    """Node-level multi-head attention: geographic queries, semantic keys/values."""
    t = params.tensors
    n = x_g.shape[0]
    dk = params.embed_dim // params.heads
    v = x_s @ t["wv"]
    att = attention_head_weights(x_g, x_s, params)
    head_out = att[:, :, None] * v.reshape(n, params.heads, dk)
    concat = head_out.reshape(n, params.embed_dim)
    z = concat @ t["wo"]
    if trace is not None:
        trace["fusion"] = {"x_s": x_s, "concat": concat}
    return z


def _fuse_forward(x_s, x_g, params, trace):
    if params.fusion == "attention":
        return cross_attention_fuse(x_g, x_s, params, trace=trace)
    if params.fusion == "concat":
        if trace is not None:
            trace["fusion"] = {}
        return np.hstack([x_s, x_g])
    t = params.tensors
    c = np.hstack([x_s, x_g])
    pre = c @ t["fuse1"]
    h = np.maximum(pre, 0.0)
    z = h @ t["fuse2"]
    if trace is not None:
        trace["fusion"] = {"c": c, "mask": pre > 0, "h": h}
    return z


def _fuse_backward(trace, dz, params, grads):
    t = params.tensors
    e = params.embed_dim
    if params.fusion == "attention":
        f = trace["fusion"]
        grads["wo"] = f["concat"].T @ dz
        dv = dz @ t["wo"].T
        grads["wv"] = f["x_s"].T @ dv
        grads["wq"] = np.zeros_like(t["wq"])
        grads["wk"] = np.zeros_like(t["wk"])
        return dv @ t["wv"].T, np.zeros((dz.shape[0], e))
    if params.fusion == "concat":
        return dz[:, :e], dz[:, e:]
    f = trace["fusion"]
    grads["fuse2"] = f["h"].T @ dz
    dh = dz @ t["fuse2"].T
    dpre = dh * f["mask"]
    grads["fuse1"] = f["c"].T @ dpre
    dc = dpre @ t["fuse1"].T
    return dc[:, :e], dc[:, e:]


# --- full models ------------------------------------------------------------


def multi_forward_ops(a_sem, a_geo, x, params: MultiParams, training=False,
                      rng=None, dropout_masks=None, trace: dict = None) -> np.ndarray:
    x_s, x_g = multi_branch_forward_ops(
        a_sem, a_geo, x, params, training=training, rng=rng,
        dropout_masks=dropout_masks, trace=trace,
    )
    return _fuse_forward(x_s, x_g, params, trace)


def multi_backward(trace: dict, d_out: np.ndarray) -> dict:
    params = trace["params"]
    grads = {}
    dx_s, dx_g = _fuse_backward(trace, d_out, params, grads)
    _branch_backward(trace["sem"], dx_s, params, "sem", trace["training"], grads)
    _branch_backward(trace["geo"], dx_g, params, "geo", trace["training"], grads)
    return grads


def model_forward(params, a_sem, a_geo, x, training=False, rng=None,
                  dropout_masks=None, trace: dict = None) -> np.ndarray:
    """Dispatch on parameter type; trace (when given) records the pass for backward."""
    if isinstance(params, MonoParams):
        return mono_forward_ops(a_sem, a_geo, x, params, trace=trace)
    if isinstance(params, MultiParams):
        return multi_forward_ops(a_sem, a_geo, x, params, training=training,
                                 rng=rng, dropout_masks=dropout_masks, trace=trace)
    raise TypeError(f"unknown parameter container {type(params)!r}")


def model_backward(trace: dict, d_out: np.ndarray) -> dict:
    """Exact reverse-mode gradients for every tensor of the traced forward pass."""
    if trace.get("params") is None:
        raise ValueError("trace does not match a recorded forward pass")
    if not np.all(np.isfinite(d_out)):
        raise ValueError("non-finite upstream gradient")
    params = trace["params"]
    if isinstance(params, MonoParams):
        grads = mono_backward(trace, d_out)
    else:
        grads = multi_backward(trace, d_out)
    full = zero_gradients(params)
    full.update(grads)
    return full
