"""Coherence, contrastive, and alignment objectives with exact gradients.

All cosine-based terms operate on row-normalized embeddings; the alignment
term is the only scale-sensitive component. Pseudo-label centroids are
constants with respect to differentiation: clustering happens outside the
computational graph, so gradients flow to the embeddings only.

The within/cross-cluster cosine means are computed exactly at any batch size
through per-cluster sums of the normalized rows (O(n d), no pair enumeration),
so no pair subsampling is needed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_NORM_EPS = 1e-12


class UndefinedLossError(ValueError):
    """A loss term's precondition (enough pairs/clusters) does not hold."""


@dataclass
class LossWeights:
    """Weights of the composite objective; paper baseline values as defaults."""

    alpha: float = 0.8
    beta: float = 0.2
    gamma: float = 0.1
    lambda_coh: float = 0.1
    tau: float = 0.5

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma, self.lambda_coh) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.tau <= 0:
            raise ValueError("temperature tau must be positive")


@dataclass
class PseudoLabels:
    """Cluster assignment plus the member-mean centroids it induces."""

    assignment: np.ndarray
    centroids: np.ndarray

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @classmethod
    def from_assignment(cls, z: np.ndarray, assignment, k: int = None) -> "PseudoLabels":
        assignment = np.asarray(assignment, dtype=np.int64)
        if k is None:
            k = int(assignment.max()) + 1
        centroids = np.zeros((k, z.shape[1]))
        np.add.at(centroids, assignment, z)
        counts = np.bincount(assignment, minlength=k).astype(np.float64)
        nonempty = counts > 0
        centroids[nonempty] /= counts[nonempty, None]
        return cls(assignment=assignment, centroids=centroids)


def _normalize_rows(z: np.ndarray):
    norms = np.linalg.norm(z, axis=1)
    safe = np.maximum(norms, _NORM_EPS)
    return z / safe[:, None], safe


def _grad_through_normalization(g_hat: np.ndarray, zhat: np.ndarray, norms: np.ndarray) -> np.ndarray:
    # d(cosine terms)/dz given the gradient w.r.t. the normalized rows
    radial = (g_hat * zhat).sum(axis=1, keepdims=True)
    return (g_hat - radial * zhat) / norms[:, None]


def _coherence_terms(z, assignment, need_grad=False, need_intra=True, need_inter=True):
    """(intra, inter, d_intra/dZ, d_inter/dZ); entries None unless requested.

    Both means are exact: with S_c the sum of normalized rows in cluster c,
    the ordered within-cluster cosine sum is sum_i zhat_i . (S_{c(i)} - zhat_i)
    and the cross-cluster sum is sum_i zhat_i . (S_total - S_{c(i)}).
    """
    n = z.shape[0]
    assignment = np.asarray(assignment, dtype=np.int64)
    zhat, norms = _normalize_rows(np.asarray(z, dtype=np.float64))
    k = int(assignment.max()) + 1
    counts = np.bincount(assignment, minlength=k)
    n_same = int((counts * (counts - 1)).sum())  # ordered pair count
    n_diff = n * (n - 1) - n_same
    if need_intra and n_same == 0:
        raise UndefinedLossError("undefined intra: no cluster has >= 2 members")
    if need_inter and n_diff == 0:
        raise UndefinedLossError("undefined inter: need >= 2 non-empty clusters")
    cluster_sum = np.zeros((k, z.shape[1]))
    np.add.at(cluster_sum, assignment, zhat)
    own = cluster_sum[assignment]
    same_neighbor = own - zhat
    diff_neighbor = zhat.sum(axis=0) - own
    intra = inter = d_intra = d_inter = None
    if need_intra:
        intra = float((zhat * same_neighbor).sum() / n_same)
        if need_grad:
            d_intra = _grad_through_normalization(2.0 / n_same * same_neighbor, zhat, norms)
    if need_inter:
        inter = float((zhat * diff_neighbor).sum() / n_diff)
        if need_grad:
            d_inter = _grad_through_normalization(2.0 / n_diff * diff_neighbor, zhat, norms)
    return intra, inter, d_intra, d_inter


def intra_cluster_similarity(z, labels: PseudoLabels) -> float:
    """Pooled mean cosine over all within-cluster pairs."""
    intra, _, _, _ = _coherence_terms(z, labels.assignment, need_inter=False)
    return intra


def inter_cluster_similarity(z, labels: PseudoLabels) -> float:
    """Mean cosine over all cross-cluster pairs."""
    _, inter, _, _ = _coherence_terms(z, labels.assignment, need_intra=False)
    return inter


def coherence_loss(z, labels: PseudoLabels, lambda_coh: float) -> float:
    """-(intra - lambda * inter): decreases as clusters tighten and separate."""
    intra, inter, _, _ = _coherence_terms(z, labels.assignment)
    return -(intra - lambda_coh * inter)


def coherence_loss_and_grad(z, labels: PseudoLabels, lambda_coh: float):
    intra, inter, d_intra, d_inter = _coherence_terms(z, labels.assignment, need_grad=True)
    value = -(intra - lambda_coh * inter)
    grad = -(d_intra - lambda_coh * d_inter)
    return value, grad


def _contrastive_core(z, positives, tau, need_grad):
    positives = np.asarray(positives, dtype=np.int64).reshape(-1, 2)
    if positives.size == 0:
        raise UndefinedLossError("empty positive set")
    if tau <= 0:
        raise ValueError("temperature tau must be positive")
    z = np.asarray(z, dtype=np.float64)
    n = z.shape[0]
    if n < 2:
        raise UndefinedLossError("contrastive loss needs at least 2 nodes in the batch")
    zhat, norms = _normalize_rows(z)
    cos = zhat @ zhat.T
    logits = cos / tau
    np.fill_diagonal(logits, -np.inf)
    row_max = logits.max(axis=1, keepdims=True)
    exp = np.exp(logits - row_max)
    denom = exp.sum(axis=1, keepdims=True)
    lse = (row_max + np.log(denom)).ravel()
    src, dst = positives[:, 0], positives[:, 1]
    value = float((lse[src] - cos[src, dst] / tau).sum())
    if not need_grad:
        return value, None
    counts = np.bincount(src, minlength=n).astype(np.float64)
    softmax = exp / denom
    m = (counts[:, None] * softmax) / tau
    np.subtract.at(m, (src, dst), 1.0 / tau)
    g_hat = (m + m.T) @ zhat
    return value, _grad_through_normalization(g_hat, zhat, norms)


def contrastive_loss(z, positives, tau: float) -> float:
    """InfoNCE-style sum over positive pairs against all in-batch candidates.

    `positives` is an (m, 2) array of ordered (anchor, positive) index pairs;
    each anchor's denominator runs over every other node in the batch.
    """
    value, _ = _contrastive_core(z, positives, tau, need_grad=False)
    return value


def contrastive_loss_and_grad(z, positives, tau: float):
    return _contrastive_core(z, positives, tau, need_grad=True)


def alignment_loss(z, labels: PseudoLabels) -> float:
    """Mean squared distance from each embedding to its assigned centroid."""
    delta = z - labels.centroids[labels.assignment]
    return float((delta ** 2).sum() / z.shape[0])


def alignment_loss_and_grad(z, labels: PseudoLabels):
    delta = z - labels.centroids[labels.assignment]
    value = float((delta ** 2).sum() / z.shape[0])
    return value, 2.0 * delta / z.shape[0]


def total_loss(z, labels, positives, w: LossWeights) -> float:
    """alpha*contrastive + beta*coherence + gamma*alignment.

    Components with zero weight are skipped entirely (ablation semantics), so
    their preconditions are not evaluated.
    """
    value, _, _ = total_loss_and_grad(z, labels, positives, w, need_grad=False)
    return value


def total_loss_and_grad(z, labels, positives, w: LossWeights, need_grad=True):
    """Returns (value, dL/dZ, per-component dict). Gradients flow to Z only."""
    z = np.asarray(z, dtype=np.float64)
    grad = np.zeros_like(z) if need_grad else None
    components = {"contrast": 0.0, "coherence": 0.0, "align": 0.0}
    if w.alpha > 0:
        if need_grad:
            c_val, c_grad = contrastive_loss_and_grad(z, positives, w.tau)
            grad += w.alpha * c_grad
        else:
            c_val = contrastive_loss(z, positives, w.tau)
        components["contrast"] = c_val
    if w.beta > 0:
        if need_grad:
            h_val, h_grad = coherence_loss_and_grad(z, labels, w.lambda_coh)
            grad += w.beta * h_grad
        else:
            h_val = coherence_loss(z, labels, w.lambda_coh)
        components["coherence"] = h_val
    if w.gamma > 0:
        if need_grad:
            a_val, a_grad = alignment_loss_and_grad(z, labels)
            grad += w.gamma * a_grad
        else:
            a_val = alignment_loss(z, labels)
        components["align"] = a_val
    value = (w.alpha * components["contrast"]
             + w.beta * components["coherence"]
             + w.gamma * components["align"])
    components["total"] = value
    return value, grad, components
