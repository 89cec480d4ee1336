import math

import numpy as np
import pytest

from geotopics.losses import (
    LossWeights,
    PseudoLabels,
    UndefinedLossError,
    alignment_loss,
    alignment_loss_and_grad,
    coherence_loss,
    coherence_loss_and_grad,
    contrastive_loss,
    contrastive_loss_and_grad,
    inter_cluster_similarity,
    intra_cluster_similarity,
    total_loss,
    total_loss_and_grad,
)

E1 = np.array([1.0, 0.0, 0.0])
E2 = np.array([0.0, 1.0, 0.0])


def labels_of(z, assignment, k=None):
    return PseudoLabels.from_assignment(np.asarray(z, float), assignment, k)


def dense_pair_oracle(z, assignment):
    """O(n^2) enumeration of both pooled means."""
    z = np.asarray(z, float)
    zh = z / np.linalg.norm(z, axis=1, keepdims=True)
    same_vals, diff_vals = [], []
    n = len(z)
    for i in range(n):
        for j in range(i + 1, n):
            c = float(zh[i] @ zh[j])
            (same_vals if assignment[i] == assignment[j] else diff_vals).append(c)
    return (sum(same_vals) / len(same_vals) if same_vals else None,
            sum(diff_vals) / len(diff_vals) if diff_vals else None)


# --- intra / inter ---------------------------------------------------------------


def test_intra_identical_vectors():
    z = np.stack([E1, E1, E1])
    assert intra_cluster_similarity(z, labels_of(z, [0, 0, 0], 1)) == pytest.approx(1.0)


def test_intra_orthogonal_pair():
    z = np.stack([E1, E2])
    assert intra_cluster_similarity(z, labels_of(z, [0, 0], 1)) == pytest.approx(0.0)


def test_intra_two_cluster_hand_enumeration():
    z = np.stack([E1, E1, E2, -E2])
    # pairs: (e1,e1)=1 and (e2,-e2)=-1 -> pooled (1 + -1)/2 = 0
    assert intra_cluster_similarity(z, labels_of(z, [0, 0, 1, 1], 2)) == pytest.approx(0.0)


def test_intra_undefined_when_all_singletons():
    z = np.stack([E1, E2])
    with pytest.raises(UndefinedLossError, match="undefined intra"):
        intra_cluster_similarity(z, labels_of(z, [0, 1], 2))


def test_inter_orthogonal_singletons():
    z = np.stack([E1, E2])
    assert inter_cluster_similarity(z, labels_of(z, [0, 1], 2)) == pytest.approx(0.0)


def test_inter_antipodal():
    v = np.array([0.3, -0.4, 0.5])
    z = np.stack([v, -v])
    assert inter_cluster_similarity(z, labels_of(z, [0, 1], 2)) == pytest.approx(-1.0)


def test_inter_pair_enumeration():
    z = np.stack([E1, E2, E1])
    # cross pairs: (e1,e1)=1, (e2,e1)=0 -> 0.5
    assert inter_cluster_similarity(z, labels_of(z, [0, 0, 1], 2)) == pytest.approx(0.5)


def test_inter_undefined_single_cluster():
    z = np.stack([E1, E2])
    with pytest.raises(UndefinedLossError, match="undefined inter"):
        inter_cluster_similarity(z, labels_of(z, [0, 0], 1))


def test_intra_inter_match_dense_oracle():
    rng = np.random.default_rng(31)
    z = rng.standard_normal((40, 6))
    assignment = rng.integers(0, 4, 40)
    pl = labels_of(z, assignment, 4)
    intra_ref, inter_ref = dense_pair_oracle(z, assignment)
    assert intra_cluster_similarity(z, pl) == pytest.approx(intra_ref, abs=1e-10)
    assert inter_cluster_similarity(z, pl) == pytest.approx(inter_ref, abs=1e-10)


# --- coherence -------------------------------------------------------------------


def test_coherence_substitution_values():
    # intra=1, inter=0: two identical pairs on orthogonal axes
    z = np.stack([E1, E1, E2, E2])
    pl = labels_of(z, [0, 0, 1, 1], 2)
    assert coherence_loss(z, pl, 0.1) == pytest.approx(-1.0)


def test_coherence_is_intra_minus_lambda_inter():
    rng = np.random.default_rng(32)
    z = rng.standard_normal((25, 5))
    pl = labels_of(z, rng.integers(0, 3, 25), 3)
    lam = 0.37
    expected = -(intra_cluster_similarity(z, pl) - lam * inter_cluster_similarity(z, pl))
    assert coherence_loss(z, pl, lam) == pytest.approx(expected, abs=1e-12)


def test_coherence_two_blob_dense_oracle():
    rng = np.random.default_rng(33)
    blob_a = rng.standard_normal((15, 4)) * 0.1 + np.array([1, 0, 0, 0])
    blob_b = rng.standard_normal((15, 4)) * 0.1 + np.array([0, 1, 0, 0])
    z = np.vstack([blob_a, blob_b])
    assignment = np.array([0] * 15 + [1] * 15)
    intra_ref, inter_ref = dense_pair_oracle(z, assignment)
    lam = 0.1
    assert coherence_loss(z, labels_of(z, assignment, 2), lam) == pytest.approx(
        -(intra_ref - lam * inter_ref), abs=1e-10)


def test_coherence_decreases_as_cross_pair_separates():
    # rotating one singleton away from the other cluster lowers the loss
    def z_at(angle):
        return np.array([[1.0, 0.0], [1.0, 0.0], [math.cos(angle), math.sin(angle)]])

    pl = [0, 0, 1]
    near = coherence_loss(z_at(0.3), labels_of(z_at(0.3), pl, 2), 0.5)
    far = coherence_loss(z_at(1.2), labels_of(z_at(1.2), pl, 2), 0.5)
    assert far < near


# --- contrastive ------------------------------------------------------------------


def test_contrastive_single_pair_zero():
    z = np.stack([E1, E1 * 2.0])
    assert contrastive_loss(z, [(0, 1)], 0.5) == pytest.approx(0.0, abs=1e-12)


def test_contrastive_scalar_evaluation():
    # anchor with positive at cos=1 and negative at cos=-1, tau=0.5:
    # -log(e^2 / (e^2 + e^-2)) = log(1 + e^-4)
    z = np.array([[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0]])
    expected = math.log(1.0 + math.exp(-4.0))
    assert contrastive_loss(z, [(0, 1)], 0.5) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.01815, abs=5e-6)


def test_contrastive_high_temperature_limit():
    z = np.array([[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0]])
    assert contrastive_loss(z, [(0, 1)], 1e9) == pytest.approx(math.log(2.0), abs=1e-6)


def test_contrastive_errors():
    z = np.stack([E1, E2])
    with pytest.raises(UndefinedLossError, match="empty positive set"):
        contrastive_loss(z, np.empty((0, 2)), 0.5)
    with pytest.raises(ValueError, match="tau"):
        contrastive_loss(z, [(0, 1)], 0.0)


def test_contrastive_nonnegative_when_denominator_contains_positive():
    rng = np.random.default_rng(34)
    z = rng.standard_normal((20, 4))
    pos = np.array([(i, (i + 1) % 20) for i in range(20)])
    assert contrastive_loss(z, pos, 0.5) >= 0.0


# --- alignment --------------------------------------------------------------------


def test_alignment_zero_at_centroids():
    z = np.stack([E1, E1, E2, E2])
    assert alignment_loss(z, labels_of(z, [0, 0, 1, 1], 2)) == pytest.approx(0.0)


def test_alignment_hand_computation_1d():
    z = np.array([[0.0], [2.0]])
    assert alignment_loss(z, labels_of(z, [0, 0], 1)) == pytest.approx(1.0)


def test_alignment_equals_variance_for_single_cluster():
    rng = np.random.default_rng(35)
    z = rng.standard_normal((30, 5))
    pl = labels_of(z, np.zeros(30, dtype=int), 1)
    variance = float(((z - z.mean(axis=0)) ** 2).sum() / 30)
    assert alignment_loss(z, pl) == pytest.approx(variance, abs=1e-12)


def test_alignment_monotone_toward_centroid():
    rng = np.random.default_rng(36)
    z = rng.standard_normal((10, 3))
    pl = labels_of(z, np.zeros(10, dtype=int), 1)
    base = alignment_loss(z, pl)
    z2 = z.copy()
    z2[4] = z2[4] + 0.5 * (pl.centroids[0] - z2[4])
    assert alignment_loss(z2, pl) <= base


# --- total -------------------------------------------------------------------------


def test_total_all_zero_weights():
    z = np.stack([E1, E2])
    w = LossWeights(alpha=0.0, beta=0.0, gamma=0.0)
    assert total_loss(z, None, np.empty((0, 2)), w) == 0.0


def test_total_projects_to_contrastive():
    rng = np.random.default_rng(37)
    z = rng.standard_normal((15, 4))
    pos = np.array([(i, (i + 3) % 15) for i in range(15)])
    w = LossWeights(alpha=1.0, beta=0.0, gamma=0.0)
    assert total_loss(z, None, pos, w) == pytest.approx(
        contrastive_loss(z, pos, w.tau), abs=1e-12)


def test_total_matches_component_sum():
    rng = np.random.default_rng(38)
    z = rng.standard_normal((24, 6))
    assignment = rng.integers(0, 3, 24)
    pl = labels_of(z, assignment, 3)
    pos = np.array([(i, (i + 1) % 24) for i in range(24)])
    w = LossWeights()
    expected = (w.alpha * contrastive_loss(z, pos, w.tau)
                + w.beta * coherence_loss(z, pl, w.lambda_coh)
                + w.gamma * alignment_loss(z, pl))
    value, grad, comps = total_loss_and_grad(z, pl, pos, w)
    assert value == pytest.approx(expected, abs=1e-12)
    assert comps["total"] == pytest.approx(value)
    assert grad.shape == z.shape


def test_weight_validation():
    with pytest.raises(ValueError):
        LossWeights(alpha=-0.1)
    with pytest.raises(ValueError):
        LossWeights(tau=0.0)


# --- gradients and properties --------------------------------------------------------


def fd_z_grad(f, z, h=1e-5):
    g = np.zeros_like(z)
    for i in range(z.shape[0]):
        for j in range(z.shape[1]):
            zp, zm = z.copy(), z.copy()
            zp[i, j] += h
            zm[i, j] -= h
            g[i, j] = (f(zp) - f(zm)) / (2 * h)
    return g


def rel_err(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(1e-6, np.maximum(abs(a), abs(b)))))


@pytest.fixture
def grad_instance():
    rng = np.random.default_rng(39)
    z = rng.standard_normal((32, 8)) * 0.8 + 0.2
    assignment = rng.integers(0, 4, 32)
    pl = PseudoLabels.from_assignment(z, assignment, 4)
    pos = np.array([(i, (i + 1) % 32) for i in range(32)]
                   + [(i, (i + 7) % 32) for i in range(32)])
    return z, pl, pos


def test_coherence_gradient_matches_fd(grad_instance):
    z, pl, _ = grad_instance
    _, grad = coherence_loss_and_grad(z, pl, 0.1)
    fd = fd_z_grad(lambda zz: coherence_loss(zz, pl, 0.1), z)
    assert rel_err(grad, fd) < 1e-4


def test_contrastive_gradient_matches_fd(grad_instance):
    z, _, pos = grad_instance
    _, grad = contrastive_loss_and_grad(z, pos, 0.5)
    fd = fd_z_grad(lambda zz: contrastive_loss(zz, pos, 0.5), z)
    assert rel_err(grad, fd) < 1e-4


def test_alignment_gradient_matches_fd(grad_instance):
    z, pl, _ = grad_instance
    _, grad = alignment_loss_and_grad(z, pl)
    fd = fd_z_grad(lambda zz: alignment_loss(zz, pl), z)
    assert rel_err(grad, fd) < 1e-4


def test_total_gradient_matches_fd(grad_instance):
    z, pl, pos = grad_instance
    w = LossWeights()
    _, grad, _ = total_loss_and_grad(z, pl, pos, w)
    fd = fd_z_grad(lambda zz: total_loss(zz, pl, pos, w), z, h=1e-4)
    assert rel_err(grad, fd) < 1e-4


def test_centroids_are_constants_in_gradient(grad_instance):
    # the alignment gradient must be 2(z - c)/n even though c was computed from z
    z, pl, _ = grad_instance
    _, grad = alignment_loss_and_grad(z, pl)
    np.testing.assert_allclose(grad, 2.0 * (z - pl.centroids[pl.assignment]) / len(z),
                               atol=1e-12)


def test_cosine_terms_scale_invariant(grad_instance):
    z, pl, pos = grad_instance
    for f in (lambda zz: intra_cluster_similarity(zz, pl),
              lambda zz: inter_cluster_similarity(zz, pl),
              lambda zz: contrastive_loss(zz, pos, 0.5)):
        assert f(z * 3.0) == pytest.approx(f(z), abs=1e-9)
    assert alignment_loss(z * 3.0, pl) != pytest.approx(alignment_loss(z, pl))
