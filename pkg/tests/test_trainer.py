import numpy as np
import pytest

from geotopics import losses, trainer
from geotopics.clustering import kmeans
from geotopics.losses import PseudoLabels
from geotopics.trainer import (
    AdamState,
    TrainConfig,
    adam_step,
    encode_corpus,
    init_params,
    load_checkpoint,
    save_checkpoint,
    train,
)


def small_config(**kw):
    base = dict(arch="mono", epochs=3, stride=2, k_means=4, hidden_dim=16,
                embed_dim=8, k_graph=5, seed=42)
    base.update(kw)
    return TrainConfig(**base)


# --- adam -------------------------------------------------------------------------


def test_adam_zero_gradient_keeps_params():
    params = {"w": np.array([1.0, -2.0])}
    state = AdamState.init_like(params)
    adam_step(params, {"w": np.array([3.0, -1.0])}, state, lr=0.01)
    after_first = params["w"].copy()
    m_before = state.m["w"].copy()
    adam_step(params, {"w": np.zeros(2)}, state, lr=0.01)
    np.testing.assert_allclose(state.m["w"], 0.9 * m_before, atol=1e-15)
    # zero gradient still nudges params through the decayed first moment
    assert state.t == 2
    adam_params = {"w": np.array([5.0])}
    fresh = AdamState.init_like(adam_params)
    adam_step(adam_params, {"w": np.zeros(1)}, fresh, lr=0.01)
    np.testing.assert_array_equal(adam_params["w"], [5.0])
    assert after_first is not None


def test_adam_constant_gradient_matches_scalar_reference():
    lr, g, steps = 0.05, 1.7, 12
    params = {"w": np.array([0.0])}
    state = AdamState.init_like(params)
    for _ in range(steps):
        adam_step(params, {"w": np.array([g])}, state, lr)
    # independent scalar reference implementation
    theta, m, v = 0.0, 0.0, 0.0
    for t in range(1, steps + 1):
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        theta -= lr * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    assert params["w"][0] == pytest.approx(theta, abs=1e-12)


def test_adam_lr_zero_identity():
    params = {"w": np.array([2.0, 3.0])}
    state = AdamState.init_like(params)
    adam_step(params, {"w": np.array([1.0, -1.0])}, state, lr=0.0)
    np.testing.assert_array_equal(params["w"], [2.0, 3.0])


def test_adam_rejects_nonfinite_gradient():
    params = {"w": np.array([1.0])}
    state = AdamState.init_like(params)
    with pytest.raises(ValueError, match="non-finite gradient"):
        adam_step(params, {"w": np.array([np.nan])}, state, lr=0.1)


# --- train ------------------------------------------------------------------------


def test_train_zero_epochs_is_untrained_forward(small_synth):
    corpus, _ = small_synth
    cfg = small_config(epochs=0)
    result = train(corpus, cfg)
    assert result.history.records == []
    assert result.history.stop_epoch == 0
    z_ref = encode_corpus(corpus, cfg, init_params(corpus.dim, cfg))
    assert result.embeddings.tobytes() == z_ref.tobytes()


def test_train_lr_zero_frozen(small_synth):
    corpus, _ = small_synth
    cfg = small_config(lr=0.0, epochs=2)
    result = train(corpus, cfg)
    frozen = init_params(corpus.dim, cfg)
    for name, tensor in frozen.tensors.items():
        np.testing.assert_array_equal(result.params.tensors[name], tensor)
    z_ref = encode_corpus(corpus, cfg, frozen)
    assert result.embeddings.tobytes() == z_ref.tobytes()


@pytest.mark.parametrize("arch", ["mono", "multi"])
def test_train_improves_holdout_metric(small_synth, arch):
    corpus, _ = small_synth
    cfg = small_config(arch=arch, epochs=6)
    z0 = encode_corpus(corpus, cfg, init_params(corpus.dim, cfg))
    ca0 = kmeans(z0, cfg.k_means, cfg.kmeans_seed)
    pl0 = PseudoLabels.from_assignment(z0, ca0.labels, cfg.k_means)
    m0 = (losses.intra_cluster_similarity(z0, pl0)
          - losses.inter_cluster_similarity(z0, pl0))
    result = train(corpus, cfg)
    assert result.history.records[-1].holdout_metric > m0


def test_train_fully_reproducible(small_synth):
    corpus, _ = small_synth
    cfg = small_config(arch="multi", epochs=3)
    r1 = train(corpus, cfg)
    r2 = train(corpus, cfg)
    assert r1.embeddings.tobytes() == r2.embeddings.tobytes()
    assert len(r1.history.records) == len(r2.history.records)
    for a, b in zip(r1.history.records, r2.history.records):
        assert a.total == b.total and a.holdout_metric == b.holdout_metric


def test_train_stride_changes_only_schedule(small_synth):
    # same seed, different stride: both runs finish and produce embeddings
    corpus, _ = small_synth
    for stride in (1, 3):
        result = train(corpus, small_config(stride=stride, epochs=2))
        assert result.embeddings.shape == (corpus.n, 8)


def test_train_early_stopping_fires(small_synth):
    corpus, _ = small_synth
    cfg = small_config(epochs=40, patience=2, min_delta=0.5)  # absurd delta
    result = train(corpus, cfg)
    assert result.history.stopped_early
    assert result.history.stop_epoch < 40


def test_train_chunk_logs_follow_schema(small_synth):
    corpus, _ = small_synth
    cfg = small_config(epochs=2, stride=2)
    result = train(corpus, cfg)
    assert len(result.history.chunk_logs) == 2 * 2
    for entry in result.history.chunk_logs:
        assert set(entry) == {"epoch", "chunk", "contrast", "coherence", "align", "total"}


def test_train_ablated_component_logged_as_zero(small_synth):
    corpus, _ = small_synth
    cfg = small_config(epochs=2, weights=losses.LossWeights(alpha=0.0))
    result = train(corpus, cfg)
    assert all(entry["contrast"] == 0.0 for entry in result.history.chunk_logs)
    assert all(r.contrast == 0.0 for r in result.history.records)


def test_train_k_graph_too_large_for_chunks(small_synth):
    corpus, _ = small_synth
    with pytest.raises(ValueError, match="k_graph"):
        train(corpus, small_config(stride=290))


def test_halo_nodes_join_graphs_but_not_loss(small_synth):
    corpus, _ = small_synth
    cfg = small_config(stride=2, halo=3, epochs=1)
    result = train(corpus, cfg)
    assert result.embeddings.shape[0] == corpus.n


# --- checkpoints --------------------------------------------------------------------


@pytest.mark.parametrize("arch,fusion", [("mono", None), ("multi", "attention"),
                                         ("multi", "concat_mlp")])
def test_checkpoint_round_trip(tmp_path, arch, fusion, small_synth):
    corpus, _ = small_synth
    kw = {"arch": arch}
    if fusion:
        kw["fusion"] = fusion
    cfg = small_config(**kw)
    params = init_params(corpus.dim, cfg)
    path = tmp_path / "ck.bin"
    save_checkpoint(str(path), params)
    loaded = load_checkpoint(str(path))
    assert type(loaded) is type(params)
    assert set(loaded.tensors) == set(params.tensors)
    for name in params.tensors:
        np.testing.assert_allclose(loaded.tensors[name], params.tensors[name],
                                   atol=1e-6)
    z_a = encode_corpus(corpus, cfg, params)
    z_b = encode_corpus(corpus, cfg, loaded)
    np.testing.assert_allclose(z_a, z_b, atol=1e-4)


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"whatever")
    with pytest.raises(ValueError, match="not a checkpoint"):
        load_checkpoint(str(path))


def test_config_round_trip_dict():
    cfg = small_config(arch="multi", fusion="concat")
    again = TrainConfig.from_dict(cfg.to_dict())
    assert again == cfg


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(arch="giant")
    with pytest.raises(ValueError):
        TrainConfig(holdout_fraction=0.0)
    with pytest.raises(ValueError):
        TrainConfig(stride=0)
