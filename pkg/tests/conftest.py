import numpy as np
import pytest

from geotopics import synthetic
from geotopics.corpus_io import corpus_from_arrays


@pytest.fixture
def tiny_corpus():
    """5 posts, d=4, deterministic values, with text."""
    rng = np.random.default_rng(123)
    emb = rng.standard_normal((5, 4)).astype(np.float32)
    coords = np.array([[10.0, 20.0], [10.1, 20.1], [-5.0, 100.0],
                       [0.0, 0.0], [45.0, -120.0]])
    texts = ["flood water rising", "storm wind flood", "earthquake shake",
             "wildfire smoke", "flood rescue boat"]
    return corpus_from_arrays([f"t{i}" for i in range(5)], emb, coords, texts)


@pytest.fixture(scope="session")
def small_synth():
    """300-post planted corpus shared by the cheaper model tests."""
    spec = synthetic.SynthSpec(n=300, d=16, topics=3, seed=42)
    return synthetic.generate(spec)
