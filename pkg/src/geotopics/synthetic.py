"""Seeded synthetic corpora with planted topics, spatial blobs, and vocabularies.

Stands in for proprietary tweet datasets: every acceptance check that needs
ground truth reads it from the generator's planted labels.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .corpus_io import Corpus, corpus_from_arrays


@dataclass
class SynthSpec:
    """Recipe for one synthetic corpus.

    Semantic blobs live on the unit sphere: topic centers share a common
    direction (weight `sem_common`, mimicking the positive mean cosine of
    sentence embeddings) plus mutually orthogonal topic directions. Spatial
    blobs are Gaussian in degrees around per-topic centers; with probability
    `rho` a post's location comes from its own topic's blob, otherwise from a
    uniformly random blob. Text is drawn from the topic vocabulary with
    Zipf-weighted word frequencies (`zipf_exponent`, 0 = uniform) and noise
    words substituted at `noise_rate`.
    """

    n: int
    d: int
    topics: int
    sem_sigma: float = 0.15
    sem_common: float = 0.7
    spatial_sigma: float = 0.4
    rho: float = 0.8
    vocab: Optional[list[list[str]]] = None
    noise_words: Optional[list[str]] = None
    noise_rate: float = 0.1
    tokens_per_post: int = 8
    zipf_exponent: float = 1.0
    with_text: bool = True
    spatial_centers: Optional[np.ndarray] = None
    seed: int = 42

    def __post_init__(self):
        if self.topics < 2:
            raise ValueError("need at least 2 planted topics")
        if self.sem_sigma <= 0 or self.spatial_sigma <= 0:
            raise ValueError("blob sigmas must be positive")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")
        if self.d < self.topics + 1:
            raise ValueError("d must exceed the topic count for orthogonal centers")


def default_vocab(topics: int, words_per_topic: int = 12) -> list[list[str]]:
    return [[f"topic{t}word{j}" for j in range(words_per_topic)] for t in range(topics)]


def default_noise_words(count: int = 30) -> list[str]:
    return [f"filler{j}" for j in range(count)]


def _semantic_centers(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    # Orthonormal frame: row 0 is the shared direction, rows 1..T the topic axes.
    basis, _ = np.linalg.qr(rng.standard_normal((spec.d, spec.topics + 1)))
    basis = basis.T
    centers = spec.sem_common * basis[0] + basis[1:]
    return centers / np.linalg.norm(centers, axis=1, keepdims=True)


def _spatial_centers(spec: SynthSpec) -> np.ndarray:
    if spec.spatial_centers is not None:
        return np.asarray(spec.spatial_centers, dtype=np.float64)
    # Diagonal layout across a mid-latitude box; spacing comfortably exceeds
    # 6 * spatial_sigma for the default sigma.
    t = np.arange(spec.topics)
    frac = t / max(spec.topics - 1, 1)
    lat = 31.0 + 8.0 * frac
    lon = -99.0 + 8.0 * frac
    return np.column_stack([lat, lon])


def generate(spec: SynthSpec) -> tuple[Corpus, np.ndarray]:
    """Generate a corpus and its planted topic labels, deterministically per seed."""
    rng = np.random.default_rng(spec.seed)
    T = spec.topics
    vocab = spec.vocab if spec.vocab is not None else default_vocab(T)
    noise_words = spec.noise_words if spec.noise_words is not None else default_noise_words()
    if spec.with_text:
        for t, words in enumerate(vocab):
            if len(words) < spec.tokens_per_post:
                raise ValueError(
                    f"vocabulary for topic {t} has {len(words)} words, "
                    f"fewer than tokens_per_post={spec.tokens_per_post}"
                )

    labels = rng.integers(0, T, size=spec.n)
    sem_centers = _semantic_centers(spec, rng)
    emb = sem_centers[labels] + spec.sem_sigma * rng.standard_normal((spec.n, spec.d))
    emb /= np.linalg.norm(emb, axis=1, keepdims=True)

    geo_centers = _spatial_centers(spec)
    own_blob = rng.random(spec.n) < spec.rho
    blob = np.where(own_blob, labels, rng.integers(0, T, size=spec.n))
    coords = geo_centers[blob] + spec.spatial_sigma * rng.standard_normal((spec.n, 2))
    coords[:, 0] = np.clip(coords[:, 0], -90.0, 90.0)
    coords[:, 1] = np.clip(coords[:, 1], -180.0, 180.0)

    texts = None
    if spec.with_text:
        word_probs = []
        for words in vocab:
            ranks = np.arange(1, len(words) + 1, dtype=np.float64)
            weights = ranks ** -spec.zipf_exponent
            word_probs.append(weights / weights.sum())
        texts = []
        for i in range(spec.n):
            t = labels[i]
            words = list(rng.choice(vocab[t], size=spec.tokens_per_post,
                                    replace=False, p=word_probs[t]))
            noise_mask = rng.random(spec.tokens_per_post) < spec.noise_rate
            for j in np.flatnonzero(noise_mask):
                words[j] = str(rng.choice(noise_words))
            texts.append(" ".join(words))

    ids = [f"p{i:06d}" for i in range(spec.n)]
    corpus = corpus_from_arrays(ids, emb, coords, texts)
    return corpus, labels


def standard_spec(n: int = 2000, topics: int = 5, d: int = 32,
                  rho: float = 0.8, seed: int = 42, **overrides) -> SynthSpec:
    """The corpus used throughout the acceptance suite.

    Deliberately not trivially separable: moderate blob noise plus a strong
    shared embedding direction give the inputs realistic inter-similarity,
    Zipf-weighted vocabularies make keyword quality track cluster purity, and
    city-scale spatial blobs (km-range separations) give geographic edges
    non-negligible 1/(1+d) weights so the geographic modality actually
    participates.
    """
    frac = np.arange(topics) / max(topics - 1, 1)
    city_centers = np.column_stack([31.0 + 0.2 * frac, -99.0 + 0.2 * frac])
    defaults = dict(sem_sigma=0.27, sem_common=0.9, tokens_per_post=10,
                    vocab=default_vocab(topics, 24),
                    spatial_centers=city_centers, spatial_sigma=0.01)
    defaults.update(overrides)
    return SynthSpec(n=n, d=d, topics=topics, rho=rho, seed=seed, **defaults)


def write_labels_csv(path: str, corpus: Corpus, labels: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "label"])
        for pid, lab in zip(corpus.ids, labels):
            writer.writerow([pid, int(lab)])
