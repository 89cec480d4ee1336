"""Sentence encoders behind one interface: encode(texts) -> (n, d) float32.

`hash-<dim>` is a built-in deterministic featurizer (token vectors seeded from
SHA-256 digests, summed and normalized) for offline runs and tests. Any other
name is treated as a sentence-transformers model and requires the model to be
available locally.
"""

from __future__ import annotations

import hashlib
import re

import numpy as np

_HASH_NAME = re.compile(r"hash-(\d+)")


class HashingEncoder:
    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError("encoder dimension must be >= 1")
        self.dim = dim
        self._cache = {}

    def _token_vector(self, token: str) -> np.ndarray:
        vec = self._cache.get(token)
        if vec is None:
            digest = hashlib.sha256(token.encode("utf-8")).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
            vec = rng.standard_normal(self.dim)
            vec /= np.linalg.norm(vec)
            self._cache[token] = vec
        return vec

    def encode(self, texts) -> np.ndarray:
        out = np.zeros((len(texts), self.dim))
        for i, text in enumerate(texts):
            tokens = text.split()
            if not tokens:
                continue
            acc = np.sum([self._token_vector(t) for t in tokens], axis=0)
            norm = np.linalg.norm(acc)
            if norm > 0:
                out[i] = acc / norm
        return out.astype(np.float32)


class SentenceTransformerEncoder:
    def __init__(self, model_name: str):
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:
            raise RuntimeError(
                "encoder load failure: sentence-transformers is not installed "
                "(pip install 'embed-adapter[st]')"
            ) from exc
        try:
            self._model = SentenceTransformer(model_name)
        except Exception as exc:
            raise RuntimeError(f"encoder load failure for {model_name!r}: {exc}") from exc
        self.dim = int(self._model.get_sentence_embedding_dimension())

    def encode(self, texts) -> np.ndarray:
        emb = self._model.encode(list(texts), convert_to_numpy=True,
                                 show_progress_bar=False)
        return np.asarray(emb, dtype=np.float32)


def load_encoder(name: str):
    m = _HASH_NAME.fullmatch(name)
    if m:
        return HashingEncoder(int(m.group(1)))
    return SentenceTransformerEncoder(name)
