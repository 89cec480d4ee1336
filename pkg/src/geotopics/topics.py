"""Per-cluster TF-IDF keyword extraction and the TQ = TC x TD evaluation stack.

Tokenization is whitespace splitting of lowercased text with tokens shorter
than 2 characters dropped; no stemming. Co-occurrence is document-level (two
words co-occur when they appear in the same post), counted over the full
corpus. NPPMI uses natural logarithms throughout.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field

from .corpus_io import Corpus

_LOG_EPS = 1e-12


@dataclass
class TopicKeywords:
    """Ranked keyword descriptors of one topic."""

    topic: int
    keywords: list  # (term, tf-idf score), best first

    @property
    def terms(self) -> list:
        return [term for term, _ in self.keywords]


@dataclass
class CooccurrenceCounts:
    """Document-level word and word-pair frequencies over the corpus."""

    doc_count: int
    word_counts: dict
    pair_counts: dict = field(repr=False)

    def pair_count(self, wi: str, wj: str) -> int:
        key = (wi, wj) if wi <= wj else (wj, wi)
        return self.pair_counts.get(key, 0)


def tokenize(text: str) -> list:
    return [tok for tok in text.lower().split() if len(tok) >= 2]


def build_cooccurrence(corpus: Corpus) -> CooccurrenceCounts:
    if not corpus.has_text:
        raise ValueError("corpus without text: cannot build co-occurrence counts")
    word_counts: Counter = Counter()
    pair_counts: Counter = Counter()
    doc_count = 0
    for post in corpus.posts:
        if post.text is None:
            continue
        doc_count += 1
        toks = sorted(set(tokenize(post.text)))
        word_counts.update(toks)
        for a in range(len(toks)):
            for b in range(a + 1, len(toks)):
                pair_counts[(toks[a], toks[b])] += 1
    return CooccurrenceCounts(doc_count=doc_count, word_counts=dict(word_counts),
                              pair_counts=dict(pair_counts))


def extract_keywords(corpus: Corpus, assignment, k: int, k_kw: int = 15) -> list:
    """Top TF-IDF terms per cluster pseudo-document.

    One pseudo-document per cluster (member texts concatenated); TF is the raw
    term count in the pseudo-document and IDF = ln((1+|T|)/(1+df)) + 1 over the
    |T| pseudo-documents. Empty clusters yield empty keyword lists.
    """
    if not corpus.has_text:
        raise ValueError("corpus without text: keyword extraction unavailable")
    cluster_tokens = [[] for _ in range(k)]
    for post, label in zip(corpus.posts, assignment):
        if post.text is not None:
            cluster_tokens[int(label)].extend(tokenize(post.text))
    tfs = [Counter(toks) for toks in cluster_tokens]
    df: Counter = Counter()
    for tf in tfs:
        df.update(tf.keys())
    out = []
    for topic, tf in enumerate(tfs):
        scored = [
            (term, count * (math.log((1.0 + k) / (1.0 + df[term])) + 1.0))
            for term, count in tf.items()
        ]
        scored.sort(key=lambda item: (-item[1], item[0]))
        out.append(TopicKeywords(topic=topic, keywords=scored[:k_kw]))
    return out


def nppmi(wi: str, wj: str, counts: CooccurrenceCounts) -> float:
    """Normalized positive PMI in [0, 1] (natural log; 1e-12 in-log smoothing).

    Pairs that never co-occur score exactly 0. The final value is clamped to
    the metric's mathematical range to absorb smoothing-order float wobble.
    """
    for w in (wi, wj):
        if w not in counts.word_counts:
            raise ValueError(f"word not in vocabulary: {w!r}")
    c_ij = counts.pair_count(wi, wj)
    if c_ij == 0:
        return 0.0
    d = counts.doc_count
    p_i = counts.word_counts[wi] / d
    p_j = counts.word_counts[wj] / d
    p_ij = c_ij / d
    pmi = math.log(p_ij + _LOG_EPS) - math.log(p_i * p_j + _LOG_EPS)
    denom = -math.log(p_ij + _LOG_EPS)
    if denom <= 0.0:
        return 0.0
    return min(1.0, max(0.0, max(0.0, pmi) / denom))


def per_topic_coherence(topics, counts: CooccurrenceCounts) -> dict:
    """Mean pairwise NPPMI per topic; None for topics with < 2 in-vocab keywords."""
    result = {}
    for tk in topics:
        terms = [t for t in tk.terms if t in counts.word_counts]
        if len(terms) < 2:
            result[tk.topic] = None
            continue
        vals = [nppmi(terms[a], terms[b], counts)
                for a in range(len(terms)) for b in range(a + 1, len(terms))]
        result[tk.topic] = sum(vals) / len(vals)
    return result


def topic_coherence(topics, counts: CooccurrenceCounts) -> float:
    """Corpus TC: mean per-topic NPPMI over valid topics (>= 2 known keywords)."""
    per_topic = per_topic_coherence(topics, counts)
    valid = [v for v in per_topic.values() if v is not None]
    if not valid:
        raise ValueError("no valid topics: every keyword list has < 2 known words")
    return sum(valid) / len(valid)


def topic_diversity(topics, k_kw: int = None) -> float:
    """Unique-keyword fraction TD = U / (k * |T|) across the given topic lists."""
    if not topics:
        raise ValueError("topic_diversity needs at least one topic")
    if k_kw is None:
        k_kw = max(len(tk.keywords) for tk in topics)
    unique = set()
    for tk in topics:
        unique.update(tk.terms)
    return len(unique) / (k_kw * len(topics))


def topic_quality(tc: float, td: float) -> float:
    """TQ = TC x TD."""
    if not (0.0 <= tc <= 1.0 and 0.0 <= td <= 1.0):
        raise ValueError("TC and TD must lie in [0, 1]")
    return tc * td


def topics_report(corpus: Corpus, assignment, k: int, k_kw: int = 15) -> dict:
    """Full report payload: per-topic keywords/TC plus corpus-level TC/TD/TQ.

    TD is computed over topics with non-empty keyword lists; TC over valid
    topics (>= 2 in-vocabulary keywords); empty clusters are reported with
    empty keyword lists.
    """
    counts = build_cooccurrence(corpus)
    topics = extract_keywords(corpus, assignment, k, k_kw)
    per_topic = per_topic_coherence(topics, counts)
    n_docs = Counter(int(lab) for lab in assignment)
    nonempty = [tk for tk in topics if tk.keywords]
    tc = topic_coherence(topics, counts)
    td = topic_diversity(nonempty, k_kw)
    payload = {
        "topics": [
            {
                "topic": tk.topic,
                "keywords": [{"term": term, "score": score} for term, score in tk.keywords],
                "tc": per_topic[tk.topic],
                "n_docs": n_docs.get(tk.topic, 0),
            }
            for tk in topics
        ],
        "corpus": {
            "tc": tc,
            "td": td,
            "tq": topic_quality(tc, td),
            "valid_topics": sum(1 for v in per_topic.values() if v is not None),
        },
    }
    return payload


def write_topics_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
