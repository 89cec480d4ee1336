import math

import numpy as np
import pytest

from geotopics import synthetic
from geotopics.corpus_io import corpus_from_arrays
from geotopics.topics import (
    CooccurrenceCounts,
    TopicKeywords,
    build_cooccurrence,
    extract_keywords,
    nppmi,
    per_topic_coherence,
    tokenize,
    topic_coherence,
    topic_diversity,
    topic_quality,
    topics_report,
)


def text_corpus(texts):
    n = len(texts)
    return corpus_from_arrays([f"d{i}" for i in range(n)],
                              np.eye(max(n, 2), 4, dtype=np.float32)[:n],
                              np.zeros((n, 2)), texts)


def counts_of(D, c_i, c_j, c_ij, wi="a", wj="b"):
    return CooccurrenceCounts(doc_count=D, word_counts={wi: c_i, wj: c_j},
                              pair_counts={tuple(sorted((wi, wj))): c_ij})


# --- tokenization / counts ----------------------------------------------------


def test_tokenize_lowercases_and_drops_short():
    assert tokenize("Flood IN x Houston ab") == ["flood", "in", "houston", "ab"]


def test_cooccurrence_counts_document_level():
    corpus = text_corpus(["flood water", "flood wind", "water flood flood"])
    counts = build_cooccurrence(corpus)
    assert counts.doc_count == 3
    assert counts.word_counts["flood"] == 3
    assert counts.word_counts["water"] == 2
    assert counts.pair_count("flood", "water") == 2
    assert counts.pair_count("water", "flood") == 2  # symmetric lookup
    assert counts.pair_count("water", "wind") == 0


def test_cooccurrence_requires_text():
    corpus = corpus_from_arrays(["a"], np.ones((1, 3), dtype=np.float32),
                                np.zeros((1, 2)))
    with pytest.raises(ValueError, match="without text"):
        build_cooccurrence(corpus)


# --- keyword extraction ----------------------------------------------------------


def test_keywords_disjoint_vocabularies():
    corpus = text_corpus(["flood flood", "wind wind"])
    kws = extract_keywords(corpus, [0, 1], k=2, k_kw=5)
    assert kws[0].terms == ["flood"]
    assert kws[1].terms == ["wind"]


def test_keywords_shared_word_ranks_below_exclusive():
    corpus = text_corpus(["shared flood", "shared wind", "shared quake"])
    kws = extract_keywords(corpus, [0, 1, 2], k=3, k_kw=1)
    assert [tk.terms[0] for tk in kws] == ["flood", "wind", "quake"]


def test_keywords_empty_cluster_flagged():
    corpus = text_corpus(["flood water"])
    kws = extract_keywords(corpus, [1], k=3, k_kw=5)
    assert kws[0].keywords == [] and kws[2].keywords == []
    assert kws[1].terms == ["flood", "water"]


def test_keywords_recover_planted_vocabulary():
    spec = synthetic.SynthSpec(n=400, d=8, topics=3, seed=20, noise_rate=0.15)
    corpus, labels = synthetic.generate(spec)
    kws = extract_keywords(corpus, labels, k=3, k_kw=15)
    for t in range(3):
        planted = {f"topic{t}word{j}" for j in range(12)}
        recovered = planted & set(kws[t].terms)
        assert len(recovered) >= 0.8 * len(planted)


def test_keywords_require_text():
    corpus = corpus_from_arrays(["a"], np.ones((1, 3), dtype=np.float32),
                                np.zeros((1, 2)))
    with pytest.raises(ValueError, match="keyword extraction unavailable"):
        extract_keywords(corpus, [0], k=1)


# --- NPPMI -----------------------------------------------------------------------


def test_nppmi_perfect_association():
    c = counts_of(D=10, c_i=4, c_j=4, c_ij=4)
    assert nppmi("a", "b", c) == pytest.approx(1.0, abs=1e-9)


def test_nppmi_independent_words():
    c = counts_of(D=4, c_i=2, c_j=2, c_ij=1)  # P(ij) = 0.25 = P(i)P(j)
    assert nppmi("a", "b", c) == pytest.approx(0.0, abs=1e-9)


def test_nppmi_scalar_evaluation():
    c = counts_of(D=10, c_i=4, c_j=5, c_ij=3)
    expected = math.log(0.3 / 0.2) / (-math.log(0.3))
    assert nppmi("a", "b", c) == pytest.approx(expected, abs=1e-9)
    assert expected == pytest.approx(0.3368, abs=5e-5)


def test_nppmi_zero_cooccurrence():
    c = counts_of(D=10, c_i=4, c_j=5, c_ij=0)
    assert nppmi("a", "b", c) == 0.0


def test_nppmi_unknown_word():
    c = counts_of(D=10, c_i=4, c_j=5, c_ij=3)
    with pytest.raises(ValueError, match="not in vocabulary"):
        nppmi("a", "zzz", c)


def test_nppmi_bounds_and_symmetry_fuzz():
    rng = np.random.default_rng(99)
    for _ in range(10_000):
        d = int(rng.integers(1, 500))
        c_i = int(rng.integers(1, d + 1))
        c_j = int(rng.integers(1, d + 1))
        c_ij = int(rng.integers(0, min(c_i, c_j) + 1))
        c = counts_of(d, c_i, c_j, c_ij)
        v = nppmi("a", "b", c)
        assert 0.0 <= v <= 1.0
        c_swapped = counts_of(d, c_j, c_i, c_ij, wi="b", wj="a")
        assert nppmi("b", "a", c_swapped) == pytest.approx(v, abs=1e-12)


# --- TC / TD / TQ -----------------------------------------------------------------


def test_topic_coherence_always_cooccurring():
    corpus = text_corpus(["aa bb cc", "aa bb cc", "dd"])
    counts = build_cooccurrence(corpus)
    topic = TopicKeywords(topic=0, keywords=[("aa", 1.0), ("bb", 0.9), ("cc", 0.8)])
    assert topic_coherence([topic], counts) == pytest.approx(1.0, abs=1e-9)


def test_topic_coherence_independent_words():
    # each pair co-occurs in exactly the product-rate number of documents
    corpus = text_corpus(["aa bb", "aa", "bb", ""])  # P(aa)=P(bb)=0.5, P(ab)=0.25
    counts = build_cooccurrence(corpus)
    topic = TopicKeywords(topic=0, keywords=[("aa", 1.0), ("bb", 0.9)])
    assert topic_coherence([topic], counts) == pytest.approx(0.0, abs=1e-9)


def test_topic_coherence_matches_pair_enumeration_oracle():
    spec = synthetic.SynthSpec(n=300, d=8, topics=2, seed=21, noise_rate=0.2)
    corpus, labels = synthetic.generate(spec)
    counts = build_cooccurrence(corpus)
    kws = extract_keywords(corpus, labels, k=2, k_kw=8)
    tc = topic_coherence(kws, counts)

    def oracle_nppmi(wi, wj):
        d = counts.doc_count
        pij = counts.pair_count(wi, wj) / d
        if pij == 0:
            return 0.0
        pmi = math.log((pij + 1e-12) / (counts.word_counts[wi] / d
                                        * counts.word_counts[wj] / d + 1e-12))
        return min(1.0, max(0.0, pmi) / (-math.log(pij + 1e-12)))

    per_topic = []
    for tk in kws:
        vals = [oracle_nppmi(a, b)
                for i, a in enumerate(tk.terms) for b in tk.terms[i + 1:]]
        per_topic.append(sum(vals) / len(vals))
    assert tc == pytest.approx(sum(per_topic) / len(per_topic), abs=1e-12)


def test_topic_coherence_invalid_topics_excluded():
    corpus = text_corpus(["aa bb", "aa bb", "cc"])
    counts = build_cooccurrence(corpus)
    good = TopicKeywords(topic=0, keywords=[("aa", 1.0), ("bb", 0.5)])
    empty = TopicKeywords(topic=1, keywords=[])
    assert topic_coherence([good, empty], counts) == pytest.approx(1.0, abs=1e-9)
    assert per_topic_coherence([empty], counts)[1] is None
    with pytest.raises(ValueError, match="no valid topics"):
        topic_coherence([empty], counts)


def test_topic_coherence_keyword_order_invariant():
    corpus = text_corpus(["aa bb cc", "aa cc", "bb cc"])
    counts = build_cooccurrence(corpus)
    fwd = TopicKeywords(topic=0, keywords=[("aa", 3.0), ("bb", 2.0), ("cc", 1.0)])
    rev = TopicKeywords(topic=0, keywords=[("cc", 3.0), ("bb", 2.0), ("aa", 1.0)])
    assert topic_coherence([fwd], counts) == pytest.approx(
        topic_coherence([rev], counts), abs=1e-12)


def topic_list(*term_lists):
    return [TopicKeywords(topic=i, keywords=[(t, 1.0) for t in terms])
            for i, terms in enumerate(term_lists)]


def test_topic_diversity_identical_lists():
    topics = topic_list(["aa", "bb"], ["aa", "bb"], ["aa", "bb"])
    assert topic_diversity(topics, 2) == pytest.approx(1 / 3)


def test_topic_diversity_disjoint():
    topics = topic_list(["aa", "bb"], ["cc", "dd"])
    assert topic_diversity(topics, 2) == pytest.approx(1.0)


def test_topic_diversity_direct_count():
    topics = topic_list(["aa", "bb"], ["bb", "cc"], ["dd", "ee"])
    assert topic_diversity(topics, 2) == pytest.approx(5 / 6)


def test_topic_diversity_order_invariant():
    t1 = topic_list(["aa", "bb"], ["bb", "cc"])
    t2 = topic_list(["bb", "cc"], ["aa", "bb"])
    assert topic_diversity(t1, 2) == topic_diversity(t2, 2)


@pytest.mark.parametrize("tc,td,expected", [(1.0, 1.0, 1.0), (0.7, 0.0, 0.0),
                                            (0.5, 0.8, 0.4)])
def test_topic_quality_product(tc, td, expected):
    assert topic_quality(tc, td) == pytest.approx(expected)


def test_topic_quality_bounds():
    with pytest.raises(ValueError):
        topic_quality(1.2, 0.5)
    with pytest.raises(ValueError):
        topic_quality(0.5, -0.1)


def test_topics_report_schema():
    spec = synthetic.SynthSpec(n=120, d=8, topics=2, seed=22)
    corpus, labels = synthetic.generate(spec)
    payload = topics_report(corpus, labels, k=2, k_kw=10)
    assert {t["topic"] for t in payload["topics"]} == {0, 1}
    summary = payload["corpus"]
    assert 0.0 <= summary["tc"] <= 1.0
    assert 0.0 < summary["td"] <= 1.0
    assert summary["tq"] == pytest.approx(summary["tc"] * summary["td"], abs=1e-15)
    assert summary["valid_topics"] == 2
    for t in payload["topics"]:
        assert t["n_docs"] > 0
        assert all(set(kw) == {"term", "score"} for kw in t["keywords"])
