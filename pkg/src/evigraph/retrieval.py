"""BM25 evidence retrieval and tf-idf similarity for NEI evidence selection."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

from .corpus import word_tokens

BM25_K1 = 1.2
BM25_B = 0.75


@dataclass
class InvertedIndex:
    postings: dict[str, list[tuple[str, int]]] = field(default_factory=dict)
    lengths: dict[str, int] = field(default_factory=dict)
    avg_length: float = 0.0
    n_docs: int = 0

    def df(self, term: str) -> int:
        return len(self.postings.get(term, ()))


def bm25_index(sentences: dict[str, str]) -> InvertedIndex:
    """Index a {sentence_id: text} corpus; postings sorted by sentence id."""
    if not sentences:
        raise ValueError("cannot index an empty corpus")
    idx = InvertedIndex(n_docs=len(sentences))
    for sid in sorted(sentences):
        toks = word_tokens(sentences[sid])
        idx.lengths[sid] = len(toks)
        for term, tf in Counter(toks).items():
            idx.postings.setdefault(term, []).append((sid, tf))
    idx.avg_length = sum(idx.lengths.values()) / idx.n_docs
    return idx


def _bm25_idf(n_docs: int, df: int) -> float:
    return math.log(1.0 + (n_docs - df + 0.5) / (df + 0.5))


def bm25_score(index: InvertedIndex, query_tokens, sid: int | str) -> float:
    """Score a single sentence against tokenized query terms (loop form)."""
    dl = index.lengths[sid]
    norm = BM25_K1 * (1.0 - BM25_B + BM25_B * dl / index.avg_length)
    score = 0.0
    for term in query_tokens:
        posting = index.postings.get(term)
        if not posting:
            continue
        tf = next((f for s, f in posting if s == sid), 0)
        if tf == 0:
            continue
        score += _bm25_idf(index.n_docs, len(posting)) * tf * (BM25_K1 + 1.0) / (tf + norm)
    return score


def bm25_topk(index: InvertedIndex, query: str, k: int) -> list[tuple[str, float]]:
    """Top-k (sentence id, score), k1=1.2/b=0.75, ties broken by ascending id."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    q = word_tokens(query)
    if not q:
        return []
    scores: dict[str, float] = {}
    for term in set(q):
        posting = index.postings.get(term)
        if not posting:
            continue
        idf = _bm25_idf(index.n_docs, len(posting))
        mult = q.count(term)
        for sid, tf in posting:
            dl = index.lengths[sid]
            norm = BM25_K1 * (1.0 - BM25_B + BM25_B * dl / index.avg_length)
            scores[sid] = scores.get(sid, 0.0) + mult * idf * tf * (BM25_K1 + 1.0) / (tf + norm)
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked[:k]


# ---------------------------------------------------------------------------
# tf-idf


@dataclass
class TfidfStats:
    df: dict[str, int]
    n_docs: int


def tfidf_stats(texts) -> TfidfStats:
    df: Counter = Counter()
    n = 0
    for text in texts:
        n += 1
        for term in set(word_tokens(text)):
            df[term] += 1
    return TfidfStats(dict(df), n)


def tfidf_vector(text: str, stats: TfidfStats) -> dict[str, float]:
    """Sparse tf-idf weights: tf = raw count, idf = ln((N+1)/(df+1)) + 1."""
    vec = {}
    for term, tf in Counter(word_tokens(text)).items():
        idf = math.log((stats.n_docs + 1.0) / (stats.df.get(term, 0) + 1.0)) + 1.0
        vec[term] = tf * idf
    return vec


def tfidf_similarity(a: dict[str, float], b: dict[str, float]) -> float:
    """Cosine of two sparse non-negative weight vectors; 0 when either is empty."""
    if not a or not b:
        return 0.0
    num = sum(w * b[t] for t, w in a.items() if t in b)
    na = math.sqrt(sum(w * w for w in a.values()))
    nb = math.sqrt(sum(w * w for w in b.values()))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return num / (na * nb)


def select_nei_evidence(claim_text: str, candidates: dict[str, str], k: int,
                        stats: TfidfStats | None = None) -> list[str]:
    """Top-k candidate ids by tf-idf cosine with the claim, id tie-break."""
    if not candidates:
        raise ValueError("candidate set is empty")
    if stats is None:
        stats = tfidf_stats(candidates.values())
    cvec = tfidf_vector(claim_text, stats)
    scored = [(sid, tfidf_similarity(cvec, tfidf_vector(text, stats)))
              for sid, text in candidates.items()]
    scored.sort(key=lambda kv: (-kv[1], kv[0]))
    return [sid for sid, _ in scored[:k]]
