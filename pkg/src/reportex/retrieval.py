"""Retrieval-augmented context selection: chunking, BM25, dense search, fusion,
reranking, and the relevance-threshold fallback to the full report."""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .corpus import LabelSchema, Report

RRF_K = 60  # reciprocal-rank fusion constant

_TOKEN_RE = re.compile(r"[0-9a-z]+(?:/[0-9a-z]+)*")


def tokenize(text: str) -> list[str]:
    """Case-folded alphanumeric tokens; slash compounds like idh1/idh2 yield the
    compound plus both parts."""
    tokens: list[str] = []
    for m in _TOKEN_RE.finditer(text.casefold()):
        tok = m.group()
        if "/" in tok:
            tokens.append(tok)
            tokens.extend(t for t in tok.split("/") if t)
        else:
            tokens.append(tok)
    return tokens


@dataclass(frozen=True)
class Chunk:
    report_id: str
    index: int
    text: str
    start: int
    end: int

    @property
    def char_span(self) -> tuple[int, int]:
        return (self.start, self.end)


def split_recursive(text: str, chunk_size: int = 70, overlap: int = 20, report_id: str = "") -> list[Chunk]:
    """Split text into chunks of at most chunk_size characters.

    Split points prefer ". ", then "; ", then " ", then a hard character cut.
    Sentence-separator splits are clean boundaries; mid-sentence splits carry
    `overlap` characters into the next chunk. Spans index into the input, and
    every character offset is covered by at least one chunk.
    """
    if overlap < 0 or chunk_size <= overlap:
        raise ValueError("require chunk_size > overlap >= 0")
    n = len(text)
    if n == 0:
        return []
    chunks: list[Chunk] = []
    p = 0
    idx = 0
    while True:
        if n - p <= chunk_size:
            chunks.append(Chunk(report_id, idx, text[p:n], p, n))
            return chunks
        window_end = p + chunk_size
        cut = None
        sentence_cut = False
        for sep in (". ", "; "):
            j = text.rfind(sep, p, window_end)
            if j != -1:
                cut = j + len(sep)
                sentence_cut = True
                break
        if cut is None:
            j = text.rfind(" ", p + 1, window_end)
            if j != -1:
                cut = j + 1
        if cut is None:
            cut = window_end
        chunks.append(Chunk(report_id, idx, text[p:cut], p, cut))
        idx += 1
        p = cut if sentence_cut else max(cut - overlap, p + 1)


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self):
        if self.k1 <= 0:
            raise ValueError("k1 must be positive")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError("b must be in [0, 1]")


class Bm25Stats:
    """Per-report chunk-set statistics: term document frequencies and lengths."""

    def __init__(self, chunks: list[Chunk]):
        self.n_chunks = len(chunks)
        self.tf: list[dict[str, int]] = []
        self.doc_len: list[int] = []
        self.df: dict[str, int] = {}
        for chunk in chunks:
            tokens = tokenize(chunk.text)
            counts: dict[str, int] = {}
            for t in tokens:
                counts[t] = counts.get(t, 0) + 1
            self.tf.append(counts)
            self.doc_len.append(len(tokens))
            for t in counts:
                self.df[t] = self.df.get(t, 0) + 1
        total = sum(self.doc_len)
        self.avgdl = total / self.n_chunks if self.n_chunks else 0.0


def bm25_score(query_terms: list[str], chunk_index: int, stats: Bm25Stats,
               params: Bm25Params = Bm25Params()) -> float:
    """Okapi BM25 score of one chunk against a query term multiset."""
    tf = stats.tf[chunk_index]
    dl = stats.doc_len[chunk_index]
    score = 0.0
    for term in query_terms:
        f = tf.get(term, 0)
        if f == 0:
            continue
        n_t = stats.df[term]
        idf = math.log(1.0 + (stats.n_chunks - n_t + 0.5) / (n_t + 0.5))
        score += idf * f * (params.k1 + 1.0) / (
            f + params.k1 * (1.0 - params.b + params.b * dl / stats.avgdl)
        )
    return score


def bm25_rank(query_terms: list[str], chunks: list[Chunk], stats: Bm25Stats,
              params: Bm25Params = Bm25Params()) -> list[tuple[Chunk, float]]:
    """All chunks ranked by BM25 score descending, ties by chunk index."""
    scored = [(c, bm25_score(query_terms, i, stats, params)) for i, c in enumerate(chunks)]
    scored.sort(key=lambda cs: (-cs[1], cs[0].index))
    return scored


class VectorIndex:
    """Flat exact-search index over unit-normalized chunk embeddings."""

    def __init__(self, chunks: list[Chunk], vectors: np.ndarray):
        matrix = np.asarray(vectors, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != len(chunks):
            raise ValueError("vectors must be a (n_chunks, dimension) matrix")
        norms = np.linalg.norm(matrix, axis=1)
        if matrix.size and np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError("stored vectors must be unit-normalized (L2 norm 1 +- 1e-6)")
        self.chunks = tuple(chunks)
        self.matrix = matrix
        self.dimension = matrix.shape[1] if matrix.size else 0


def dense_search(index: VectorIndex, query_vector, n: int) -> list[tuple[Chunk, float]]:
    """Exhaustive cosine-similarity top-n, descending, ties by chunk index."""
    q = np.asarray(query_vector, dtype=np.float64)
    if q.shape != (index.dimension,):
        raise ValueError(f"query dimension {q.shape} does not match index ({index.dimension},)")
    norm = np.linalg.norm(q)
    if norm > 0:
        q = q / norm
    scores = index.matrix @ q
    order = sorted(range(len(index.chunks)), key=lambda i: (-scores[i], i))
    return [(index.chunks[i], float(scores[i])) for i in order[:n]]


def hybrid_search(ranking_a: list[tuple[Chunk, float]], ranking_b: list[tuple[Chunk, float]],
                  n: int) -> list[tuple[Chunk, float]]:
    """Reciprocal-rank fusion of two rankings over the same chunk set.

    fused(c) = sum over rankings of 1/(RRF_K + rank(c)) with 1-based ranks;
    a chunk missing from a ranking contributes 0 for it. Symmetric in its
    two ranking arguments.
    """
    fused: dict[int, float] = {}
    by_index: dict[int, Chunk] = {}
    for ranking in (ranking_a, ranking_b):
        for pos, (chunk, _) in enumerate(ranking, start=1):
            by_index[chunk.index] = chunk
            fused[chunk.index] = fused.get(chunk.index, 0.0) + 1.0 / (RRF_K + pos)
    order = sorted(fused, key=lambda i: (-fused[i], i))
    return [(by_index[i], fused[i]) for i in order[:n]]


def sequential_search(index: VectorIndex, stats: Bm25Stats, query_terms: list[str],
                      query_vector, shortlist_m: int, n: int,
                      params: Bm25Params = Bm25Params()) -> list[tuple[Chunk, float]]:
    """Dense shortlist of size m, then BM25 re-scoring; ties broken by dense rank.

    `stats` must be built over the same chunk list the index holds.
    """
    if shortlist_m < n:
        raise ValueError("shortlist_m must be >= n")
    position = {chunk.index: pos for pos, chunk in enumerate(index.chunks)}
    shortlist = dense_search(index, query_vector, shortlist_m)
    rescored = []
    for dense_pos, (chunk, _) in enumerate(shortlist):
        score = bm25_score(query_terms, position[chunk.index], stats, params)
        rescored.append((chunk, score, dense_pos))
    rescored.sort(key=lambda t: (-t[1], t[2]))
    return [(chunk, score) for chunk, score, _ in rescored[:n]]


class RerankError(RuntimeError):
    """Scorer failure; carries the index of the failing candidate."""

    def __init__(self, candidate_index: int, message: str):
        super().__init__(f"reranker failed on candidate {candidate_index}: {message}")
        self.candidate_index = candidate_index


class Embedder(Protocol):
    def embed(self, texts: list[str]) -> np.ndarray: ...


class RerankScorer(Protocol):
    def score(self, query: str, passage: str) -> float: ...


def rerank(query: str, candidates: list[Chunk], scorer: RerankScorer) -> list[tuple[Chunk, float]]:
    """Score every candidate, clamp to [0, 1], sort descending, ties by input order."""
    scored = []
    for i, chunk in enumerate(candidates):
        try:
            s = float(scorer.score(query, chunk.text))
        except Exception as e:
            raise RerankError(i, str(e)) from e
        scored.append((i, chunk, min(max(s, 0.0), 1.0)))
    scored.sort(key=lambda t: (-t[2], t[0]))
    return [(chunk, score) for _, chunk, score in scored]


class MockHashEmbedder:
    """Deterministic seeded-hash embedder: a text's vector is the normalized sum
    of per-token gaussian vectors, so shared tokens raise cosine similarity."""

    def __init__(self, dimension: int = 64, seed: int = 0):
        self.dimension = dimension
        self.seed = seed
        self._token_cache: dict[str, np.ndarray] = {}

    def _token_vector(self, token: str) -> np.ndarray:
        vec = self._token_cache.get(token)
        if vec is None:
            digest = hashlib.blake2b(f"{self.seed}:{token}".encode("utf-8"), digest_size=8).digest()
            rng = np.random.default_rng(int.from_bytes(digest, "big"))
            vec = rng.standard_normal(self.dimension)
            self._token_cache[token] = vec
        return vec

    def embed(self, texts: list[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dimension))
        for i, text in enumerate(texts):
            tokens = tokenize(text)
            if not tokens:
                continue
            v = np.sum([self._token_vector(t) for t in tokens], axis=0)
            norm = np.linalg.norm(v)
            if norm > 0:
                out[i] = v / norm
        return out


class TokenOverlapReranker:
    """Mock cross-encoder: fraction of distinct query tokens present in the passage."""

    def score(self, query: str, passage: str) -> float:
        q = set(tokenize(query))
        if not q:
            return 0.0
        return len(q & set(tokenize(passage))) / len(q)


class RemoteEmbedder:
    """Embedding backend that calls a model server over the wire protocol."""

    def __init__(self, endpoint: str, model: str, timeout: float = 120.0):
        self.endpoint = endpoint
        self.model = model
        self.timeout = timeout

    def embed(self, texts: list[str]) -> np.ndarray:
        from . import lm_client

        return lm_client.embed(self.endpoint, self.model, texts, timeout=self.timeout)


RETRIEVAL_MODES = ("off", "dense", "hybrid", "sequential")


@dataclass(frozen=True)
class RetrievalSettings:
    mode: str = "off"
    chunk_size: int = 70
    overlap: int = 20
    candidates: int = 4
    shortlist: int = 8
    rerank_threshold: float = 0.2
    embed_model: str = "gte-large"
    bm25_k1: float = 1.2
    bm25_b: float = 0.75

    def __post_init__(self):
        if self.mode not in RETRIEVAL_MODES:
            raise ValueError(f"mode must be one of {RETRIEVAL_MODES}")
        if self.overlap < 0 or self.chunk_size <= self.overlap:
            raise ValueError("require chunk_size > overlap >= 0")
        if self.candidates < 1 or self.shortlist < self.candidates:
            raise ValueError("require shortlist >= candidates >= 1")
        Bm25Params(self.bm25_k1, self.bm25_b)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode, "chunk_size": self.chunk_size, "overlap": self.overlap,
            "candidates": self.candidates, "shortlist": self.shortlist,
            "rerank_threshold": self.rerank_threshold, "embed_model": self.embed_model,
            "bm25_k1": self.bm25_k1, "bm25_b": self.bm25_b,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RetrievalSettings":
        return cls(**d)


@dataclass(frozen=True)
class RetrievedContext:
    selected_text: str
    rag_used: bool
    rerank_score: float | None
    candidates: tuple[tuple[Chunk, float, float], ...]  # (chunk, retrieval score, rerank score)


def _full_report(report: Report, candidates=()) -> RetrievedContext:
    return RetrievedContext(report.text, False, None, tuple(candidates))


def select_context(report: Report, schema: LabelSchema, cfg: RetrievalSettings,
                   embedder: Embedder, reranker: RerankScorer) -> RetrievedContext:
    """Pick the context handed to the model: the best reranked chunk, or the full
    report when retrieval is off or the best rerank score falls below threshold."""
    if cfg.mode == "off":
        return _full_report(report)
    chunks = split_recursive(report.text, cfg.chunk_size, cfg.overlap, report.id)
    # token-less chunks cannot match anything and would embed to zero vectors
    chunks = [c for c in chunks if tokenize(c.text)]
    if not chunks:
        return _full_report(report)

    query = schema.retrieval_keywords
    query_terms = tokenize(query)
    vectors = embedder.embed([c.text for c in chunks])
    index = VectorIndex(chunks, vectors)
    query_vector = embedder.embed([query])[0]

    params = Bm25Params(cfg.bm25_k1, cfg.bm25_b)
    stats = Bm25Stats(chunks)
    n = min(cfg.candidates, len(chunks))
    if cfg.mode == "dense":
        retrieved = dense_search(index, query_vector, n)
    elif cfg.mode == "hybrid":
        lexical = bm25_rank(query_terms, chunks, stats, params)[:n]
        dense = dense_search(index, query_vector, n)
        retrieved = hybrid_search(lexical, dense, n)
    else:  # sequential
        m = max(min(cfg.shortlist, len(chunks)), n)
        retrieved = sequential_search(index, stats, query_terms, query_vector, m, n, params)
    if not retrieved:
        return _full_report(report)

    retrieval_scores = {chunk.index: score for chunk, score in retrieved}
    reranked = rerank(query, [chunk for chunk, _ in retrieved], reranker)
    candidates = tuple(
        (chunk, retrieval_scores[chunk.index], score) for chunk, score in reranked
    )
    best_chunk, best_score = reranked[0]
    if best_score < cfg.rerank_threshold:
        return _full_report(report, candidates)
    return RetrievedContext(best_chunk.text, True, best_score, candidates)
