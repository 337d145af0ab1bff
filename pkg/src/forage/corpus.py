"""Immutable document store with Okapi BM25 retrieval and coverage."""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Protocol

K1 = 1.2
B = 0.75
DEFAULT_TOP_K = 3

_TOKEN = re.compile(r"[^\W_]+")


class CorpusError(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    """Lowercase and split on runs of non-alphanumeric characters."""
    return _TOKEN.findall(text.lower())


@dataclass(frozen=True)
class Document:
    doc_id: str
    title: str
    body: str
    is_distractor: bool = False

    @property
    def text(self) -> str:
        return f"{self.title}\n{self.body}" if self.title else self.body


@dataclass(frozen=True)
class RetrievalResult:
    ranked: tuple[tuple[str, float], ...]
    query: str
    k: int

    @property
    def doc_ids(self) -> list[str]:
        return [d for d, _ in self.ranked]


class Retriever(Protocol):
    def retrieve(self, query: str, k: int = DEFAULT_TOP_K) -> RetrievalResult: ...


@dataclass(frozen=True, eq=False)
class Corpus:
    documents: dict[str, Document]
    index: dict[str, tuple[tuple[str, int], ...]]
    doc_lengths: dict[str, int]
    avg_doc_length: float
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def N(self) -> int:
        return len(self.documents)

    def __len__(self) -> int:
        return len(self.documents)

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self.documents

    def __getitem__(self, doc_id: str) -> Document:
        try:
            return self.documents[doc_id]
        except KeyError:
            raise KeyError(f"unknown doc_id {doc_id!r}") from None

    def idf(self, term: str) -> float:
        n_t = len(self.index.get(term, ()))
        return math.log((self.N - n_t + 0.5) / (n_t + 0.5) + 1.0)

    def _term_weight(self, tf: int, doc_id: str) -> float:
        norm = 1.0 - B + B * self.doc_lengths[doc_id] / self.avg_doc_length
        return tf * (K1 + 1.0) / (tf + K1 * norm)

    def retrieve(self, query: str, k: int = DEFAULT_TOP_K) -> RetrievalResult:
        """Top-``k`` documents by BM25; ties go to the smaller doc_id.

        Documents with no query term (score 0) are never returned.
        """
        if k < 1:
            raise CorpusError("k must be >= 1")
        key = (query, k)
        hit = self._cache.get(key)
        if hit is None:
            hit = self._retrieve(query, k)
            self._cache[key] = hit
        return hit

    def _retrieve(self, query: str, k: int) -> RetrievalResult:
        scores: dict[str, float] = {}
        for term in sorted(set(tokenize(query))):
            postings = self.index.get(term)
            if not postings:
                continue
            idf = self.idf(term)
            for doc_id, tf in postings:
                scores[doc_id] = scores.get(doc_id, 0.0) + idf * self._term_weight(tf, doc_id)
        ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))[:k]
        return RetrievalResult(tuple(ranked), query, k)


def build_index(docs: Iterable[Document]) -> Corpus:
    documents: dict[str, Document] = {}
    for doc in docs:
        if doc.doc_id in documents:
            raise CorpusError(f"duplicate doc_id {doc.doc_id!r}")
        if not doc.body:
            raise CorpusError(f"empty body in document {doc.doc_id!r}")
        documents[doc.doc_id] = doc
    documents = dict(sorted(documents.items()))

    postings: dict[str, list[tuple[str, int]]] = {}
    lengths: dict[str, int] = {}
    for doc_id, doc in documents.items():
        tokens = tokenize(doc.text)
        lengths[doc_id] = len(tokens)
        for term, tf in Counter(tokens).items():
            postings.setdefault(term, []).append((doc_id, tf))
    index = {term: tuple(p) for term, p in sorted(postings.items())}
    avg = sum(lengths.values()) / len(lengths) if lengths else 0.0
    return Corpus(documents, index, lengths, avg)


def bm25_score(corpus: Corpus, query: str, doc_id: str) -> float:
    """BM25 score of one document, summed over the unique query terms."""
    if doc_id not in corpus:
        raise KeyError(f"unknown doc_id {doc_id!r}")
    score = 0.0
    for term in sorted(set(tokenize(query))):
        for posting_id, tf in corpus.index.get(term, ()):
            if posting_id == doc_id:
                score += corpus.idf(term) * corpus._term_weight(tf, doc_id)
                break
    return score


def retrieve(corpus: Retriever, query: str, k: int = DEFAULT_TOP_K) -> RetrievalResult:
    return corpus.retrieve(query, k)


def coverage(retrieved_union: Iterable[str], golden: Iterable[str]) -> float:
    """Recall of ``golden`` by the retrieved documents."""
    golden = set(golden)
    if not golden:
        raise CorpusError("coverage needs a nonempty golden set")
    return len(golden.intersection(retrieved_union)) / len(golden)


def save_corpus(docs: Iterable[Document], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps(asdict(doc), ensure_ascii=False) + "\n")


def load_documents(path: str | Path) -> list[Document]:
    docs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                docs.append(Document(rec["doc_id"], rec.get("title", ""), rec["body"], bool(rec.get("is_distractor"))))
    return docs


def load_corpus(path: str | Path) -> Corpus:
    return build_index(load_documents(path))
