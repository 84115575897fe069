"""Corpus ingestion: tokenization, vocabulary, token-id streams, noise sampling.

Text corpora are plain UTF-8, one sentence per line; a blank line ends a
document, and a file with no blank lines is a single document.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import EmptyVocabularyError

# Sentinel id for tokens outside the vocabulary. Kept in token streams (it
# occupies a window position) but never emitted as a context or target.
UNKNOWN_ID = -1

NOISE_POWER = 0.75


def _strip_edges(token: str) -> str:
    """Drop leading/trailing non-alphanumeric characters, keep internal ones."""
    start, end = 0, len(token)
    while start < end and not token[start].isalnum():
        start += 1
    while end > start and not token[end - 1].isalnum():
        end -= 1
    return token[start:end]


def tokenize(line: str, lowercase: bool = True, strip_edge_punct: bool = True) -> list[str]:
    """Split a line into tokens.

    Tokens are whitespace-separated, lowercased by default, with edge
    punctuation stripped ("sat." -> "sat") while internal punctuation is
    kept ("ice-maker" stays intact). Tokens that strip to nothing vanish.
    """
    if lowercase:
        line = line.lower()
    tokens = []
    for token in line.split():
        if strip_edge_punct:
            token = _strip_edges(token)
        if token:
            tokens.append(token)
    return tokens


@dataclass
class Vocabulary:
    """Word/id bijection with raw corpus counts.

    Ids are assigned by descending frequency with lexicographic tie-break,
    so rebuilding from the same corpus always yields the same ids.
    `total_tokens` counts every corpus token, including words dropped for
    falling below `min_count`.
    """

    words: list[str]
    index: dict[str, int]
    counts: np.ndarray
    total_tokens: int
    min_count: int

    @property
    def n_words(self) -> int:
        return len(self.words)

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self.index

    def get(self, word: str) -> int:
        """Id of `word`, or UNKNOWN_ID if it is out of vocabulary."""
        return self.index.get(word, UNKNOWN_ID)

    def encode(self, tokens: Sequence[str]) -> np.ndarray:
        """Map tokens to an int32 id array, UNKNOWN_ID for OOV tokens."""
        index = self.index
        return np.fromiter(
            (index.get(t, UNKNOWN_ID) for t in tokens), dtype=np.int32, count=len(tokens)
        )

    def save_tsv(self, path) -> None:
        """Write word, count, id columns (one word per line)."""
        with open(path, "w", encoding="utf-8") as fh:
            for i, word in enumerate(self.words):
                fh.write(f"{word}\t{int(self.counts[i])}\t{i}\n")


def build_vocabulary(token_stream: Iterable[str], min_count: int) -> Vocabulary:
    """Build a Vocabulary from a stream of tokens.

    Keeps exactly the words occurring at least `min_count` times. Raises
    EmptyVocabularyError when nothing survives the threshold.
    """
    if min_count < 1:
        raise ValueError(f"min_count must be >= 1, got {min_count}")
    counter = Counter(token_stream)
    total_tokens = sum(counter.values())
    kept = [(word, count) for word, count in counter.items() if count >= min_count]
    if not kept:
        raise EmptyVocabularyError(
            f"no word occurs at least {min_count} times (corpus has {total_tokens} tokens)"
        )
    kept.sort(key=lambda wc: (-wc[1], wc[0]))
    words = [word for word, _ in kept]
    counts = np.array([count for _, count in kept], dtype=np.int64)
    index = {word: i for i, word in enumerate(words)}
    return Vocabulary(words=words, index=index, counts=counts,
                      total_tokens=total_tokens, min_count=min_count)


def discard_probability(count: int, total: int, t: float) -> float:
    """Probability of dropping a word during subsampling.

    Uses keep = min(1, (sqrt(f/t) + 1) * (t/f)) with f = count/total.
    `t <= 0` disables subsampling (discard probability 0 for every word).
    """
    if t <= 0:
        return 0.0
    if count < 1 or total < count:
        raise ValueError(f"need 1 <= count <= total, got count={count} total={total}")
    f = count / total
    keep = (math.sqrt(f / t) + 1.0) * (t / f)
    return 1.0 - min(1.0, keep)


class NoiseSampler:
    """Draws word ids with probability proportional to count**0.75.

    Sampling inverts the cumulative distribution with a binary search, so
    the realized distribution is exact (no quantized unigram table).
    """

    def __init__(self, counts: np.ndarray, power: float = NOISE_POWER):
        counts = np.asarray(counts, dtype=np.float64)
        if counts.ndim != 1 or len(counts) == 0:
            raise ValueError("counts must be a non-empty 1-d array")
        self.power = power
        cdf = np.cumsum(counts**power)
        self._cdf = cdf / cdf[-1]

    @property
    def n_words(self) -> int:
        return len(self._cdf)

    def draw(self, k: int, rng: np.random.Generator) -> np.ndarray:
        """Draw `k` ids (with replacement, no exclusion)."""
        return np.searchsorted(self._cdf, rng.random(k), side="right").astype(np.int64)


def sample_negatives(
    sampler: NoiseSampler, k: int, exclude: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw `k` noise word ids, never equal to `exclude`.

    Collisions with the excluded id are redrawn, which realizes the
    count**0.75 distribution conditioned on the remaining words.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if sampler.n_words < 2:
        raise ValueError("need at least 2 words to sample negatives with an exclusion")
    out = sampler.draw(k, rng)
    while True:
        bad = out == exclude
        n_bad = int(bad.sum())
        if n_bad == 0:
            return out
        out[bad] = sampler.draw(n_bad, rng)


@dataclass
class TokenDocument:
    """A tokenized document: sentences of normalized tokens plus their ids.

    `sentences` holds the normalized (lowercased) surface tokens used for
    vocabulary lookup; OOV tokens keep their surface here and carry
    UNKNOWN_ID in `ids`, so context vectors for OOV words stay computable.
    `raw_sentences` preserves the original surfaces when they differ
    (e.g. cased NER tokens); `labels` are per-token tag strings.
    """

    doc_id: int
    sentences: list[list[str]]
    ids: list[np.ndarray]
    raw_sentences: list[list[str]] | None = None
    labels: list[list[str]] | None = None

    def __post_init__(self):
        if len(self.sentences) != len(self.ids):
            raise ValueError("sentences and ids must align")
        for tokens, ids in zip(self.sentences, self.ids):
            if len(tokens) != len(ids):
                raise ValueError("token/id sentence lengths must align")

    @property
    def n_tokens(self) -> int:
        return sum(len(s) for s in self.sentences)

    def positions_of(self, word: str) -> list[tuple[int, int]]:
        """(sentence, token) positions where the normalized surface matches."""
        return [
            (si, ti)
            for si, sent in enumerate(self.sentences)
            for ti, token in enumerate(sent)
            if token == word
        ]


def make_document(
    sentences: list[list[str]],
    vocab: Vocabulary,
    doc_id: int = 0,
    raw_sentences: list[list[str]] | None = None,
    labels: list[list[str]] | None = None,
) -> TokenDocument:
    """Encode pre-tokenized (already normalized) sentences into a TokenDocument."""
    ids = [vocab.encode(sent) for sent in sentences]
    return TokenDocument(doc_id=doc_id, sentences=sentences, ids=ids,
                         raw_sentences=raw_sentences, labels=labels)


class LineCorpus:
    """Restartable token stream over a one-sentence-per-line text file."""

    def __init__(self, path, lowercase: bool = True, strip_edge_punct: bool = True):
        self.path = Path(path)
        self.lowercase = lowercase
        self.strip_edge_punct = strip_edge_punct

    def iter_sentences(self) -> Iterator[list[str]]:
        """Yield non-empty sentences as token lists."""
        with open(self.path, encoding="utf-8") as fh:
            for line in fh:
                tokens = tokenize(line, self.lowercase, self.strip_edge_punct)
                if tokens:
                    yield tokens

    def iter_tokens(self) -> Iterator[str]:
        for sentence in self.iter_sentences():
            yield from sentence

    def iter_document_sentences(self) -> Iterator[list[list[str]]]:
        """Yield documents (lists of sentences), split on blank lines."""
        doc: list[list[str]] = []
        with open(self.path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    if doc:
                        yield doc
                        doc = []
                    continue
                tokens = tokenize(line, self.lowercase, self.strip_edge_punct)
                if tokens:
                    doc.append(tokens)
        if doc:
            yield doc

    def iter_documents(self, vocab: Vocabulary) -> Iterator[TokenDocument]:
        for doc_id, sentences in enumerate(self.iter_document_sentences()):
            yield make_document(sentences, vocab, doc_id=doc_id)


class EncodedCorpus:
    """Restartable stream of sentence id arrays for training/accumulation.

    Small corpora are materialized in memory; larger ones are re-encoded
    from disk on every pass (`materialize_limit` counts tokens).
    """

    def __init__(self, source: LineCorpus, vocab: Vocabulary,
                 materialize_limit: int = 100_000_000):
        self._source = source
        self._vocab = vocab
        self._sentences: list[np.ndarray] | None = None
        if vocab.total_tokens <= materialize_limit:
            self._sentences = [vocab.encode(s) for s in source.iter_sentences()]

    def __iter__(self) -> Iterator[np.ndarray]:
        if self._sentences is not None:
            return iter(self._sentences)
        return (self._vocab.encode(s) for s in self._source.iter_sentences())


def encode_sentences(sentences: Iterable[Sequence[str]], vocab: Vocabulary) -> list[np.ndarray]:
    """Encode in-memory token sentences into id arrays (UNKNOWN_ID for OOV)."""
    return [vocab.encode(s) for s in sentences]
