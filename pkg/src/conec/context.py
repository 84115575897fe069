"""Context-vector accumulation and embedding synthesis.

A word's context vector (CV) marks which vocabulary words co-occur with it
inside a fixed window: binary per occurrence, averaged over occurrences.
Multiplying a (global, local, or mixed) CV with the trained input matrix
yields an embedding, which also covers out-of-vocabulary words via their
local contexts.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .corpus import UNKNOWN_ID, TokenDocument, Vocabulary
from .errors import (
    MissingWordError,
    UnresolvableWordError,
    WordNotInDocumentError,
)

logger = logging.getLogger(__name__)

CV_KINDS = ("binary", "global", "local", "mixed")

# Positions per vectorized block when accumulating, and buffered (word,
# context) pairs per sparse-matrix flush. Both only bound peak memory.
_BLOCK_POSITIONS = 262_144
_FLUSH_PAIRS = 8_000_000


@dataclass
class ContextVector:
    """Sparse nonnegative vector over the vocabulary.

    `ids` are sorted unique word ids; `weights` align with them and lie in
    [0, 1] for every kind (mixed vectors stay there by convexity).
    """

    ids: np.ndarray
    weights: np.ndarray
    kind: str

    def __post_init__(self):
        if self.kind not in CV_KINDS:
            raise ValueError(f"unknown CV kind {self.kind!r}")
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.ids.shape != self.weights.shape:
            raise ValueError("ids and weights must align")

    @property
    def nnz(self) -> int:
        return len(self.ids)

    def as_dict(self) -> dict[int, float]:
        return {int(i): float(w) for i, w in zip(self.ids, self.weights)}

    @classmethod
    def from_dict(cls, entries: dict[int, float], kind: str) -> "ContextVector":
        ids = np.array(sorted(entries), dtype=np.int64)
        weights = np.array([entries[int(i)] for i in ids], dtype=np.float64)
        return cls(ids=ids, weights=weights, kind=kind)

    def l2_normalized(self) -> "ContextVector":
        """Copy with unit L2 weights; an empty/zero CV is returned unchanged."""
        norm = float(np.linalg.norm(self.weights))
        if norm == 0.0:
            return ContextVector(self.ids.copy(), self.weights.copy(), self.kind)
        return ContextVector(self.ids.copy(), self.weights / norm, self.kind)


def binary_cv(
    sentence: Sequence[int] | np.ndarray,
    position: int,
    window: int,
    include_target: bool = False,
) -> ContextVector:
    """Binary CV of one occurrence: 1.0 per distinct in-vocabulary word
    within `window` tokens either side (full window, clipped at sentence
    boundaries), plus the target itself when `include_target`.

    Repeats inside the window stay at 1.0; OOV sentinels contribute nothing.
    """
    ids = np.asarray(sentence)
    if not 0 <= position < len(ids):
        raise IndexError(f"position {position} outside sentence of {len(ids)} tokens")
    lo = max(0, position - window)
    hi = min(len(ids), position + window + 1)
    context = np.concatenate((ids[lo:position], ids[position + 1 : hi]))
    if include_target and ids[position] != UNKNOWN_ID:
        context = np.append(context, ids[position])
    entries = np.unique(context[context != UNKNOWN_ID]).astype(np.int64)
    return ContextVector(ids=entries, weights=np.ones(len(entries)), kind="binary")


class ContextCountStore:
    """Accumulated binary CVs per word, plus occurrence totals.

    `counts` is a CSR matrix of integer co-occurrence counts (row = word,
    column = context word); `occ[w]` is the number of occurrences of `w`
    that contributed, including occurrences with an empty context. Rows are
    kept sparse because a dense vocabulary-squared matrix is infeasible at
    realistic vocabulary sizes.
    """

    def __init__(
        self,
        n_words: int,
        window: int,
        include_target: bool,
        counts: sp.csr_matrix | None = None,
        occ: np.ndarray | None = None,
    ):
        if window < 1:
            raise ValueError(f"window must be >= 1, got {window}")
        self.n_words = n_words
        self.window = window
        self.include_target = include_target
        if counts is None:
            counts = sp.csr_matrix((n_words, n_words), dtype=np.int64)
        if occ is None:
            occ = np.zeros(n_words, dtype=np.int64)
        if counts.shape != (n_words, n_words):
            raise ValueError("counts matrix shape must be (n_words, n_words)")
        if occ.shape != (n_words,):
            raise ValueError("occ shape must be (n_words,)")
        self.counts = counts.tocsr()
        self.counts.sort_indices()
        self.occ = occ.astype(np.int64)

    @property
    def nnz(self) -> int:
        return self.counts.nnz

    def row(self, word_id: int) -> tuple[np.ndarray, np.ndarray]:
        """Sorted (context ids, accumulated counts) for one word."""
        sl = slice(self.counts.indptr[word_id], self.counts.indptr[word_id + 1])
        return (
            self.counts.indices[sl].astype(np.int64),
            self.counts.data[sl].copy(),
        )

    def merge(self, other: "ContextCountStore") -> "ContextCountStore":
        """Add another store built with the same geometry (sharded workers)."""
        if (other.n_words, other.window, other.include_target) != (
            self.n_words,
            self.window,
            self.include_target,
        ):
            raise ValueError("cannot merge stores with different geometry")
        merged = (self.counts + other.counts).tocsr()
        merged.sort_indices()
        return ContextCountStore(
            self.n_words, self.window, self.include_target,
            counts=merged, occ=self.occ + other.occ,
        )

    def embedding_matrix(self, W0: np.ndarray) -> np.ndarray:
        """All-words global-CV embeddings: row w is global_cv(w) . W0.

        Words with no accumulated occurrence get a zero row.
        """
        out = np.zeros((self.n_words, W0.shape[1]), dtype=np.float64)
        have = self.occ > 0
        if have.any():
            raw = self.counts @ W0.astype(np.float64)
            out[have] = raw[have] / self.occ[have, None]
        return out

    def export_tsv(self, pairs_path, occ_path, vocab: Vocabulary) -> None:
        """Write (word, context word, count) triples and per-word occurrence counts."""
        coo = self.counts.tocoo()
        with open(pairs_path, "w", encoding="utf-8") as fh:
            for r, c, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{vocab.words[r]}\t{vocab.words[c]}\t{int(v)}\n")
        with open(occ_path, "w", encoding="utf-8") as fh:
            for i, word in enumerate(vocab.words):
                fh.write(f"{word}\t{int(self.occ[i])}\n")


class _StoreBuilder:
    """Streaming accumulator that flushes buffered pairs into CSR form."""

    def __init__(self, n_words: int, window: int, include_target: bool):
        self.n_words = n_words
        self.window = window
        self.include_target = include_target
        self.occ = np.zeros(n_words, dtype=np.int64)
        self._rows: list[np.ndarray] = []
        self._cols: list[np.ndarray] = []
        self._pending = 0
        self._counts = sp.csr_matrix((n_words, n_words), dtype=np.int64)

    def add_sentence(self, ids: np.ndarray) -> None:
        ids = np.asarray(ids, dtype=np.int64)
        n = len(ids)
        if n == 0:
            return
        valid = ids != UNKNOWN_ID
        if valid.any():
            self.occ += np.bincount(ids[valid], minlength=self.n_words)
        for start in range(0, n, _BLOCK_POSITIONS):
            self._add_block(ids, start, min(start + _BLOCK_POSITIONS, n))
            if self._pending >= _FLUSH_PAIRS:
                self._flush()

    def _add_block(self, ids: np.ndarray, lo: int, hi: int) -> None:
        """Emit deduplicated (occurrence position, context id) pairs for
        target positions in [lo, hi); context windows may reach outside the
        block but never outside the sentence."""
        n = len(ids)
        pos_parts: list[np.ndarray] = []
        ctx_parts: list[np.ndarray] = []
        for delta in range(1, self.window + 1):
            # context `delta` to the right of the target
            t1 = min(hi, n - delta)
            if t1 > lo:
                pos_parts.append(np.arange(lo, t1, dtype=np.int64))
                ctx_parts.append(ids[lo + delta : t1 + delta])
            # context `delta` to the left
            t0 = max(lo, delta)
            if hi > t0:
                pos_parts.append(np.arange(t0, hi, dtype=np.int64))
                ctx_parts.append(ids[t0 - delta : hi - delta])
        if self.include_target:
            pos_parts.append(np.arange(lo, hi, dtype=np.int64))
            ctx_parts.append(ids[lo:hi])
        if not pos_parts:
            return
        pos = np.concatenate(pos_parts)
        ctx = np.concatenate(ctx_parts)
        keep = (ctx != UNKNOWN_ID) & (ids[pos] != UNKNOWN_ID)
        pos, ctx = pos[keep], ctx[keep]
        if len(pos) == 0:
            return
        # Binary per occurrence: the same context word at two offsets of one
        # occurrence must count once, so dedupe on (position, context id).
        keys = np.unique(pos * np.int64(self.n_words) + ctx)
        pos = keys // self.n_words
        ctx = keys % self.n_words
        self._rows.append(ids[pos].astype(np.int32))
        self._cols.append(ctx.astype(np.int32))
        self._pending += len(keys)

    def _flush(self) -> None:
        if not self._rows:
            return
        rows = np.concatenate(self._rows)
        cols = np.concatenate(self._cols)
        ones = np.ones(len(rows), dtype=np.int64)
        chunk = sp.coo_matrix((ones, (rows, cols)), shape=(self.n_words, self.n_words))
        self._counts = (self._counts + chunk.tocsr()).tocsr()
        self._rows, self._cols, self._pending = [], [], 0

    def finish(self) -> ContextCountStore:
        self._flush()
        self._counts.sort_indices()
        return ContextCountStore(
            self.n_words, self.window, self.include_target,
            counts=self._counts, occ=self.occ,
        )


def accumulate_global(
    corpus: Iterable[np.ndarray],
    vocab: Vocabulary,
    window: int = 5,
    include_target: bool = False,
    workers: int = 1,
) -> ContextCountStore:
    """Accumulate every in-vocabulary occurrence's binary CV into a store.

    `corpus` yields sentence id arrays (OOV as UNKNOWN_ID). Averaging by
    occurrence count is deferred to `global_cv`. With `workers > 1`,
    sentences are sharded round-robin into private stores that are merged
    by addition afterwards; accumulation is additive, so the result is
    identical.
    """
    if workers <= 1:
        builder = _StoreBuilder(vocab.n_words, window, include_target)
        for ids in corpus:
            builder.add_sentence(ids)
        return builder.finish()

    builders = [_StoreBuilder(vocab.n_words, window, include_target) for _ in range(workers)]
    sentences = list(corpus) if not isinstance(corpus, (list, tuple)) else corpus

    def run(worker_id: int) -> None:
        for i in range(worker_id, len(sentences), workers):
            builders[worker_id].add_sentence(sentences[i])

    threads = [threading.Thread(target=run, args=(w,)) for w in range(workers)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    store = builders[0].finish()
    for b in builders[1:]:
        store = store.merge(b.finish())
    return store


def global_cv(store: ContextCountStore, word_id: int) -> ContextVector:
    """Average of all accumulated binary CVs of `word_id` (entries in [0, 1])."""
    if not 0 <= word_id < store.n_words:
        raise IndexError(f"word id {word_id} outside [0, {store.n_words})")
    occ = int(store.occ[word_id])
    if occ == 0:
        raise MissingWordError(f"word id {word_id} has no accumulated occurrences")
    ids, counts = store.row(word_id)
    return ContextVector(ids=ids, weights=counts.astype(np.float64) / occ, kind="global")


def local_cv(
    document: TokenDocument,
    word: str,
    vocab: Vocabulary,
    window: int = 5,
    include_target: bool = False,
) -> ContextVector:
    """Average of the binary CVs of `word`'s occurrences within one document.

    Occurrences are matched on the normalized surface form, so OOV words
    qualify. Raises WordNotInDocumentError when the word does not occur.
    """
    positions = document.positions_of(word)
    if not positions:
        raise WordNotInDocumentError(f"{word!r} does not occur in document {document.doc_id}")
    total: dict[int, float] = {}
    for si, ti in positions:
        cv = binary_cv(document.ids[si], ti, window, include_target)
        for i, w in zip(cv.ids, cv.weights):
            total[int(i)] = total.get(int(i), 0.0) + w
    m = len(positions)
    return ContextVector.from_dict({i: w / m for i, w in total.items()}, kind="local")


def mix_cv(global_vec: ContextVector, local_vec: ContextVector, a: float) -> ContextVector:
    """Convex combination a*global + (1-a)*local, entrywise over the union.

    The endpoints and the equal-input case return the argument's entries
    unchanged: those identities are exact in real arithmetic and keeping
    them exact in floats means downstream embeddings collapse exactly too.
    Zero-weight entries are pruned.
    """
    if not 0.0 <= a <= 1.0:
        raise ValueError(f"mixing weight a must lie in [0, 1], got {a}")
    if a == 1.0:
        return ContextVector(global_vec.ids.copy(), global_vec.weights.copy(), "mixed")
    if a == 0.0:
        return ContextVector(local_vec.ids.copy(), local_vec.weights.copy(), "mixed")
    if np.array_equal(global_vec.ids, local_vec.ids) and np.array_equal(
        global_vec.weights, local_vec.weights
    ):
        return ContextVector(global_vec.ids.copy(), global_vec.weights.copy(), "mixed")
    ids = np.union1d(global_vec.ids, local_vec.ids)
    weights = np.zeros(len(ids), dtype=np.float64)
    weights[np.searchsorted(ids, global_vec.ids)] += a * global_vec.weights
    weights[np.searchsorted(ids, local_vec.ids)] += (1.0 - a) * local_vec.weights
    keep = weights != 0.0
    return ContextVector(ids=ids[keep], weights=weights[keep], kind="mixed")


def synthesize_embedding(cv: ContextVector, W0: np.ndarray) -> np.ndarray:
    """Sparse CV times dense input matrix: sum_j cv[j] * W0[j].

    An empty CV maps to the zero vector.
    """
    if cv.nnz == 0:
        return np.zeros(W0.shape[1], dtype=np.float64)
    return cv.weights @ W0[cv.ids]


def embed_word(
    word: str,
    store: ContextCountStore,
    W0: np.ndarray,
    vocab: Vocabulary,
    document: TokenDocument | None = None,
    a: float = 0.6,
    normalize: bool = False,
) -> np.ndarray:
    """Embedding of `word` from its context vectors.

    In-vocabulary words use their global CV, mixed with the local CV of
    `document` by weight `a` when a document is given (a word absent from
    the document falls back to its global CV alone). OOV words require a
    document and use only their local CV (the a = 0 rule); an OOV word
    without a document raises UnresolvableWordError. `normalize` rescales
    the combined CV to unit L2 norm before the matrix product.
    """
    word = word.lower()
    word_id = vocab.get(word)
    if word_id == UNKNOWN_ID:
        if document is None:
            raise UnresolvableWordError(
                f"{word!r} is out of vocabulary and no document was supplied"
            )
        cv = local_cv(document, word, vocab, store.window, store.include_target)
    else:
        try:
            gcv = global_cv(store, word_id)
        except MissingWordError:
            # Vocabulary word absent from the accumulation corpus: only a
            # document can still provide context.
            if document is None:
                raise
            cv = local_cv(document, word, vocab, store.window, store.include_target)
        else:
            if document is None or not document.positions_of(word):
                cv = gcv
            else:
                lcv = local_cv(document, word, vocab, store.window, store.include_target)
                cv = mix_cv(gcv, lcv, a)
    if normalize:
        cv = cv.l2_normalized()
    return synthesize_embedding(cv, W0)
