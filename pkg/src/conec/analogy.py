"""Word-analogy evaluation with the additive cosine rule (3CosAdd).

Questions come in the classic four-word format: "a is to b as c is to d",
answered by ranking cos(v, e_b - e_a + e_c) over the whole vocabulary
(minus the three query words).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Vocabulary
from .errors import MalformedLineError
from .vectors import normalize_rows


@dataclass
class AnalogyQuestion:
    a: str
    b: str
    c: str
    d: str
    category: str


@dataclass
class CategoryResult:
    attempted: int = 0
    skipped: int = 0
    correct: int = 0

    @property
    def accuracy(self) -> float:
        return self.correct / self.attempted if self.attempted else 0.0


@dataclass
class AnalogyReport:
    """Per-category and total counts; accuracy is over attempted questions only."""

    categories: dict[str, CategoryResult] = field(default_factory=dict)

    @property
    def attempted(self) -> int:
        return sum(c.attempted for c in self.categories.values())

    @property
    def skipped(self) -> int:
        return sum(c.skipped for c in self.categories.values())

    @property
    def correct(self) -> int:
        return sum(c.correct for c in self.categories.values())

    @property
    def total_accuracy(self) -> float:
        return self.correct / self.attempted if self.attempted else 0.0

    def save_tsv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("category\tattempted\tskipped\tcorrect\taccuracy\n")
            for name, cat in self.categories.items():
                fh.write(
                    f"{name}\t{cat.attempted}\t{cat.skipped}\t{cat.correct}"
                    f"\t{cat.accuracy:.4f}\n"
                )
            fh.write(
                f"total\t{self.attempted}\t{self.skipped}\t{self.correct}"
                f"\t{self.total_accuracy:.4f}\n"
            )


def load_questions(path) -> list[AnalogyQuestion]:
    """Parse a questions file: ": category" lines start a category, every
    other non-blank line holds exactly four whitespace-separated words
    (lowercased on load)."""
    path = Path(path)
    questions: list[AnalogyQuestion] = []
    category = "default"
    with open(path, encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith(":"):
                category = line[1:].strip() or "default"
                continue
            words = line.lower().split()
            if len(words) != 4:
                raise MalformedLineError(
                    path, line_number, f"expected 4 words, got {len(words)}"
                )
            questions.append(AnalogyQuestion(*words, category=category))
    return questions


def answer_3cosadd(
    embeddings: np.ndarray,
    a: int,
    b: int,
    c: int,
    candidate_mask: np.ndarray | None = None,
) -> int:
    """Most-cosine-similar word id to e_b - e_a + e_c, excluding a, b, c.

    `embeddings` rows must already be unit L2 normalized (zero rows are
    never candidates); ties break toward the lowest id. `candidate_mask`
    optionally restricts the candidate set further.
    """
    scores = embeddings @ (embeddings[b] - embeddings[a] + embeddings[c])
    if candidate_mask is not None:
        scores[~candidate_mask] = -np.inf
    else:
        scores[np.all(embeddings == 0.0, axis=1)] = -np.inf
    scores[[a, b, c]] = -np.inf
    return int(np.argmax(scores))


def evaluate_analogies(
    embeddings: np.ndarray,
    vocab: Vocabulary,
    questions: list[AnalogyQuestion],
    restrict_vocab: int | None = None,
    batch_size: int = 256,
) -> AnalogyReport:
    """Answer every question whose four words are all in vocabulary.

    Questions with any OOV word count as skipped. Embeddings are L2
    normalized here, so the report is invariant under uniform positive
    scaling. `restrict_vocab` keeps only the given number of most frequent
    words as answer candidates.
    """
    if not np.all(np.isfinite(embeddings)):
        raise ValueError("embeddings must be finite")
    unit = np.ascontiguousarray(normalize_rows(embeddings), dtype=np.float32)
    candidates = ~np.all(unit == 0.0, axis=1)
    if restrict_vocab is not None:
        candidates[restrict_vocab:] = False

    report = AnalogyReport()
    ready: list[tuple[AnalogyQuestion, int, int, int, int]] = []
    for q in questions:
        cat = report.categories.setdefault(q.category, CategoryResult())
        ids = [vocab.get(w) for w in (q.a, q.b, q.c, q.d)]
        if min(ids) < 0:
            cat.skipped += 1
            continue
        cat.attempted += 1
        ready.append((q, *ids))

    for start in range(0, len(ready), batch_size):
        batch = ready[start : start + batch_size]
        a = np.array([t[1] for t in batch])
        b = np.array([t[2] for t in batch])
        c = np.array([t[3] for t in batch])
        d = np.array([t[4] for t in batch])
        queries = unit[b] - unit[a] + unit[c]
        scores = queries @ unit.T
        scores[:, ~candidates] = -np.inf
        rows = np.arange(len(batch))
        scores[rows, a] = -np.inf
        scores[rows, b] = -np.inf
        scores[rows, c] = -np.inf
        predicted = np.argmax(scores, axis=1)
        for (q, *_), hit in zip(batch, predicted == d):
            if hit:
                report.categories[q.category].correct += 1
    return report
