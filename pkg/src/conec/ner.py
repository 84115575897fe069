"""CoNLL-style NER pipeline: data loading, per-token embedding features,
softmax regression, and phrase-level F1 with official-scorer semantics.

The tagging scheme of CoNLL 2003 is IOB1 (chunks usually open with I-X;
B-X only separates adjacent same-type chunks). Phrase extraction follows
the evaluation-script boundary rules, which also cover IOB2/IOBES input.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint
from .context import accumulate_global, embed_word, global_cv, local_cv, synthesize_embedding
from .corpus import UNKNOWN_ID, TokenDocument, Vocabulary, build_vocabulary, encode_sentences
from .errors import (
    DataError,
    DegenerateLabelsError,
    LengthMismatchError,
    MalformedLineError,
    MissingWordError,
)
from .trainer import TrainConfig, train

logger = logging.getLogger(__name__)

REGIMES = ("baseline", "global", "oov", "mixed")


# ---------------------------------------------------------------------------
# Data loading
# ---------------------------------------------------------------------------

@dataclass
class LabeledCorpus:
    """Documents with per-token NER tags; `fold` names the split."""

    documents: list[TokenDocument]
    fold: str = "train"

    @property
    def n_tokens(self) -> int:
        return sum(doc.n_tokens for doc in self.documents)

    def iter_tokens(self):
        for doc in self.documents:
            for sent in doc.sentences:
                yield from sent

    def sentences(self) -> list[list[str]]:
        return [sent for doc in self.documents for sent in doc.sentences]

    def sentence_tags(self) -> list[list[str]]:
        return [tags for doc in self.documents for tags in (doc.labels or [])]

    def with_vocab(self, vocab: Vocabulary) -> "LabeledCorpus":
        """Re-encode token ids against a vocabulary."""
        documents = [
            TokenDocument(
                doc_id=doc.doc_id,
                sentences=doc.sentences,
                ids=[vocab.encode(s) for s in doc.sentences],
                raw_sentences=doc.raw_sentences,
                labels=doc.labels,
            )
            for doc in self.documents
        ]
        return LabeledCorpus(documents=documents, fold=self.fold)


def load_conll(path, fold: str = "train") -> LabeledCorpus:
    """Read a CoNLL 2003 file: 4 columns (word, POS, chunk, NER tag) per
    token line, blank line between sentences, -DOCSTART- between documents.

    Tokens are kept verbatim apart from lowercasing for embedding lookup;
    the original surfaces and the NER tags are retained as-is.
    """
    path = Path(path)
    documents: list[TokenDocument] = []
    sentences: list[list[str]] = []
    raw_sentences: list[list[str]] = []
    labels: list[list[str]] = []
    tokens: list[str] = []
    raw_tokens: list[str] = []
    tags: list[str] = []

    def close_sentence():
        nonlocal tokens, raw_tokens, tags
        if tokens:
            sentences.append(tokens)
            raw_sentences.append(raw_tokens)
            labels.append(tags)
            tokens, raw_tokens, tags = [], [], []

    def close_document():
        nonlocal sentences, raw_sentences, labels
        close_sentence()
        if sentences:
            documents.append(
                TokenDocument(
                    doc_id=len(documents),
                    sentences=sentences,
                    ids=[np.full(len(s), UNKNOWN_ID, dtype=np.int32) for s in sentences],
                    raw_sentences=raw_sentences,
                    labels=labels,
                )
            )
            sentences, raw_sentences, labels = [], [], []

    with open(path, encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                close_sentence()
                continue
            columns = stripped.split()
            if columns[0] == "-DOCSTART-":
                close_document()
                continue
            if len(columns) != 4:
                raise MalformedLineError(
                    path, line_number, f"expected 4 columns, got {len(columns)}"
                )
            raw_tokens.append(columns[0])
            tokens.append(columns[0].lower())
            tags.append(columns[3])
    close_document()
    return LabeledCorpus(documents=documents, fold=fold)


# ---------------------------------------------------------------------------
# Features
# ---------------------------------------------------------------------------

def featurize(
    corpus: LabeledCorpus,
    checkpoint: Checkpoint,
    regime: str,
    a: float = 0.6,
    normalize: bool = False,
) -> tuple[np.ndarray, list[str]]:
    """Per-token feature matrix under an embedding regime, plus flat tags.

    Regimes: `baseline` reads W0 rows (OOV tokens become zero vectors);
    `global` synthesizes from global CVs only (OOV still zero); `oov` adds
    local-CV embeddings for OOV tokens; `mixed` blends global and local CVs
    with weight `a` for in-vocabulary tokens, local-only for OOV. The
    token's containing document supplies the local context.
    """
    if regime not in REGIMES:
        raise ValueError(f"regime must be one of {REGIMES}, got {regime!r}")
    params = checkpoint.params
    vocab = checkpoint.vocab
    store = checkpoint.store
    if regime != "baseline" and store is None:
        raise DataError(f"regime {regime!r} needs a context store in the checkpoint")

    W0 = params.W0
    dim = params.dim
    features = np.zeros((corpus.n_tokens, dim), dtype=np.float32)
    tags: list[str] = []
    global_cache: dict[int, np.ndarray] = {}

    def global_feature(word_id: int) -> np.ndarray:
        vec = global_cache.get(word_id)
        if vec is None:
            try:
                cv = global_cv(store, word_id)
            except MissingWordError:
                vec = np.zeros(dim)
            else:
                if normalize:
                    cv = cv.l2_normalized()
                vec = synthesize_embedding(cv, W0)
            global_cache[word_id] = vec
        return vec

    row = 0
    for doc in corpus.documents:
        doc_cache: dict[str, np.ndarray] = {}
        for si, sent in enumerate(doc.sentences):
            if doc.labels is not None:
                tags.extend(doc.labels[si])
            word_ids = doc.ids[si]
            for ti, token in enumerate(sent):
                word_id = int(word_ids[ti])
                if regime == "baseline":
                    if word_id != UNKNOWN_ID:
                        features[row] = W0[word_id]
                elif regime == "global":
                    if word_id != UNKNOWN_ID:
                        features[row] = global_feature(word_id)
                elif word_id != UNKNOWN_ID and regime == "oov":
                    features[row] = global_feature(word_id)
                else:
                    # `mixed` for any token, `oov` for OOV tokens: both lean
                    # on the document's local context.
                    vec = doc_cache.get(token)
                    if vec is None:
                        if word_id == UNKNOWN_ID:
                            cv = local_cv(doc, token, vocab, store.window, store.include_target)
                            if normalize:
                                cv = cv.l2_normalized()
                            vec = synthesize_embedding(cv, W0)
                        else:
                            vec = embed_word(
                                token, store, W0, vocab,
                                document=doc, a=a, normalize=normalize,
                            )
                        doc_cache[token] = vec
                    features[row] = vec
                row += 1
    return features, tags


# ---------------------------------------------------------------------------
# Classifier
# ---------------------------------------------------------------------------

@dataclass
class LinearClassifier:
    """Multinomial logistic regression; weights are (classes, dim + 1) with
    the bias in the last column."""

    weights: np.ndarray
    classes: list[str]

    def decision(self, features: np.ndarray) -> np.ndarray:
        return features @ self.weights[:, :-1].T + self.weights[:, -1]

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        return _softmax(self.decision(features))


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def classifier_loss_grad(
    weights: np.ndarray, features1: np.ndarray, class_ids: np.ndarray, l2: float
) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy plus l2/2 * ||weights||^2, and its gradient.

    `features1` already carries the trailing bias column of ones.
    """
    logits = features1 @ weights.T
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    n = len(features1)
    rows = np.arange(n)
    loss = float(np.mean(log_z - shifted[rows, class_ids])) + 0.5 * l2 * float(
        (weights**2).sum()
    )
    proba = np.exp(shifted - log_z[:, None])
    proba[rows, class_ids] -= 1.0
    grad = proba.T @ features1 / n + l2 * weights
    return loss, grad


def train_classifier(
    features: np.ndarray,
    labels: list[str],
    l2: float = 1e-4,
    epochs: int = 100,
    lr: float = 1.0,
    seed: int = 0,
    eval_callback=None,
    eval_every: int = 10,
    patience: int = 3,
) -> LinearClassifier:
    """Fit by full-batch gradient descent from zero weights.

    Classes are the sorted distinct labels. When `eval_callback` is given
    it is called every `eval_every` epochs with the current classifier and
    must return a score to maximize; the best-scoring weights are kept and
    training stops after `patience` evaluations without improvement.
    Deterministic for fixed inputs (`seed` is part of the interface for
    stochastic variants; batch descent does not consume it).
    """
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise DegenerateLabelsError(f"need at least 2 classes, got {classes}")
    class_index = {c: i for i, c in enumerate(classes)}
    class_ids = np.array([class_index[t] for t in labels], dtype=np.int64)
    features1 = np.hstack([features, np.ones((len(features), 1), dtype=features.dtype)])

    weights = np.zeros((len(classes), features.shape[1] + 1), dtype=np.float64)
    clf = LinearClassifier(weights=weights, classes=classes)
    best_weights = weights.copy()
    best_score = -np.inf
    stalled = 0
    for epoch in range(1, epochs + 1):
        loss, grad = classifier_loss_grad(weights, features1, class_ids, l2)
        weights -= lr * grad
        if eval_callback is not None and (epoch % eval_every == 0 or epoch == epochs):
            score = eval_callback(clf)
            logger.debug("classifier epoch %d: loss %.5f, eval %.3f", epoch, loss, score)
            if score > best_score:
                best_score = score
                best_weights = weights.copy()
                stalled = 0
            else:
                stalled += 1
                if stalled >= patience:
                    break
    if eval_callback is not None:
        clf.weights = best_weights
    return clf


def predict_tags(classifier: LinearClassifier, features: np.ndarray) -> list[str]:
    """Per-token argmax class; ties resolve to the first (sorted) class."""
    winners = np.argmax(classifier.decision(features), axis=1)
    return [classifier.classes[i] for i in winners]


# ---------------------------------------------------------------------------
# Phrase F1
# ---------------------------------------------------------------------------

_PREFIXES = frozenset("BIES")


def _split_tag(tag: str) -> tuple[str, str]:
    if tag == "O":
        return "O", ""
    if len(tag) > 2 and tag[1] == "-" and tag[0] in _PREFIXES:
        return tag[0], tag[2:]
    raise ValueError(f"invalid chunk tag {tag!r}")


def _chunk_ends(prev_prefix: str, prev_type: str, prefix: str, type_: str) -> bool:
    if prev_prefix == "O":
        return False
    if prev_prefix in ("E", "S"):
        return True
    if prefix in ("B", "S", "O"):
        return True
    return prev_type != type_


def _chunk_starts(prev_prefix: str, prev_type: str, prefix: str, type_: str) -> bool:
    if prefix == "O":
        return False
    if prefix in ("B", "S"):
        return True
    if prev_prefix in ("O", "E", "S"):
        return True
    return prev_type != type_


def extract_chunks(tags: list[str]) -> list[tuple[str, int, int]]:
    """Typed (type, start, end) phrases of one sequence, end exclusive.

    Uses the official scorer's boundary rules, so IOB1 sequences (chunks
    opened by I-X) are handled as in CoNLL 2003.
    """
    chunks: list[tuple[str, int, int]] = []
    open_start = -1
    open_type = ""
    prev_prefix, prev_type = "O", ""
    for i, tag in enumerate(tags):
        prefix, type_ = _split_tag(tag)
        if open_start >= 0 and _chunk_ends(prev_prefix, prev_type, prefix, type_):
            chunks.append((open_type, open_start, i))
            open_start = -1
        if open_start < 0 and _chunk_starts(prev_prefix, prev_type, prefix, type_):
            open_start, open_type = i, type_
        prev_prefix, prev_type = prefix, type_
    if open_start >= 0:
        chunks.append((open_type, open_start, len(tags)))
    return chunks


@dataclass
class TypeScore:
    correct: int = 0
    gold: int = 0
    predicted: int = 0

    @property
    def precision(self) -> float:
        return 100.0 * self.correct / self.predicted if self.predicted else 0.0

    @property
    def recall(self) -> float:
        return 100.0 * self.correct / self.gold if self.gold else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2.0 * p * r / (p + r) if p + r > 0 else 0.0


@dataclass
class ChunkF1:
    """Phrase-level scores in percent, with a per-entity-type breakdown."""

    precision: float
    recall: float
    f1: float
    per_type: dict[str, TypeScore] = field(default_factory=dict)
    correct: int = 0
    gold_chunks: int = 0
    predicted_chunks: int = 0


def _as_segments(tags) -> list[list[str]]:
    if tags and isinstance(tags[0], (list, tuple)):
        return [list(seg) for seg in tags]
    return [list(tags)]


def chunk_f1(gold, predicted) -> ChunkF1:
    """Exact-match phrase precision/recall/F1.

    A phrase counts as correct only when type and both boundaries agree.
    Inputs are flat tag sequences or lists of per-sentence sequences
    (phrases never span sentences).
    """
    gold_segments = _as_segments(gold)
    pred_segments = _as_segments(predicted)
    if len(gold_segments) != len(pred_segments):
        raise LengthMismatchError(
            f"{len(gold_segments)} gold segments vs {len(pred_segments)} predicted"
        )
    per_type: dict[str, TypeScore] = {}
    for gold_seg, pred_seg in zip(gold_segments, pred_segments):
        if len(gold_seg) != len(pred_seg):
            raise LengthMismatchError(
                f"segment length {len(gold_seg)} (gold) vs {len(pred_seg)} (predicted)"
            )
        gold_chunks = set(extract_chunks(gold_seg))
        pred_chunks = set(extract_chunks(pred_seg))
        for type_, *_ in gold_chunks:
            per_type.setdefault(type_, TypeScore()).gold += 1
        for type_, *_ in pred_chunks:
            per_type.setdefault(type_, TypeScore()).predicted += 1
        for type_, *_ in gold_chunks & pred_chunks:
            per_type[type_].correct += 1
    correct = sum(t.correct for t in per_type.values())
    gold_total = sum(t.gold for t in per_type.values())
    pred_total = sum(t.predicted for t in per_type.values())
    precision = 100.0 * correct / pred_total if pred_total else 0.0
    recall = 100.0 * correct / gold_total if gold_total else 0.0
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return ChunkF1(
        precision=precision, recall=recall, f1=f1, per_type=per_type,
        correct=correct, gold_chunks=gold_total, predicted_chunks=pred_total,
    )


# ---------------------------------------------------------------------------
# Experiment driver
# ---------------------------------------------------------------------------

@dataclass
class NerResult:
    fold: str
    regime: str
    a: float | None
    seed: int
    precision: float
    recall: float
    f1: float


def _score_fold(clf: LinearClassifier, features: np.ndarray,
                corpus: LabeledCorpus) -> ChunkF1:
    predicted = predict_tags(clf, features)
    gold = corpus.sentence_tags()
    split: list[list[str]] = []
    at = 0
    for sent in gold:
        split.append(predicted[at : at + len(sent)])
        at += len(sent)
    return chunk_f1(gold, split)


def run_ner_experiment(
    train_corpus: LabeledCorpus,
    dev_corpus: LabeledCorpus,
    test_corpus: LabeledCorpus,
    config: TrainConfig,
    regimes=REGIMES,
    a_grid=(0.0, 0.2, 0.4, 0.6, 0.8, 1.0),
    seeds=(1, 2, 3),
    min_count: int = 1,
    l2: float = 1e-4,
    classifier_epochs: int = 100,
    classifier_lr: float = 1.0,
    normalize: bool = False,
    checkpoints: dict[int, Checkpoint] | None = None,
    out_tsv=None,
    plot_path=None,
) -> list[NerResult]:
    """Embedding models per seed, features per regime, token classifier,
    phrase F1 per fold.

    Embedding models are trained on the training-fold documents only (pass
    pre-trained ones via `checkpoints`, keyed by seed). `a_grid` applies to
    the `mixed` regime; other regimes have a fixed mixing behavior. The
    classifier fits on the training fold with early stopping on dev F1.
    Returns one row per fold x regime x a x seed; `out_tsv` additionally
    gets mean/std summary rows, `plot_path` an overview figure.
    """
    for regime in regimes:
        if regime not in REGIMES:
            raise ValueError(f"unknown regime {regime!r}")
    results: list[NerResult] = []
    for seed in seeds:
        ckpt = checkpoints.get(seed) if checkpoints else None
        if ckpt is None:
            ckpt = _train_ner_checkpoint(train_corpus, config, seed, min_count)
        folds = [
            (corpus.fold, corpus.with_vocab(ckpt.vocab))
            for corpus in (train_corpus, dev_corpus, test_corpus)
        ]
        for regime in regimes:
            for a in a_grid if regime == "mixed" else (None,):
                feats = {
                    fold: featurize(corpus, ckpt, regime, a if a is not None else 1.0,
                                    normalize)
                    for fold, corpus in folds
                }
                train_fold = folds[0][0]
                dev_fold, dev_bound = folds[1]
                X_train, y_train = feats[train_fold]
                clf = train_classifier(
                    X_train, y_train, l2=l2, epochs=classifier_epochs,
                    lr=classifier_lr, seed=seed,
                    eval_callback=lambda c: _score_fold(c, feats[dev_fold][0], dev_bound).f1,
                )
                for fold, corpus in folds:
                    score = _score_fold(clf, feats[fold][0], corpus)
                    results.append(NerResult(
                        fold=fold, regime=regime, a=a, seed=seed,
                        precision=score.precision, recall=score.recall, f1=score.f1,
                    ))
                logger.info(
                    "seed %d regime %-8s a=%-4s test F1 %.2f",
                    seed, regime, a, results[-1].f1,
                )
    if out_tsv is not None:
        save_results_tsv(results, out_tsv)
    if plot_path is not None:
        plot_results(results, plot_path)
    return results


def _train_ner_checkpoint(
    train_corpus: LabeledCorpus, config: TrainConfig, seed: int, min_count: int
) -> Checkpoint:
    cfg = replace(config, seed=seed)
    vocab = build_vocabulary(train_corpus.iter_tokens(), min_count)
    sentences = encode_sentences(train_corpus.sentences(), vocab)
    params = train(sentences, vocab, cfg, total_words=int(vocab.counts.sum()) * 1)
    store = accumulate_global(sentences, vocab, cfg.window, include_target=False)
    return Checkpoint(vocab=vocab, config=cfg, params=params, store=store)


def summarize_results(results: list[NerResult]) -> list[dict]:
    """Mean and standard deviation of F1 across seeds per fold/regime/a."""
    groups: dict[tuple, list[NerResult]] = {}
    for r in results:
        groups.setdefault((r.fold, r.regime, r.a), []).append(r)
    summary = []
    for (fold, regime, a), rows in sorted(
        groups.items(), key=lambda kv: (kv[0][0], kv[0][1], -1.0 if kv[0][2] is None else kv[0][2])
    ):
        f1s = np.array([r.f1 for r in rows])
        summary.append({
            "fold": fold, "regime": regime, "a": a,
            "mean_f1": float(f1s.mean()), "std_f1": float(f1s.std()),
            "seeds": len(rows),
        })
    return summary


def save_results_tsv(results: list[NerResult], path) -> None:
    """Per-seed rows, then mean/std rows with 'mean'/'std' in the seed column."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("fold\tregime\ta\tseed\tprecision\trecall\tf1\n")
        for r in results:
            a = "-" if r.a is None else f"{r.a:g}"
            fh.write(
                f"{r.fold}\t{r.regime}\t{a}\t{r.seed}"
                f"\t{r.precision:.4f}\t{r.recall:.4f}\t{r.f1:.4f}\n"
            )
        for row in summarize_results(results):
            a = "-" if row["a"] is None else f"{row['a']:g}"
            fh.write(
                f"{row['fold']}\t{row['regime']}\t{a}\tmean\t-\t-\t{row['mean_f1']:.4f}\n"
            )
            fh.write(
                f"{row['fold']}\t{row['regime']}\t{a}\tstd\t-\t-\t{row['std_f1']:.4f}\n"
            )


def plot_results(results: list[NerResult], path) -> None:
    """Mean F1 per fold: mixed-regime sweep over a, flat reference lines for
    the other regimes. Requires matplotlib."""
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:  # pragma: no cover
        raise DataError("plotting requires matplotlib (pip install conec[plot])") from exc
    summary = summarize_results(results)
    folds = sorted({row["fold"] for row in summary})
    fig, ax = plt.subplots(figsize=(7, 5))
    colors = {fold: f"C{i}" for i, fold in enumerate(folds)}
    for fold in folds:
        sweep = [r for r in summary if r["fold"] == fold and r["regime"] == "mixed"]
        if sweep:
            xs = [r["a"] for r in sweep]
            ys = [r["mean_f1"] for r in sweep]
            es = [r["std_f1"] for r in sweep]
            ax.errorbar(xs, ys, yerr=es, marker="o", color=colors[fold],
                        label=f"{fold} mixed")
        for regime, style in (("baseline", ":"), ("global", "--"), ("oov", "-.")):
            flat = [r for r in summary if r["fold"] == fold and r["regime"] == regime]
            if flat:
                ax.axhline(flat[0]["mean_f1"], linestyle=style, color=colors[fold],
                           alpha=0.6, label=f"{fold} {regime}")
    ax.set_xlabel("global/local mixing weight a")
    ax.set_ylabel("phrase F1 (%)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
