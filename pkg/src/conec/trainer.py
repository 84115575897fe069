"""CBOW training with negative sampling over two dense weight matrices.

Each step predicts a target word from the combined input rows of its
context words, scores the target against k noise words drawn from the
count**0.75 distribution, and applies the exact simultaneous SGD update
(output rows from the pre-update input combination, input rows from the
pre-update output rows).
"""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit

from .corpus import UNKNOWN_ID, NoiseSampler, Vocabulary, discard_probability
from .errors import NumericOverflowError

logger = logging.getLogger(__name__)

# Fast sigmoid: lookup over scores clipped to [-MAX_SCORE, MAX_SCORE].
MAX_SCORE = 6.0
SIGMOID_BINS = 1000

_BIN_WIDTH = 2.0 * MAX_SCORE / SIGMOID_BINS
_SIGMOID_TABLE = expit(-MAX_SCORE + (np.arange(SIGMOID_BINS) + 0.5) * _BIN_WIDTH)

# Positions handled per batched RNG draw inside a sentence; also the lr
# refresh granularity.
_CHUNK = 10_000


def sigmoid_exact(x: np.ndarray) -> np.ndarray:
    """Exact logistic sigmoid (used by gradient checks and exact mode)."""
    return expit(x)


def sigmoid_fast(x: np.ndarray) -> np.ndarray:
    """Table lookup of the sigmoid, scores clipped to [-6, 6]."""
    idx = ((np.clip(x, -MAX_SCORE, MAX_SCORE) + MAX_SCORE) / _BIN_WIDTH).astype(np.int64)
    np.clip(idx, 0, SIGMOID_BINS - 1, out=idx)
    return _SIGMOID_TABLE[idx]


@dataclass
class ModelParams:
    """The two trained weight matrices, both n_words x dim.

    W0 holds the input (embedding) rows, W1 the output rows scored against
    the combined context.
    """

    W0: np.ndarray
    W1: np.ndarray

    def __post_init__(self):
        if self.W0.ndim != 2 or self.W0.shape != self.W1.shape:
            raise ValueError(
                f"W0 and W1 must share an (n_words, dim) shape, "
                f"got {self.W0.shape} and {self.W1.shape}"
            )

    @property
    def n_words(self) -> int:
        return self.W0.shape[0]

    @property
    def dim(self) -> int:
        return self.W0.shape[1]

    def copy(self) -> "ModelParams":
        return ModelParams(self.W0.copy(), self.W1.copy())


def init_params(n_words: int, dim: int, seed: int, dtype=np.float32) -> ModelParams:
    """W0 ~ Uniform(-0.5/dim, 0.5/dim), W1 = 0."""
    rng = np.random.default_rng(seed)
    bound = 0.5 / dim
    W0 = rng.uniform(-bound, bound, size=(n_words, dim)).astype(dtype)
    W1 = np.zeros((n_words, dim), dtype=dtype)
    return ModelParams(W0=W0, W1=W1)


@dataclass
class TrainConfig:
    dim: int = 200
    window: int = 5
    negatives: int = 13
    epochs: int = 5
    lr_start: float = 0.025
    lr_min: float = 1e-4
    combine_mode: str = "mean"  # "mean" or "sum" of context rows
    subsample: float = 0.0  # frequency threshold t; 0 disables
    seed: int = 1
    workers: int = 1
    dynamic_window: bool = True  # draw the effective window from [1, window]
    exact_sigmoid: bool = False

    def __post_init__(self):
        if self.dim < 1 or self.window < 1 or self.negatives < 1:
            raise ValueError("dim, window, and negatives must all be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not self.lr_start > self.lr_min > 0:
            raise ValueError("need lr_start > lr_min > 0")
        if self.combine_mode not in ("sum", "mean"):
            raise ValueError(f"combine_mode must be 'sum' or 'mean', got {self.combine_mode!r}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass
class StepScores:
    """Raw scores of one step (target first, then negatives) and its loss."""

    scores: np.ndarray
    loss: float


def sample_training_window(
    sentence: Sequence[int] | np.ndarray,
    position: int,
    window: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Context ids around `position` with a window size drawn from [1, window].

    Clips at sentence boundaries, excludes the position itself, and skips
    OOV sentinels; may return an empty array (caller skips the step).
    """
    ids = np.asarray(sentence)
    b = int(rng.integers(1, window + 1))
    lo = max(0, position - b)
    context = np.concatenate((ids[lo:position], ids[position + 1 : position + b + 1]))
    return context[context != UNKNOWN_ID]


def forward_hidden(
    context_ids: np.ndarray, W0: np.ndarray, combine_mode: str = "mean"
) -> np.ndarray | None:
    """Combined input rows of the context: sum or mean of W0 rows.

    Returns None for an empty context (step-skip signal).
    """
    if len(context_ids) == 0:
        return None
    h = W0[context_ids].sum(axis=0)
    if combine_mode == "mean":
        h /= len(context_ids)
    return h


def negative_sampling_step(
    h: np.ndarray,
    target_id: int,
    negative_ids: np.ndarray,
    context_ids: np.ndarray,
    W0: np.ndarray,
    W1: np.ndarray,
    lr: float,
    combine_mode: str = "mean",
    exact_sigmoid: bool = False,
) -> StepScores:
    """One SGD step on the k+1 scored rows; updates W0 and W1 in place.

    scores[j] = h . W1[row_j] with the target row first. The output rows
    move by -lr * (sigmoid(score) - label) * h; the back-propagated error
    (computed from the pre-update output rows, scaled by 1/len(context) in
    mean mode) moves every context row of W0. Duplicate rows accumulate.
    """
    rows = np.concatenate(([target_id], negative_ids)).astype(np.int64)
    old_w1 = W1[rows]
    scores = old_w1 @ h
    if not np.all(np.isfinite(scores)):
        raise NumericOverflowError(
            f"non-finite score while updating target {target_id}; lower the learning rate"
        )
    sig = sigmoid_exact(scores) if exact_sigmoid else sigmoid_fast(scores)
    grad = sig.copy()
    grad[0] -= 1.0
    scores64 = scores.astype(np.float64)
    loss = float(np.logaddexp(0.0, -scores64[0]) + np.logaddexp(0.0, scores64[1:]).sum())
    err = grad @ old_w1
    np.subtract.at(W1, rows, lr * np.outer(grad, h))
    if combine_mode == "mean":
        err = err / len(context_ids)
    np.subtract.at(W0, context_ids, lr * err)
    return StepScores(scores=scores, loss=loss)


class _Progress:
    """Shared training counters; updated without locks (races tolerated)."""

    def __init__(self, scheduled: int, log_every: int):
        self.scheduled = max(1, scheduled)
        self.processed = 0
        self.loss_sum = 0.0
        self.loss_steps = 0
        self.log_every = log_every
        self.next_log = log_every
        self.started = time.perf_counter()

    def lr(self, config: TrainConfig) -> float:
        frac = min(1.0, self.processed / self.scheduled)
        return max(config.lr_min, config.lr_start * (1.0 - frac))

    def maybe_log(self) -> None:
        if self.processed < self.next_log:
            return
        self.next_log = self.processed + self.log_every
        elapsed = time.perf_counter() - self.started
        mean_loss = self.loss_sum / self.loss_steps if self.loss_steps else float("nan")
        logger.info(
            "progress %.1f%% | mean loss %.4f | %.0f tokens/s",
            100.0 * self.processed / self.scheduled,
            mean_loss,
            self.processed / elapsed if elapsed > 0 else 0.0,
        )
        self.loss_sum = 0.0
        self.loss_steps = 0


def _count_in_vocab(corpus: Iterable[np.ndarray]) -> int:
    return sum(int((np.asarray(ids) != UNKNOWN_ID).sum()) for ids in corpus)


def _discard_table(vocab: Vocabulary, t: float) -> np.ndarray | None:
    if t <= 0:
        return None
    return np.array(
        [discard_probability(int(c), vocab.total_tokens, t) for c in vocab.counts],
        dtype=np.float64,
    )


def _draw_negatives(
    sampler: NoiseSampler, targets: np.ndarray, k: int, rng: np.random.Generator
) -> np.ndarray:
    """(len(targets), k) noise ids, resampled until none collides with its target."""
    negs = sampler.draw(len(targets) * k, rng).reshape(len(targets), k)
    while True:
        bad = negs == targets[:, None]
        n_bad = int(bad.sum())
        if n_bad == 0:
            return negs
        negs[bad] = sampler.draw(n_bad, rng)


def _train_shard(
    corpus: Iterable[np.ndarray],
    params: ModelParams,
    sampler: NoiseSampler,
    config: TrainConfig,
    discard: np.ndarray | None,
    progress: _Progress,
    worker_id: int,
) -> None:
    """Process this worker's share of (sentence, chunk) units for all epochs."""
    rng = np.random.default_rng(config.seed + 7919 * worker_id)
    W0, W1 = params.W0, params.W1
    window, k = config.window, config.negatives
    mean_mode = config.combine_mode == "mean"
    exact = config.exact_sigmoid
    workers = config.workers

    for epoch in range(config.epochs):
        unit = 0
        for ids in corpus:
            ids = np.asarray(ids)
            n = len(ids)
            in_vocab = ids != UNKNOWN_ID
            if discard is not None:
                working = ids.copy()
                drop = in_vocab & (rng.random(n) < discard[np.maximum(ids, 0)])
                working[drop] = UNKNOWN_ID
            else:
                working = ids
            for lo in range(0, n, _CHUNK):
                unit += 1
                if (unit - 1) % workers != worker_id:
                    continue
                hi = min(lo + _CHUNK, n)
                progress.processed += int(in_vocab[lo:hi].sum())
                lr = progress.lr(config)
                positions = np.flatnonzero(working[lo:hi] != UNKNOWN_ID) + lo
                if len(positions) == 0:
                    continue
                if config.dynamic_window:
                    bs = rng.integers(1, window + 1, size=len(positions))
                else:
                    bs = np.full(len(positions), window)
                negatives = _draw_negatives(sampler, working[positions], k, rng)
                loss_sum = 0.0
                steps = 0
                for j, pos in enumerate(positions):
                    b = bs[j]
                    start = pos - b if pos >= b else 0
                    context = np.concatenate(
                        (working[start:pos], working[pos + 1 : pos + b + 1])
                    )
                    context = context[context != UNKNOWN_ID]
                    if len(context) == 0:
                        continue
                    h = W0[context].sum(axis=0)
                    if mean_mode:
                        h /= len(context)
                    result = negative_sampling_step(
                        h, int(working[pos]), negatives[j], context,
                        W0, W1, lr, config.combine_mode, exact,
                    )
                    loss_sum += result.loss
                    steps += 1
                progress.loss_sum += loss_sum
                progress.loss_steps += steps
                progress.maybe_log()
        logger.info("epoch %d/%d done (worker %d)", epoch + 1, config.epochs, worker_id)


def train(
    corpus: Iterable[np.ndarray],
    vocab: Vocabulary,
    config: TrainConfig,
    params: ModelParams | None = None,
    total_words: int | None = None,
) -> ModelParams:
    """Train for `config.epochs` full passes over `corpus`.

    `corpus` must be a restartable iterable of sentence id arrays. The
    learning rate decays linearly from lr_start to lr_min over the total
    scheduled in-vocabulary tokens (epochs * corpus occurrences); pass
    `total_words` to skip the counting pre-pass. With `workers > 1`,
    workers update the shared matrices without locks (lost updates are
    tolerated); single-worker runs are deterministic for a fixed seed.
    """
    if params is None:
        params = init_params(vocab.n_words, config.dim, config.seed)
    elif params.dim != config.dim or params.n_words != vocab.n_words:
        raise ValueError("params shape does not match vocabulary/config")
    if config.epochs == 0:
        return params

    if total_words is None:
        total_words = _count_in_vocab(corpus)
    scheduled = total_words * config.epochs
    sampler = NoiseSampler(vocab.counts)
    discard = _discard_table(vocab, config.subsample)
    progress = _Progress(scheduled, log_every=max(100_000, scheduled // 20))
    logger.info(
        "training: %d words scheduled, dim=%d window=%d negatives=%d workers=%d",
        scheduled, config.dim, config.window, config.negatives, config.workers,
    )

    if config.workers == 1:
        _train_shard(corpus, params, sampler, config, discard, progress, 0)
    else:
        threads = [
            threading.Thread(
                target=_train_shard,
                args=(corpus, params, sampler, config, discard, progress, w),
                name=f"train-worker-{w}",
            )
            for w in range(config.workers)
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    logger.info("training finished: %d tokens in %.1fs",
                progress.processed, time.perf_counter() - progress.started)
    return params
