"""Similarity between one generated caption and a set of search tasks.

The score is a BLEU-style combination of reference-clipped n-gram precisions
with a multiplicative brevity penalty taken against the longest task. The
default order-weighting is heavily skewed toward unigram overlap, which suits
short single-sentence captions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from . import _kernels
from .errors import ParameterError
from .text import tokenize

DEFAULT_MAX_ORDER = 4
DEFAULT_WEIGHTS = (0.8, 0.15, 0.045, 0.005)
SMOOTHING_EPSILON = 1e-9

NEG_INF = float("-inf")


@dataclass(frozen=True)
class SearchTask:
    """One uploaded reference text with a stable identifier."""

    task_id: str
    text: str
    tokens: tuple[str, ...]

    @classmethod
    def from_text(cls, task_id: str, text: str) -> "SearchTask":
        tokens = tuple(tokenize(text))
        if not tokens:
            raise ParameterError(f"search task {task_id!r} is empty after tokenization")
        return cls(task_id, text, tokens)


@dataclass(frozen=True)
class SearchTaskSet:
    """Non-empty collection of search tasks used as scoring references."""

    tasks: tuple[SearchTask, ...]

    def __post_init__(self):
        if not self.tasks:
            raise ParameterError("task set must contain at least one task")

    @classmethod
    def from_texts(cls, texts: Sequence[str], ids: Sequence[str] | None = None) -> "SearchTaskSet":
        if ids is None:
            ids = [f"task-{i:04d}" for i in range(len(texts))]
        if len(ids) != len(texts):
            raise ParameterError("ids and texts must have equal length")
        return cls(tuple(SearchTask.from_text(i, t) for i, t in zip(ids, texts)))

    def token_lists(self) -> list[tuple[str, ...]]:
        return [t.tokens for t in self.tasks]

    def longest_task(self) -> SearchTask:
        """The reference used by the brevity penalty: maximal length, ties
        broken by lowest task identifier."""
        return min(self.tasks, key=lambda t: (-len(t.tokens), t.task_id))


@dataclass(frozen=True)
class ScoreConfig:
    max_order: int = DEFAULT_MAX_ORDER
    weights: tuple[float, ...] = DEFAULT_WEIGHTS
    # Opt-in epsilon on clipped counts so all-zero candidates stay rankable.
    smooth: bool = False

    def __post_init__(self):
        if self.max_order < 1:
            raise ParameterError(f"max_order must be >= 1, got {self.max_order}")
        if len(self.weights) != self.max_order:
            raise ParameterError(
                f"expected {self.max_order} weights, got {len(self.weights)}"
            )
        if any(w < 0 for w in self.weights):
            raise ParameterError("weights must be non-negative")

    @classmethod
    def uniform(cls, max_order: int, smooth: bool = False) -> "ScoreConfig":
        """Equal weights 1/n over orders 1..n (the conventional BLEU-n setup)."""
        return cls(max_order, (1.0 / max_order,) * max_order, smooth)


@dataclass(frozen=True)
class SimilarityScore:
    value: float
    log_value: float
    precisions: tuple[float, ...]
    brevity_penalty: float

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "log_value": None if self.log_value == NEG_INF else self.log_value,
            "p": list(self.precisions),
            "eta": self.brevity_penalty,
        }


def _clipped_stats(
    candidate: Sequence[str], references: Sequence[Sequence[str]], max_order: int
) -> list[tuple[int, int]]:
    """Map tokens to dense local ids and run the active counting kernel."""
    local: dict[str, int] = {}
    for token in candidate:
        local.setdefault(token, len(local))
    for ref in references:
        for token in ref:
            local.setdefault(token, len(local))
    cand_ids = [local[t] for t in candidate]
    ref_ids = [[local[t] for t in ref] for ref in references]
    return _kernels.clipped_ngram_stats(cand_ids, ref_ids, max_order)


def modified_precision(
    candidate: Sequence[str], tasks: SearchTaskSet, n: int, smooth: bool = False
) -> float:
    """Reference-clipped n-gram precision of the candidate against the tasks.

    Candidates shorter than n have no n-grams and score 0 by convention.
    """
    if n < 1:
        raise ParameterError(f"n-gram order must be >= 1, got {n}")
    if not candidate:
        raise ParameterError("candidate must be non-empty")
    clipped, total = _clipped_stats(candidate, tasks.token_lists(), n)[n - 1]
    return _precision_value(clipped, total, smooth)


def _precision_value(clipped: int, total: int, smooth: bool) -> float:
    if total == 0:
        return 0.0
    if smooth:
        return min((clipped + SMOOTHING_EPSILON) / total, 1.0)
    return clipped / total


def brevity_penalty(candidate: Sequence[str], reference: Sequence[str]) -> float:
    """1 when the candidate is longer than the reference, else exp(1 - Lr/Lc)."""
    lc, lr = len(candidate), len(reference)
    if lc < 1:
        raise ParameterError("candidate must be non-empty")
    if lr < 1:
        raise ParameterError("reference must be non-empty")
    if lc > lr:
        return 1.0
    return math.exp(1.0 - lr / lc)


def score(
    candidate: Sequence[str], tasks: SearchTaskSet, config: ScoreConfig | None = None
) -> SimilarityScore:
    """Combined similarity of one caption against the task set.

    value = eta(c, longest task) * exp(sum_n w_n * log p_n); any zero
    precision collapses the value to 0 with a -inf log sentinel.
    """
    cfg = config or ScoreConfig()
    if not candidate:
        raise ParameterError("candidate must be non-empty")
    stats = _clipped_stats(candidate, tasks.token_lists(), cfg.max_order)
    precisions = tuple(
        _precision_value(clipped, total, cfg.smooth) for clipped, total in stats
    )
    longest = tasks.longest_task()
    eta = brevity_penalty(candidate, longest.tokens)
    if any(p == 0.0 for p in precisions):
        return SimilarityScore(0.0, NEG_INF, precisions, eta)
    weighted = sum(w * math.log(p) for w, p in zip(cfg.weights, precisions))
    log_value = min(1.0 - len(longest.tokens) / len(candidate), 0.0) + weighted
    return SimilarityScore(eta * math.exp(weighted), log_value, precisions, eta)


def rank(
    captions: Sequence[tuple[object, Sequence[str]]],
    tasks: SearchTaskSet,
    config: ScoreConfig | None = None,
) -> list[tuple[object, SimilarityScore]]:
    """Score every (id, token list) pair and sort by value descending,
    ties broken by ascending id."""
    scored = [(cid, score(tokens, tasks, config)) for cid, tokens in captions]
    scored.sort(key=lambda item: (-item[1].value, item[0]))
    return scored
