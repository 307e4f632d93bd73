"""Similarity functions for scoring round-trip reconstructions.

Every function here is pure and deterministic: identical inputs give
bitwise-identical scores (fixed tokenization, fixed summation order).
Continuous metrics are scaled to [0, 100]; the test-pass oracle stays 0/1.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

METRIC_IDS = ("exact_match", "bleu", "rouge_l", "pass")

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)
_FENCE_RE = re.compile(r"^```[^\n]*$")


@dataclass(frozen=True)
class MetricValue:
    """A scored similarity with its declared range."""

    metric_id: str
    value: float
    range_max: float

    def __post_init__(self) -> None:
        if self.metric_id not in METRIC_IDS:
            raise ValueError(f"unknown metric_id: {self.metric_id!r}")
        if not 0.0 <= self.value <= self.range_max:
            raise ValueError(
                f"{self.metric_id} value {self.value} outside [0, {self.range_max}]"
            )


@dataclass(frozen=True)
class Metric:
    """A named similarity function usable as sim(candidate, task)."""

    metric_id: str
    range_max: float
    fn: Callable[[str, object], float]

    @property
    def minimum(self) -> float:
        return 0.0

    def score(self, candidate: str, task: object) -> float:
        return self.fn(candidate, task)


def tokenize(text: str) -> list[str]:
    """Whitespace split with punctuation characters as single tokens."""
    return _TOKEN_RE.findall(text)


def _ngram_counts(tokens: Sequence[str], n: int) -> dict[tuple[str, ...], int]:
    counts: dict[tuple[str, ...], int] = {}
    for i in range(len(tokens) - n + 1):
        gram = tuple(tokens[i : i + n])
        counts[gram] = counts.get(gram, 0) + 1
    return counts


def _clipped_matches(
    cand_counts: dict[tuple[str, ...], int], ref_counts: dict[tuple[str, ...], int]
) -> int:
    return sum(min(count, ref_counts.get(gram, 0)) for gram, count in cand_counts.items())


def bleu(candidate: str, reference: str) -> float:
    """Smoothed sentence BLEU-4 in [0, 100].

    Unigram precision is unsmoothed (no token overlap scores 0); orders
    2-4 use add-one smoothing on numerator and denominator. Brevity
    penalty is exp(1 - r/c) for candidates shorter than the reference.
    """
    cand = tokenize(candidate)
    ref = tokenize(reference)
    if not cand:
        return 0.0
    log_sum = 0.0
    for n in range(1, 5):
        matches = _clipped_matches(_ngram_counts(cand, n), _ngram_counts(ref, n))
        total = max(len(cand) - n + 1, 0)
        if n == 1:
            if matches == 0:
                return 0.0
            precision = matches / total
        else:
            precision = (matches + 1) / (total + 1)
        log_sum += math.log(precision)
    brevity = 1.0 if len(cand) >= len(ref) else math.exp(1.0 - len(ref) / len(cand))
    return 100.0 * brevity * math.exp(log_sum / 4.0)


def corpus_bleu(pairs: Iterable[tuple[str, str]]) -> float:
    """Corpus-level BLEU-4 over (candidate, reference) pairs.

    Match/total counts are pooled across pairs before combining, with the
    same add-one smoothing on orders 2-4 as :func:`bleu`; the brevity
    penalty uses total lengths. Reported alongside the mean of sentence
    scores because the two aggregations can differ noticeably.
    """
    matches = [0, 0, 0, 0]
    totals = [0, 0, 0, 0]
    cand_len = 0
    ref_len = 0
    for candidate, reference in pairs:
        cand = tokenize(candidate)
        ref = tokenize(reference)
        cand_len += len(cand)
        ref_len += len(ref)
        for n in range(1, 5):
            matches[n - 1] += _clipped_matches(_ngram_counts(cand, n), _ngram_counts(ref, n))
            totals[n - 1] += max(len(cand) - n + 1, 0)
    if cand_len == 0 or matches[0] == 0:
        return 0.0
    log_sum = math.log(matches[0] / totals[0])
    for n in range(2, 5):
        log_sum += math.log((matches[n - 1] + 1) / (totals[n - 1] + 1))
    brevity = 1.0 if cand_len >= ref_len else math.exp(1.0 - ref_len / cand_len)
    return 100.0 * brevity * math.exp(log_sum / 4.0)


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: str, reference: str) -> float:
    """ROUGE-L F1 (longest common subsequence) in [0, 100]."""
    cand = tokenize(candidate)
    ref = tokenize(reference)
    if not cand or not ref:
        return 0.0
    lcs = _lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    precision = lcs / len(cand)
    recall = lcs / len(ref)
    return 100.0 * 2.0 * precision * recall / (precision + recall)


def normalize_code(text: str) -> str:
    """Exact-match normalization: LF line endings, no trailing whitespace
    per line, no leading/trailing blank lines. Idempotent."""
    unified = text.replace("\r\n", "\n").replace("\r", "\n")
    lines = [line.rstrip() for line in unified.split("\n")]
    while lines and lines[0] == "":
        lines.pop(0)
    while lines and lines[-1] == "":
        lines.pop()
    return "\n".join(lines)


def exact_match(candidate: str, reference: str, strict: bool = False) -> float:
    """100.0 if the texts match after normalization (or raw equality when
    strict), else 0.0."""
    if strict:
        return 100.0 if candidate == reference else 0.0
    return 100.0 if normalize_code(candidate) == normalize_code(reference) else 0.0


def strip_code_fences(text: str) -> str:
    """Remove a surrounding triple-backtick fence if the output is wrapped
    in one; inner text is returned unchanged."""
    lines = text.split("\n")
    start = 0
    end = len(lines)
    while start < end and lines[start].strip() == "":
        start += 1
    while end > start and lines[end - 1].strip() == "":
        end -= 1
    if start < end and _FENCE_RE.match(lines[start].strip()):
        start += 1
        if end > start and lines[end - 1].strip() == "```":
            end -= 1
    return "\n".join(lines[start:end])


def exact_match_metric(strict: bool = False) -> Metric:
    """Metric over raw texts; editing wires its extraction in front."""

    def fn(candidate: str, task: object) -> float:
        return exact_match(candidate, getattr(task, "reference_text"), strict)

    return Metric("exact_match", 100.0, fn)


def make_pass_metric(sandbox, project_root, timeout: float | None = None) -> Metric:
    """Unit-test pass oracle presented through the uniform sim signature.

    Thin adapter over the synthesis-task evaluator: candidate text is
    extracted, spliced into a fresh worktree, and scored 1 only if the
    full suite passes.
    """
    from . import synthesis

    def fn(candidate: str, task: object) -> float:
        region = getattr(task, "task", task)  # unwrap engine adapters
        extracted = synthesis.extract_region_candidate(candidate, region)
        score = synthesis.evaluate_pass(extracted, region, sandbox, project_root, timeout)
        return float(score.value)

    return Metric("pass", 1.0, fn)
