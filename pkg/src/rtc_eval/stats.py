"""Correlations, repeat-run spread, and report tables.

Plain-loop implementations with math.fsum so results are reproducible
across platforms; examples in the test suite pin the exact values.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence


@dataclass(frozen=True)
class CorrelationResult:
    pearson_r: float
    spearman_rho: float
    n: int


@dataclass(frozen=True)
class LengthStats:
    group: str  # "zero_score" | "nonzero_score"
    mean_chars: float | None
    count: int
    histogram: tuple[tuple[int, int], ...]  # (bucket_start, count)


def _mean(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values)


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Product-moment correlation coefficient.

    Requires equal lengths, n >= 3, and nonzero variance on both sides.
    """
    if len(xs) != len(ys):
        raise ValueError("input lengths differ")
    if len(xs) < 3:
        raise ValueError("need at least 3 points")
    mx = _mean(xs)
    my = _mean(ys)
    cov = math.fsum((x - mx) * (y - my) for x, y in zip(xs, ys))
    var_x = math.fsum((x - mx) ** 2 for x in xs)
    var_y = math.fsum((y - my) ** 2 for y in ys)
    if var_x == 0.0 or var_y == 0.0:
        raise ValueError("zero variance")
    return cov / math.sqrt(var_x * var_y)


def average_ranks(values: Sequence[float]) -> list[float]:
    """1-based ranks with ties assigned the average of their positions."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        rank = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = rank
        i = j + 1
    return ranks


def spearman(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Pearson over average ranks."""
    if len(xs) != len(ys):
        raise ValueError("input lengths differ")
    return pearson(average_ranks(xs), average_ranks(ys))


def correlate(xs: Sequence[float], ys: Sequence[float]) -> CorrelationResult:
    return CorrelationResult(pearson(xs, ys), spearman(xs, ys), len(xs))


def repeat_run_stddev(run_means: Sequence[float]) -> float:
    """Sample standard deviation of per-run mean scores (ddof=1)."""
    if len(run_means) < 2:
        raise ValueError("need at least 2 runs")
    m = _mean(run_means)
    return math.sqrt(math.fsum((x - m) ** 2 for x in run_means) / (len(run_means) - 1))


def length_stats(
    pairs: Iterable[tuple[int, float]], bucket_width: int = 50
) -> tuple[LengthStats, LengthStats]:
    """Group backward-output lengths by whether their score is zero.

    Returns (zero_score, nonzero_score) stats; an empty group has count 0
    and mean None.
    """
    if bucket_width <= 0:
        raise ValueError("bucket_width must be positive")
    groups: dict[str, list[int]] = {"zero_score": [], "nonzero_score": []}
    for length, score in pairs:
        key = "zero_score" if score == 0 else "nonzero_score"
        groups[key].append(length)

    def build(group: str) -> LengthStats:
        lengths = groups[group]
        if not lengths:
            return LengthStats(group, None, 0, ())
        buckets: dict[int, int] = {}
        for length in lengths:
            start = (length // bucket_width) * bucket_width
            buckets[start] = buckets.get(start, 0) + 1
        histogram = tuple(sorted(buckets.items()))
        return LengthStats(group, _mean([float(v) for v in lengths]), len(lengths), histogram)

    return build("zero_score"), build("nonzero_score")


def per_project_table(
    rtc_by_task: Mapping[str, float],
    project_of: Mapping[str, str],
    lift_by_task: Mapping[str, float] | None = None,
) -> list[tuple[str, float, float | None, int]]:
    """Rows of (project_id, mean_rtc, mean_lift, n) sorted by mean_rtc
    descending (project_id breaks ties). Grouping delegates to the
    round-trip engine's aggregation."""
    from .engine import LiftEstimate, RtcEstimate, aggregate

    group_key = project_of.__getitem__
    rtc = aggregate(
        [RtcEstimate(task_id, value, 1) for task_id, value in rtc_by_task.items()],
        group_key,
    )
    lift_means: dict[str, float] = {}
    if lift_by_task:
        lift = aggregate(
            [LiftEstimate(task_id, value) for task_id, value in lift_by_task.items()],
            group_key,
        )
        lift_means = lift.group_means
    rows = [
        (project, mean_rtc, lift_means.get(project), rtc.group_sizes[project])
        for project, mean_rtc in rtc.group_means.items()
    ]
    rows.sort(key=lambda row: (-row[1], row[0]))
    return rows


def write_csv(path: Path | str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)
