"""Round-trip execution and scoring.

Given a forward generator (input -> description), a backward generator
(description -> reconstruction), and a similarity function, estimate
round-trip correctness per task as the mean similarity over n_forward x
n_backward sampled pairs, plus the forward lift against an uninformative
baseline utterance.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Mapping, Protocol, Sequence

from .gateway import GenerationError, GeneratorFn
from .similarity import Metric

logger = logging.getLogger(__name__)

RECORD_SCHEMA_VERSION = 1
# Transport ceiling for reconstruction outputs; the 128-char cap applies
# to forward samples only.
BACKWARD_MAX_CHARS = 8192
TRUNCATION_LOOKBACK = 16


class RoundTripTask(Protocol):
    """What a task module must expose for the engine to drive it."""

    task_id: str

    def forward_prompt(self) -> str: ...

    def backward_prompt(self, description: str) -> str: ...

    def baseline_description(self) -> str: ...

    def generation_metadata(self, direction: str) -> dict: ...


@dataclass(frozen=True)
class SamplingConfig:
    n_forward: int = 3
    n_backward: int = 1
    forward_temperature: float = 0.8
    backward_temperature: float = 0.1
    max_forward_chars: int = 128
    rng_seed: int | None = None  # consumed by mock models only

    def __post_init__(self) -> None:
        if self.n_forward < 1 or self.n_backward < 1:
            raise ValueError("sample counts must be >= 1")
        if self.forward_temperature < 0 or self.backward_temperature < 0:
            raise ValueError("temperatures must be >= 0")
        if self.max_forward_chars < 1:
            raise ValueError("max_forward_chars must be >= 1")


SYNTHESIS_DEFAULTS = SamplingConfig()
EDITING_DEFAULTS = SamplingConfig(forward_temperature=1.0, backward_temperature=0.0)


@dataclass
class RoundTripRecord:
    """Complete sampled matrix for one task: every cell is present, failed
    generations score the metric minimum and carry a flag."""

    task_id: str
    metric_id: str
    metric_max: float
    forward_samples: list[str]
    backward_samples: list[list[str]]
    sim_scores: list[list[float]]
    failed_forward: list[bool]
    failed_cells: list[list[bool]]
    baseline_backward: list[str] | None = None
    baseline_scores: list[float] | None = None
    baseline_failed: bool = False
    project_id: str | None = None

    @property
    def has_failures(self) -> bool:
        return any(self.failed_forward) or any(any(row) for row in self.failed_cells) or (
            self.baseline_failed
        )

    def to_dict(self) -> dict:
        return {
            "schema_version": RECORD_SCHEMA_VERSION,
            "task_id": self.task_id,
            "project_id": self.project_id,
            "metric_id": self.metric_id,
            "metric_max": self.metric_max,
            "forward_samples": self.forward_samples,
            "backward_samples": self.backward_samples,
            "sim_scores": self.sim_scores,
            "failed_forward": self.failed_forward,
            "failed_cells": self.failed_cells,
            "baseline_backward": self.baseline_backward,
            "baseline_scores": self.baseline_scores,
            "baseline_failed": self.baseline_failed,
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "RoundTripRecord":
        version = raw.get("schema_version")
        if version != RECORD_SCHEMA_VERSION:
            raise ValueError(f"unsupported record schema_version {version!r}")
        return cls(
            task_id=raw["task_id"],
            metric_id=raw["metric_id"],
            metric_max=float(raw["metric_max"]),
            forward_samples=list(raw["forward_samples"]),
            backward_samples=[list(row) for row in raw["backward_samples"]],
            sim_scores=[[float(v) for v in row] for row in raw["sim_scores"]],
            failed_forward=list(raw["failed_forward"]),
            failed_cells=[list(row) for row in raw["failed_cells"]],
            baseline_backward=raw.get("baseline_backward"),
            baseline_scores=raw.get("baseline_scores"),
            baseline_failed=raw.get("baseline_failed", False),
            project_id=raw.get("project_id"),
        )


@dataclass(frozen=True)
class RtcEstimate:
    task_id: str
    rtc: float
    n_pairs: int

    @property
    def value(self) -> float:
        return self.rtc


@dataclass(frozen=True)
class LiftEstimate:
    task_id: str
    lift: float

    @property
    def value(self) -> float:
        return self.lift


def truncate_forward(text: str, limit: int) -> str:
    """Cap a forward sample at limit characters, backing up to a whitespace
    boundary when one falls within the final 16 characters of the cut."""
    if len(text) <= limit:
        return text
    cut = text[:limit]
    for idx in range(len(cut) - 1, max(len(cut) - TRUNCATION_LOOKBACK - 1, -1), -1):
        if cut[idx].isspace():
            return cut[:idx].rstrip()
    return cut


def run_round_trip(
    task: RoundTripTask,
    forward_gen: GeneratorFn,
    backward_gen: GeneratorFn,
    sim: Metric,
    cfg: SamplingConfig,
    include_baseline: bool = False,
) -> RoundTripRecord:
    """Sample the full forward/backward matrix for one task and score it.

    Forward samples are truncated to cfg.max_forward_chars before being
    spliced into backward prompts. A failed generation marks its cells
    failed and scores them at the metric minimum.
    """
    fwd_meta = dict(task.generation_metadata("forward"))
    fwd_meta.update(direction="forward", task_id=task.task_id, rng_seed=cfg.rng_seed)
    forward_samples: list[str]
    failed_forward = [False] * cfg.n_forward
    try:
        raw_forward = forward_gen(
            task.forward_prompt(),
            cfg.forward_temperature,
            cfg.max_forward_chars,
            cfg.n_forward,
            fwd_meta,
        )
        forward_samples = [truncate_forward(text, cfg.max_forward_chars) for text in raw_forward]
    except GenerationError as exc:
        logger.warning("forward generation failed for %s: %s", task.task_id, exc)
        forward_samples = [""] * cfg.n_forward
        failed_forward = [True] * cfg.n_forward

    bwd_meta = dict(task.generation_metadata("backward"))
    bwd_meta.update(direction="backward", task_id=task.task_id, rng_seed=cfg.rng_seed)

    def draw_backward(description: str) -> tuple[list[str], bool]:
        try:
            return (
                backward_gen(
                    task.backward_prompt(description),
                    cfg.backward_temperature,
                    BACKWARD_MAX_CHARS,
                    cfg.n_backward,
                    bwd_meta,
                ),
                False,
            )
        except GenerationError as exc:
            logger.warning("backward generation failed for %s: %s", task.task_id, exc)
            return [""] * cfg.n_backward, True

    backward_samples: list[list[str]] = []
    sim_scores: list[list[float]] = []
    failed_cells: list[list[bool]] = []
    for fi in range(cfg.n_forward):
        if failed_forward[fi]:
            row, row_failed = [""] * cfg.n_backward, True
        else:
            row, row_failed = draw_backward(forward_samples[fi])
        backward_samples.append(row)
        if row_failed:
            sim_scores.append([sim.minimum] * cfg.n_backward)
            failed_cells.append([True] * cfg.n_backward)
        else:
            sim_scores.append([sim.score(text, task) for text in row])
            failed_cells.append([False] * cfg.n_backward)

    baseline_backward = None
    baseline_scores = None
    baseline_failed = False
    if include_baseline:
        baseline_backward, baseline_failed = draw_backward(task.baseline_description())
        if baseline_failed:
            baseline_scores = [sim.minimum] * cfg.n_backward
        else:
            baseline_scores = [sim.score(text, task) for text in baseline_backward]

    return RoundTripRecord(
        task_id=task.task_id,
        metric_id=sim.metric_id,
        metric_max=sim.range_max,
        forward_samples=forward_samples,
        backward_samples=backward_samples,
        sim_scores=sim_scores,
        failed_forward=failed_forward,
        failed_cells=failed_cells,
        baseline_backward=baseline_backward,
        baseline_scores=baseline_scores,
        baseline_failed=baseline_failed,
        project_id=getattr(task, "project_id", None),
    )


def rescore(record: RoundTripRecord, sim: Metric, task: RoundTripTask) -> RoundTripRecord:
    """Score an existing record's samples under another metric, reusing the
    sampled texts so metrics stay comparable."""
    sim_scores = [
        [sim.minimum if failed else sim.score(text, task) for text, failed in zip(row, flags)]
        for row, flags in zip(record.backward_samples, record.failed_cells)
    ]
    baseline_scores = None
    if record.baseline_backward is not None:
        if record.baseline_failed:
            baseline_scores = [sim.minimum] * len(record.baseline_backward)
        else:
            baseline_scores = [sim.score(text, task) for text in record.baseline_backward]
    return RoundTripRecord(
        task_id=record.task_id,
        metric_id=sim.metric_id,
        metric_max=sim.range_max,
        forward_samples=record.forward_samples,
        backward_samples=record.backward_samples,
        sim_scores=sim_scores,
        failed_forward=record.failed_forward,
        failed_cells=record.failed_cells,
        baseline_backward=record.baseline_backward,
        baseline_scores=baseline_scores,
        baseline_failed=record.baseline_failed,
        project_id=record.project_id,
    )


def estimate_rtc(record: RoundTripRecord) -> RtcEstimate:
    """Mean similarity over every sampled pair."""
    cells = [value for row in record.sim_scores for value in row]
    if not cells:
        raise ValueError(f"record {record.task_id} has no scored pairs")
    return RtcEstimate(record.task_id, math.fsum(cells) / len(cells), len(cells))


def estimate_lift(record: RoundTripRecord) -> LiftEstimate:
    """RTC minus the mean baseline score; negative lift means the forward
    samples actively confuse the backward pass."""
    if not record.baseline_scores:
        raise ValueError(f"record {record.task_id} has no baseline scores")
    rtc = estimate_rtc(record).rtc
    baseline = math.fsum(record.baseline_scores) / len(record.baseline_scores)
    return LiftEstimate(record.task_id, rtc - baseline)


@dataclass(frozen=True)
class AggregateSummary:
    group_means: dict[str, float]
    group_sizes: dict[str, int]
    overall_mean: float


def aggregate(
    estimates: Sequence[RtcEstimate | LiftEstimate],
    group_key: Callable[[str], str],
) -> AggregateSummary:
    """Arithmetic mean per group plus the overall mean across all
    estimates (not the mean of group means)."""
    if not estimates:
        raise ValueError("no estimates to aggregate")
    grouped: dict[str, list[float]] = {}
    for estimate in estimates:
        grouped.setdefault(group_key(estimate.task_id), []).append(estimate.value)
    means = {group: math.fsum(vals) / len(vals) for group, vals in sorted(grouped.items())}
    sizes = {group: len(vals) for group, vals in sorted(grouped.items())}
    overall = math.fsum(e.value for e in estimates) / len(estimates)
    return AggregateSummary(means, sizes, overall)


def run_tasks(
    tasks: Sequence[RoundTripTask],
    forward_gen: GeneratorFn,
    backward_gen: GeneratorFn,
    sim: Metric,
    cfg: SamplingConfig,
    include_baseline: bool = False,
    max_workers: int = 1,
) -> list[RoundTripRecord]:
    """Round-trip every task, preserving input order in the output."""
    if max_workers <= 1 or len(tasks) <= 1:
        return [
            run_round_trip(task, forward_gen, backward_gen, sim, cfg, include_baseline)
            for task in tasks
        ]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = [
            pool.submit(run_round_trip, task, forward_gen, backward_gen, sim, cfg, include_baseline)
            for task in tasks
        ]
        return [future.result() for future in futures]
