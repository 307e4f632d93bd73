"""Build region-task corpora from tested source projects.

Pipeline: enumerate candidate statement runs per file, weight them by
length and containment, order them by seeded weighted sampling without
replacement, then keep only ranges that the test suite covers and whose
deletion observably changes the suite's results.
"""

from __future__ import annotations

import ast
import logging
import math
import random
from dataclasses import dataclass, replace
from typing import Iterable, Mapping

from .manifest import ProjectManifest, iter_source_files
from .sandbox import SESSION_COVERAGE_ID, SandboxRunner, TestReport, reports_differ
from .statements import statement_runs

logger = logging.getLogger(__name__)

MIN_CHARS = 32
MAX_CHARS = 384
CONTEXT_BUDGET = 1024
PER_PROJECT = 100
MIN_ACCEPT = 80
BASELINE_RUNS = 3


class CorpusError(RuntimeError):
    pass


@dataclass(frozen=True)
class CandidateRange:
    """One enumerable statement run of a source file."""

    file: str  # project-relative posix path
    byte_span: tuple[int, int]
    char_len: int
    statement_count: int
    start_line: int
    end_line: int
    weight: float = 0.0


@dataclass(frozen=True)
class RegionTask:
    """One region-description round-trip unit."""

    task_id: str
    project_id: str
    file: str
    byte_span: tuple[int, int]
    region_text: str
    context_before: str
    context_after: str
    test_command: str

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "project_id": self.project_id,
            "file": self.file,
            "byte_span": list(self.byte_span),
            "region_text": self.region_text,
            "context_before": self.context_before,
            "context_after": self.context_after,
            "test_command": self.test_command,
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "RegionTask":
        return cls(
            task_id=raw["task_id"],
            project_id=raw["project_id"],
            file=raw["file"],
            byte_span=(int(raw["byte_span"][0]), int(raw["byte_span"][1])),
            region_text=raw["region_text"],
            context_before=raw["context_before"],
            context_after=raw["context_after"],
            test_command=raw["test_command"],
        )


@dataclass(frozen=True)
class ProjectRejected:
    project_id: str
    reason: str
    accepted: int


@dataclass
class CorpusStats:
    project_id: str
    files_enumerated: int = 0
    files_skipped: int = 0
    candidates_enumerated: int = 0
    drawn: int = 0
    coverage_rejected: int = 0
    mutation_rejected: int = 0
    mutation_timeouts: int = 0
    accepted: int = 0

    @property
    def acceptance_rate(self) -> float | None:
        return self.accepted / self.drawn if self.drawn else None

    def to_dict(self) -> dict:
        return {
            "project_id": self.project_id,
            "files_enumerated": self.files_enumerated,
            "files_skipped": self.files_skipped,
            "candidates_enumerated": self.candidates_enumerated,
            "drawn": self.drawn,
            "coverage_rejected": self.coverage_rejected,
            "mutation_rejected": self.mutation_rejected,
            "mutation_timeouts": self.mutation_timeouts,
            "accepted": self.accepted,
            "acceptance_rate": self.acceptance_rate,
        }


class CoverageMap:
    """Relation (file, line) -> ids of the tests executing that line.

    Line numbers are 1-based. Execution outside any single test (imports
    during collection) is kept under the reserved __session__ id; it
    counts as suite coverage but belongs to no individual test.
    """

    def __init__(self, known_tests: Iterable[str]):
        self._known = set(known_tests)
        self._by_line: dict[tuple[str, int], set[str]] = {}

    @classmethod
    def from_shim_coverage(
        cls, coverage: Mapping[str, Iterable[tuple[str, int]]], known_tests: Iterable[str]
    ) -> "CoverageMap":
        cmap = cls(known_tests)
        for test_id, pairs in coverage.items():
            if test_id != SESSION_COVERAGE_ID and test_id not in cmap._known:
                raise CorpusError(f"coverage references unknown test {test_id!r}")
            for file, line in pairs:
                if line < 1:
                    raise CorpusError(f"bad line number {line} for {file}")
                cmap._by_line.setdefault((str(file), int(line)), set()).add(test_id)
        return cmap

    def tests_covering(self, file: str, line: int) -> frozenset[str]:
        return frozenset(self._by_line.get((file, line), ()))

    def any_line_covered(self, file: str, start_line: int, end_line: int) -> bool:
        return any(
            self._by_line.get((file, line)) for line in range(start_line, end_line + 1)
        )


def enumerate_candidates(
    file_path: str,
    file_text: str,
    cst=None,
    test_file_patterns: tuple[str, ...] = (),
    min_chars: int = MIN_CHARS,
    max_chars: int = MAX_CHARS,
) -> list[CandidateRange]:
    """All consecutive-sibling statement runs of the file whose span length
    lies in [min_chars, max_chars], ordered by (start, end) offsets.

    The caller excludes test files; a parse failure propagates as
    SyntaxError and skips the file at project level.
    """
    del cst  # the stdlib parse below is the only supported tree form
    from .manifest import matches_any

    if matches_any(file_path, test_file_patterns):
        raise CorpusError(f"{file_path} matches test_file_patterns")
    runs = statement_runs(file_text, min_chars=min_chars, max_chars=max_chars)
    return [
        CandidateRange(
            file=file_path,
            byte_span=run.byte_span,
            char_len=run.char_len,
            statement_count=run.statement_count,
            start_line=run.start_line,
            end_line=run.end_line,
        )
        for run in runs
    ]


def _contains(outer: CandidateRange, inner: CandidateRange) -> bool:
    return (
        outer.file == inner.file
        and outer.byte_span[0] <= inner.byte_span[0]
        and outer.byte_span[1] >= inner.byte_span[1]
    )


def sampling_weight(candidate: CandidateRange, all_candidates: Iterable[CandidateRange]) -> float:
    """char_len divided by the number of candidates (itself included) whose
    span contains the candidate's span."""
    containment = sum(1 for other in all_candidates if _contains(other, candidate))
    if containment == 0:
        raise CorpusError("candidate not in pool")
    return candidate.char_len / containment


def assign_weights(candidates: list[CandidateRange]) -> list[CandidateRange]:
    by_file: dict[str, list[CandidateRange]] = {}
    for cand in candidates:
        by_file.setdefault(cand.file, []).append(cand)
    out = []
    for cand in candidates:
        out.append(replace(cand, weight=sampling_weight(cand, by_file[cand.file])))
    return out


def coverage_filter(candidate: CandidateRange, coverage_map: CoverageMap) -> bool:
    """True when at least one line of the candidate span is executed by the
    suite."""
    return coverage_map.any_line_covered(
        candidate.file, candidate.start_line, candidate.end_line
    )


def build_context(
    file_text: str, byte_span: tuple[int, int], budget: int = CONTEXT_BUDGET
) -> tuple[str, str]:
    """Whole lines around the span, added alternately before/after
    (before first) until the next line would push the combined character
    count past the budget. Lines keep their newline characters."""
    if budget < 0:
        raise ValueError("budget must be >= 0")
    data = file_text.encode("utf-8")
    start, end = byte_span
    before_lines = data[:start].decode("utf-8").splitlines(keepends=True)
    after_lines = data[end:].decode("utf-8").splitlines(keepends=True)
    before: list[str] = []
    after: list[str] = []
    total = 0
    take_before = True
    bi = len(before_lines) - 1
    ai = 0
    while bi >= 0 or ai < len(after_lines):
        if take_before and bi < 0:
            take_before = False
        elif not take_before and ai >= len(after_lines):
            take_before = True
        if take_before:
            line = before_lines[bi]
        else:
            line = after_lines[ai]
        if total + len(line) > budget:
            break
        if take_before:
            before.append(line)
            bi -= 1
        else:
            after.append(line)
            ai += 1
        total += len(line)
        take_before = not take_before
    return "".join(reversed(before)), "".join(after)


@dataclass(frozen=True)
class MutationResult:
    keep: bool
    timed_out: bool = False
    parse_failed: bool = False


def delete_with_repair(file_bytes: bytes, byte_span: tuple[int, int]) -> tuple[bytes, bool]:
    """Delete the span; if that empties a suite the deletion is repaired
    with a no-op statement at the original indentation so a missing body
    is not mistaken for a syntax error. Returns (mutant, parse_ok)."""
    start, end = byte_span
    mutant = file_bytes[:start] + file_bytes[end:]
    if _parses(mutant):
        return mutant, True
    first_line = file_bytes[start:end].decode("utf-8").splitlines()[0] if end > start else ""
    indent = first_line[: len(first_line) - len(first_line.lstrip())]
    repaired = file_bytes[:start] + f"{indent}pass\n".encode("utf-8") + file_bytes[end:]
    if _parses(repaired):
        return repaired, True
    return mutant, False


def _parses(data: bytes) -> bool:
    try:
        ast.parse(data.decode("utf-8"))
    except (SyntaxError, ValueError):
        return False
    return True


def mutation_filter(
    candidate: CandidateRange,
    manifest: ProjectManifest,
    sandbox: SandboxRunner,
    baseline: TestReport,
    timeout: float | None = None,
) -> MutationResult:
    """Keep the candidate only if deleting it observably changes the suite:
    a flipped test outcome, a collection change, a parse failure, or a
    timeout (a hung mutant is an observable effect too)."""
    source = (manifest.root_path / candidate.file).read_bytes()
    mutant, parse_ok = delete_with_repair(source, candidate.byte_span)
    if not parse_ok:
        return MutationResult(keep=True, parse_failed=True)
    with sandbox.worktree(manifest.root_path, manifest.project_id) as wt:
        target = wt.path / candidate.file
        target.write_bytes(mutant)
        wt.dirty = True
        report = sandbox.run_tests(wt, manifest.test_command, timeout=timeout)
    if report.timed_out:
        return MutationResult(keep=True, timed_out=True)
    return MutationResult(keep=reports_differ(baseline, report))


def weighted_order(candidates: list[CandidateRange], rng: random.Random) -> list[int]:
    """Deterministic order equivalent to repeated weighted draws without
    replacement (exponential-jump keys, one uniform per candidate)."""
    keyed = []
    for index, cand in enumerate(candidates):
        u = rng.random()
        key = math.log(u) / cand.weight if u > 0.0 else float("-inf")
        keyed.append((key, index))
    keyed.sort(key=lambda pair: (-pair[0], pair[1]))
    return [index for _, index in keyed]


def run_baseline(
    manifest: ProjectManifest, sandbox: SandboxRunner, timeout: float | None = None
) -> tuple[TestReport, CoverageMap]:
    """Establish the pristine-suite baseline: one coverage run plus two
    plain runs on the same worktree. Disagreement between the three runs
    (a flaky suite) or any failing test is a hard error."""
    with sandbox.worktree(manifest.root_path, manifest.project_id) as wt:
        first = sandbox.run_tests(wt, manifest.test_command, timeout=timeout, mode="with_coverage")
        repeats = [
            sandbox.run_tests(wt, manifest.test_command, timeout=timeout)
            for _ in range(BASELINE_RUNS - 1)
        ]
    for other in repeats:
        if reports_differ(first, other):
            raise CorpusError(f"flaky baseline for {manifest.project_id}: runs disagree")
    if not first.all_passed():
        raise CorpusError(
            f"baseline for {manifest.project_id} is not all-passing "
            f"(collected={first.collected}, failures={first.failure_count}, "
            f"exit={first.exit_status})"
        )
    if first.coverage is None:
        raise CorpusError(f"baseline for {manifest.project_id} produced no coverage data")
    known = [t.test_id for t in first.tests]
    return first, CoverageMap.from_shim_coverage(first.coverage, known)


def enumerate_project(
    manifest: ProjectManifest,
    min_chars: int = MIN_CHARS,
    max_chars: int = MAX_CHARS,
    stats: CorpusStats | None = None,
) -> list[CandidateRange]:
    """Weighted candidate pool over all source files, in canonical order."""
    pool: list[CandidateRange] = []
    for rel in iter_source_files(manifest):
        text = (manifest.root_path / rel).read_text(encoding="utf-8")
        try:
            found = enumerate_candidates(
                rel, text, min_chars=min_chars, max_chars=max_chars
            )
        except SyntaxError as exc:
            logger.warning("skipping unparseable file %s: %s", rel, exc)
            if stats is not None:
                stats.files_skipped += 1
            continue
        if stats is not None:
            stats.files_enumerated += 1
        pool.extend(found)
    pool.sort(key=lambda c: (c.file, c.byte_span))
    if stats is not None:
        stats.candidates_enumerated = len(pool)
    return assign_weights(pool)


def _task_id(project_id: str, cand: CandidateRange) -> str:
    return f"{project_id}:{cand.file}:{cand.byte_span[0]}-{cand.byte_span[1]}"


def sample_project(
    manifest: ProjectManifest,
    rng_seed: int,
    per_project: int = PER_PROJECT,
    min_accept: int = MIN_ACCEPT,
    *,
    sandbox: SandboxRunner,
    min_chars: int = MIN_CHARS,
    max_chars: int = MAX_CHARS,
    context_budget: int = CONTEXT_BUDGET,
    test_timeout: float | None = None,
) -> tuple[list[RegionTask] | ProjectRejected, CorpusStats]:
    """Draw, filter, and package tasks for one project.

    Deterministic for a given (manifest contents, rng_seed): candidates
    are walked in a seeded weighted order and accepted until per_project
    tasks pass both filters or the pool runs out. Fewer than min_accept
    acceptances rejects the whole project.
    """
    stats = CorpusStats(project_id=manifest.project_id)
    baseline, coverage_map = run_baseline(manifest, sandbox, timeout=test_timeout)
    pool = enumerate_project(manifest, min_chars, max_chars, stats)

    rng = random.Random(rng_seed)
    order = weighted_order(pool, rng)

    file_cache: dict[str, str] = {}
    accepted: list[RegionTask] = []
    for index in order:
        if len(accepted) >= per_project:
            break
        cand = pool[index]
        stats.drawn += 1
        if not coverage_filter(cand, coverage_map):
            stats.coverage_rejected += 1
            continue
        outcome = mutation_filter(cand, manifest, sandbox, baseline, timeout=test_timeout)
        if outcome.timed_out:
            stats.mutation_timeouts += 1
        if not outcome.keep:
            stats.mutation_rejected += 1
            continue
        text = file_cache.setdefault(
            cand.file, (manifest.root_path / cand.file).read_text(encoding="utf-8")
        )
        before, after = build_context(text, cand.byte_span, context_budget)
        region_text = text.encode("utf-8")[cand.byte_span[0] : cand.byte_span[1]].decode("utf-8")
        accepted.append(
            RegionTask(
                task_id=_task_id(manifest.project_id, cand),
                project_id=manifest.project_id,
                file=cand.file,
                byte_span=cand.byte_span,
                region_text=region_text,
                context_before=before,
                context_after=after,
                test_command=manifest.test_command,
            )
        )
        stats.accepted += 1

    if stats.accepted < min_accept:
        rejected = ProjectRejected(
            project_id=manifest.project_id,
            reason=f"accepted {stats.accepted} < min_accept {min_accept}",
            accepted=stats.accepted,
        )
        return rejected, stats
    return accepted, stats
