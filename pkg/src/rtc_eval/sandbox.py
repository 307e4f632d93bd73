"""Isolated execution of project test suites in disposable worktrees.

This module owns all file mutation and subprocess mechanics. A worktree
is a full copy of the project; test runs happen inside it as separate
processes with CPU/time limits, and nothing the harness does touches the
original project files.
"""

from __future__ import annotations

import logging
import math
import os
import shlex
import shutil
import signal
import subprocess
import sys
import tempfile
import threading
import time
from collections import Counter
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

logger = logging.getLogger(__name__)

OUTCOMES = ("pass", "fail", "error", "skip")
SHIM_REPORT_BASENAME = ".rtc_shim_report.json"
SHIM_SCHEMA_VERSION = 1
SESSION_COVERAGE_ID = "__session__"
DEFAULT_TEST_TIMEOUT = 300.0


class SandboxError(RuntimeError):
    pass


class WorktreeLimitExceeded(SandboxError):
    pass


@dataclass(frozen=True)
class TestCaseResult:
    __test__ = False  # not a pytest class despite the name

    test_id: str
    outcome: str
    duration_seconds: float


@dataclass(frozen=True)
class TestReport:
    """Structured result of one suite run inside a worktree."""

    __test__ = False  # not a pytest class despite the name

    tests: tuple[TestCaseResult, ...]
    exit_status: int
    collected: int
    wall_time_seconds: float
    timed_out: bool
    coverage: dict[str, tuple[tuple[str, int], ...]] | None = None

    def outcome_multiset(self) -> Counter:
        return Counter((t.test_id, t.outcome) for t in self.tests)

    @property
    def failure_count(self) -> int:
        return sum(1 for t in self.tests if t.outcome in ("fail", "error"))

    def all_passed(self) -> bool:
        return (
            not self.timed_out
            and self.collected > 0
            and self.failure_count == 0
            and self.exit_status == 0
        )


def reports_differ(a: TestReport, b: TestReport) -> bool:
    """True when the two runs show any observable difference: a flipped
    outcome, a different collected count, or a timeout on either side."""
    if a.timed_out or b.timed_out:
        return True
    if a.collected != b.collected:
        return True
    return a.outcome_multiset() != b.outcome_multiset()


@dataclass
class Worktree:
    id: str
    path: Path
    parent_project: str
    dirty: bool = False
    _spliced: list[tuple[str, int, int]] = field(default_factory=list)


def parse_shim_report(payload: str) -> tuple[list[TestCaseResult], int, dict | None]:
    """Validate a shim report document; returns (tests, collected, coverage)."""
    import json

    doc = json.loads(payload)
    if doc.get("schema_version") != SHIM_SCHEMA_VERSION:
        raise SandboxError(f"unsupported shim report schema: {doc.get('schema_version')!r}")
    tests = []
    for entry in doc["tests"]:
        outcome = entry["outcome"]
        if outcome not in OUTCOMES:
            raise SandboxError(f"unknown test outcome {outcome!r}")
        tests.append(TestCaseResult(entry["id"], outcome, float(entry.get("duration", 0.0))))
    collected = int(doc["collected"])
    coverage = doc.get("coverage")
    if coverage is not None:
        known = {t.test_id for t in tests} | {SESSION_COVERAGE_ID}
        unknown = set(coverage) - known
        if unknown:
            raise SandboxError(f"coverage references unknown tests: {sorted(unknown)[:3]}")
        coverage = {
            test_id: tuple((str(f), int(line)) for f, line in pairs)
            for test_id, pairs in coverage.items()
        }
    return tests, collected, coverage


class SandboxRunner:
    """Bounded pool of disposable project copies plus the subprocess glue.

    At most max_parallel worktrees exist at a time; each run gets a CPU
    limit backstopping the wall-clock timeout and is killed as a whole
    process group when it overruns.
    """

    def __init__(
        self,
        max_parallel: int = 4,
        default_timeout: float = DEFAULT_TEST_TIMEOUT,
        no_network: bool = False,
        shim_source: Path | str | None = None,
        workdir: Path | str | None = None,
    ):
        if max_parallel < 1:
            raise ValueError("max_parallel must be >= 1")
        self.max_parallel = max_parallel
        self.default_timeout = default_timeout
        self.no_network = no_network
        self.shim_source = Path(shim_source) if shim_source else None
        self._root = Path(workdir) if workdir else Path(tempfile.mkdtemp(prefix="rtc-sandbox-"))
        self._root.mkdir(parents=True, exist_ok=True)
        self._slots = threading.BoundedSemaphore(max_parallel)
        self._lock = threading.Lock()
        self._counter = 0
        self.in_use = 0

    def acquire_worktree(self, project_root: Path | str, project_id: str, block: bool = True) -> Worktree:
        if not self._slots.acquire(blocking=block):
            raise WorktreeLimitExceeded(f"worktree cap of {self.max_parallel} reached")
        try:
            project_root = Path(project_root)
            if not project_root.is_dir():
                raise SandboxError(f"project root not readable: {project_root}")
            with self._lock:
                self._counter += 1
                self.in_use += 1
                wt_id = f"{project_id}-{self._counter:04d}"
            dest = self._root / wt_id
            shutil.copytree(
                project_root,
                dest,
                ignore=shutil.ignore_patterns("__pycache__", ".git", "*.pyc"),
            )
            if self.shim_source is not None:
                shutil.copy2(self.shim_source, dest / self.shim_source.name)
            return Worktree(id=wt_id, path=dest, parent_project=project_id)
        except BaseException:
            with self._lock:
                self.in_use -= 1
            self._slots.release()
            raise

    def release_worktree(self, worktree: Worktree) -> None:
        shutil.rmtree(worktree.path, ignore_errors=True)
        with self._lock:
            self.in_use -= 1
        self._slots.release()

    @contextmanager
    def worktree(self, project_root: Path | str, project_id: str):
        wt = self.acquire_worktree(project_root, project_id)
        try:
            yield wt
        finally:
            self.release_worktree(wt)

    def apply_splice(
        self, worktree: Worktree, rel_file: str, byte_span: tuple[int, int], replacement: str | bytes
    ) -> None:
        """Replace the bytes at byte_span of the worktree file. Overlapping
        splices of the same file are refused: offsets shift after a splice."""
        start, end = byte_span
        for other_file, other_start, other_end in worktree._spliced:
            if other_file == rel_file and start < other_end and end > other_start:
                raise SandboxError(f"overlapping splice on {rel_file}")
        target = worktree.path / rel_file
        data = target.read_bytes()
        if not (0 <= start <= end <= len(data)):
            raise SandboxError(f"splice span {byte_span} out of bounds for {rel_file}")
        if isinstance(replacement, str):
            replacement = replacement.encode("utf-8")
        target.write_bytes(data[:start] + replacement + data[end:])
        worktree.dirty = True
        worktree._spliced.append((rel_file, start, end))

    def _run_env(self) -> dict[str, str]:
        env = dict(os.environ)
        env["PYTHONDONTWRITEBYTECODE"] = "1"
        if self.no_network:
            # Best effort only: reroutes proxy-aware clients to a dead port.
            env["http_proxy"] = env["https_proxy"] = "http://127.0.0.1:9/"
            env["HTTP_PROXY"] = env["HTTPS_PROXY"] = "http://127.0.0.1:9/"
            env["NO_PROXY"] = env["no_proxy"] = ""
        return env

    def run_tests(
        self,
        worktree: Worktree,
        test_command: str,
        timeout: float | None = None,
        mode: str = "report_only",
    ) -> TestReport:
        """Run the suite via the project's shim command and parse its report.

        A timeout kills the whole process group and yields a timed-out
        report; an unreadable report becomes an error report that keeps
        the subprocess exit status.
        """
        if mode not in ("report_only", "with_coverage"):
            raise ValueError(f"unknown mode {mode!r}")
        timeout = self.default_timeout if timeout is None else timeout
        report_path = worktree.path / SHIM_REPORT_BASENAME
        argv = shlex.split(test_command) + ["--mode", mode, "--out", SHIM_REPORT_BASENAME]
        cpu_seconds = max(int(math.ceil(timeout)) + 10, 1)

        def set_limits():  # pragma: no cover - runs in the child
            try:
                import resource

                resource.setrlimit(resource.RLIMIT_CPU, (cpu_seconds, cpu_seconds))
            except Exception:
                pass

        started = time.monotonic()
        proc = subprocess.Popen(
            argv,
            cwd=worktree.path,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            env=self._run_env(),
            start_new_session=True,
            preexec_fn=set_limits if os.name == "posix" else None,
        )
        timed_out = False
        try:
            _, stderr = proc.communicate(timeout=timeout)
        except subprocess.TimeoutExpired:
            timed_out = True
            try:
                os.killpg(os.getpgid(proc.pid), signal.SIGKILL)
            except (ProcessLookupError, PermissionError):
                proc.kill()
            _, stderr = proc.communicate()
        wall = time.monotonic() - started

        if timed_out:
            return TestReport((), proc.returncode, 0, wall, True)
        try:
            payload = report_path.read_text(encoding="utf-8")
            tests, collected, coverage = parse_shim_report(payload)
        except (OSError, ValueError, KeyError, SandboxError) as exc:
            logger.warning(
                "unparseable shim output in %s (exit %s): %s", worktree.id, proc.returncode, exc
            )
            if stderr:
                logger.debug("shim stderr: %s", stderr.decode("utf-8", "replace")[-2000:])
            error_entry = TestCaseResult("<shim-error>", "error", 0.0)
            return TestReport((error_entry,), proc.returncode, 0, wall, False)
        return TestReport(tuple(tests), proc.returncode, collected, wall, False, coverage)

    def run_python_program(
        self, code: str, timeout: float | None = None
    ) -> tuple[int, bool]:
        """Execute a standalone Python program in a scratch directory.

        Returns (exit_status, timed_out); used by the single-file pass
        oracles that have no project worktree.
        """
        timeout = self.default_timeout if timeout is None else timeout
        with tempfile.TemporaryDirectory(dir=self._root, prefix="prog-") as tmp:
            target = Path(tmp) / "prog.py"
            target.write_text(code, encoding="utf-8")
            proc = subprocess.Popen(
                [sys.executable, str(target)],
                cwd=tmp,
                stdout=subprocess.DEVNULL,
                stderr=subprocess.DEVNULL,
                env=self._run_env(),
                start_new_session=True,
            )
            try:
                proc.communicate(timeout=timeout)
            except subprocess.TimeoutExpired:
                try:
                    os.killpg(os.getpgid(proc.pid), signal.SIGKILL)
                except (ProcessLookupError, PermissionError):
                    proc.kill()
                proc.communicate()
                return proc.returncode, True
            return proc.returncode, False

    def cleanup(self) -> None:
        shutil.rmtree(self._root, ignore_errors=True)
