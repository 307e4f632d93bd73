#!/usr/bin/env python3
"""In-project suite runner with per-test line coverage.

Run from a project root, executes the test suite with the project's own
test tooling (pytest when importable, unittest discovery otherwise) and
writes a structured report:

    {"schema_version": 1,
     "tests": [{"id": ..., "outcome": "pass|fail|error|skip", "duration": ...}],
     "collected": N,
     "coverage": {"<test id>": [[file, line], ...], "__session__": [...]}}

Coverage (with_coverage mode) is line-level via the standard trace hook;
execution outside any single test - imports during collection - is kept
under the reserved "__session__" id. File paths are relative to the
project root. The exit status is 0 whenever the runner itself completed;
test failures live in the report, never in the exit status. Project files
are never modified.

Single file on purpose: it gets copied into disposable project worktrees
and must not drag harness dependencies along.
"""

import argparse
import json
import os
import sys
import time
import unittest

SCHEMA_VERSION = 1
SESSION_ID = "__session__"
OUTCOME_PASS = "pass"
OUTCOME_FAIL = "fail"
OUTCOME_ERROR = "error"
OUTCOME_SKIP = "skip"


class LineTracer:
    """Buckets executed (file, line) pairs by the currently running test."""

    def __init__(self, root):
        self.root = os.path.abspath(root)
        self.prefix = self.root + os.sep
        self.own_file = os.path.abspath(__file__)
        self.buckets = {SESSION_ID: set()}
        self.current = self.buckets[SESSION_ID]

    def switch(self, bucket_id):
        self.current = self.buckets.setdefault(bucket_id, set())

    def _trace(self, frame, event, arg):
        if event == "line":
            path = frame.f_code.co_filename
            if path.startswith(self.prefix) and path != self.own_file:
                self.current.add((path[len(self.prefix):].replace(os.sep, "/"), frame.f_lineno))
        return self._trace

    def install(self):
        sys.settrace(self._trace)

    def uninstall(self):
        sys.settrace(None)

    def as_document(self):
        return {
            bucket_id: sorted([path, line] for path, line in pairs)
            for bucket_id, pairs in self.buckets.items()
            if pairs
        }


# -- pytest runner --------------------------------------------------------


class PytestRecorder:
    """pytest plugin: per-test outcomes plus tracer bucket switching."""

    def __init__(self, tracer=None):
        self.tracer = tracer
        self.order = []
        self.results = {}
        self.collect_failures = []

    def _entry(self, nodeid):
        if nodeid not in self.results:
            self.order.append(nodeid)
            self.results[nodeid] = {"id": nodeid, "outcome": OUTCOME_PASS, "duration": 0.0}
        return self.results[nodeid]

    def pytest_runtest_protocol(self, item, nextitem):
        if self.tracer is not None:
            self.tracer.switch(item.nodeid)
        return None  # record-keeping only; run the default protocol

    def pytest_runtest_logfinish(self, nodeid, location):
        if self.tracer is not None:
            self.tracer.switch(SESSION_ID)

    def pytest_runtest_logreport(self, report):
        entry = self._entry(report.nodeid)
        entry["duration"] += getattr(report, "duration", 0.0)
        if report.skipped:
            if entry["outcome"] == OUTCOME_PASS:
                entry["outcome"] = OUTCOME_SKIP
        elif report.failed:
            # A failing test body is a failure; a broken fixture or
            # teardown is an error.
            entry["outcome"] = OUTCOME_FAIL if report.when == "call" else OUTCOME_ERROR

    def pytest_collectreport(self, report):
        if report.failed:
            self.collect_failures.append(report.nodeid or "<collection>")

    def report_entries(self):
        tests = [self.results[nodeid] for nodeid in self.order]
        for nodeid in self.collect_failures:
            tests.append(
                {"id": f"<collect-error:{nodeid}>", "outcome": OUTCOME_ERROR, "duration": 0.0}
            )
        collected = len(self.order)
        return tests, collected


def run_with_pytest(tracer, extra_args):
    import pytest

    recorder = PytestRecorder(tracer)
    args = ["-q", "-p", "no:cacheprovider"] + list(extra_args)
    pytest.main(args, plugins=[recorder])
    return recorder.report_entries()


# -- unittest fallback -----------------------------------------------------


class UnittestRecorder(unittest.TestResult):
    def __init__(self, tracer=None):
        super().__init__()
        self.tracer = tracer
        self.entries = []
        self._outcomes = {}
        self._started = {}

    def startTest(self, test):
        super().startTest(test)
        self._started[test.id()] = time.perf_counter()
        if self.tracer is not None:
            self.tracer.switch(test.id())

    def stopTest(self, test):
        super().stopTest(test)
        if self.tracer is not None:
            self.tracer.switch(SESSION_ID)
        duration = time.perf_counter() - self._started.get(test.id(), time.perf_counter())
        outcome = self._outcomes.pop(test.id(), OUTCOME_PASS)
        self.entries.append({"id": test.id(), "outcome": outcome, "duration": duration})

    def addFailure(self, test, err):
        super().addFailure(test, err)
        self._outcomes[test.id()] = OUTCOME_FAIL

    def addError(self, test, err):
        super().addError(test, err)
        self._outcomes[test.id()] = OUTCOME_ERROR

    def addSkip(self, test, reason):
        super().addSkip(test, reason)
        self._outcomes[test.id()] = OUTCOME_SKIP

    def addUnexpectedSuccess(self, test):
        super().addUnexpectedSuccess(test)
        self._outcomes[test.id()] = OUTCOME_FAIL


def run_with_unittest(tracer):
    loader = unittest.TestLoader()
    start_dir = "tests" if os.path.isdir("tests") else "."
    try:
        suite = loader.discover(start_dir, top_level_dir=os.getcwd())
    except Exception:
        return [{"id": "<collect-error>", "outcome": OUTCOME_ERROR, "duration": 0.0}], 0
    recorder = UnittestRecorder(tracer)
    suite.run(recorder)
    return recorder.entries, len(recorder.entries)


# -- entry point -----------------------------------------------------------


def _pick_runner():
    # RTC_SHIM_RUNNER=unittest forces the fallback (used to exercise it in
    # environments where pytest is importable anyway).
    if os.environ.get("RTC_SHIM_RUNNER") == "unittest":
        return "unittest"
    try:
        import pytest  # noqa: F401 - probe the project's tooling
    except ImportError:
        return "unittest"
    return "pytest"


def build_report(mode, extra_args=()):
    root = os.getcwd()
    if root not in sys.path:
        sys.path.insert(0, root)
    tracer = LineTracer(root) if mode == "with_coverage" else None
    if tracer is not None:
        tracer.install()
    try:
        if _pick_runner() == "unittest":
            tests, collected = run_with_unittest(tracer)
        else:
            tests, collected = run_with_pytest(tracer, extra_args)
    finally:
        if tracer is not None:
            tracer.uninstall()

    report = {"schema_version": SCHEMA_VERSION, "tests": tests, "collected": collected}
    if tracer is not None:
        report["coverage"] = tracer.as_document()
    return report


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--mode", choices=("report_only", "with_coverage"), default="report_only")
    parser.add_argument("--out", required=True)
    parser.add_argument("extra", nargs="*", help="extra arguments passed to pytest")
    args = parser.parse_args(argv)

    report = build_report(args.mode, args.extra)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(report, fh)
    return 0


if __name__ == "__main__":
    sys.exit(main())
