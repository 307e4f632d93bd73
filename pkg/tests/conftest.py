"""Shared fixtures: materialized fixture projects and their manifests.

Fixture projects live under tests/fixtures as plain source trees; tests
get a copy in a temp directory with the fixture suite runner injected so
worktrees are self-contained.
"""

from __future__ import annotations

import shutil
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"
RUNNER_SOURCE = FIXTURES / "fixture_runner.py"
TEST_COMMAND = "python3 run_suite.py"


def materialize_project(source: Path, dest: Path) -> Path:
    shutil.copytree(source, dest)
    shutil.copy2(RUNNER_SOURCE, dest / "run_suite.py")
    return dest


def write_manifest(
    path: Path,
    project_id: str,
    root: Path,
    source_globs: list[str],
    test_file_patterns: list[str],
) -> Path:
    globs = ", ".join(f'"{g}"' for g in source_globs)
    patterns = ", ".join(f'"{p}"' for p in test_file_patterns)
    path.write_text(
        f'project_id = "{project_id}"\n'
        f'root_path = "{root}"\n'
        f'test_command = "{TEST_COMMAND}"\n'
        f"source_globs = [{globs}]\n"
        f"test_file_patterns = [{patterns}]\n"
        'language = "python"\n',
        encoding="utf-8",
    )
    return path


@pytest.fixture(scope="session")
def calcproj(tmp_path_factory) -> Path:
    dest = tmp_path_factory.mktemp("calcproj-base") / "calcproj"
    return materialize_project(FIXTURES / "calcproj", dest)


@pytest.fixture(scope="session")
def calcproj_manifest(calcproj, tmp_path_factory) -> Path:
    path = tmp_path_factory.mktemp("manifests") / "calcproj.toml"
    return write_manifest(
        path,
        "calcproj",
        calcproj,
        ["calclib/*.py"],
        ["tests/*", "run_suite.py"],
    )


@pytest.fixture(scope="session")
def minproj(tmp_path_factory) -> Path:
    dest = tmp_path_factory.mktemp("minproj-base") / "minproj"
    return materialize_project(FIXTURES / "minproj", dest)


@pytest.fixture(scope="session")
def minproj_manifest(minproj, tmp_path_factory) -> Path:
    path = tmp_path_factory.mktemp("manifests") / "minproj.toml"
    return write_manifest(
        path,
        "minproj",
        minproj,
        ["minilib.py"],
        ["tests/*", "run_suite.py"],
    )


@pytest.fixture
def sandbox_runner(tmp_path):
    from rtc_eval.sandbox import SandboxRunner

    runner = SandboxRunner(max_parallel=4, default_timeout=120.0, workdir=tmp_path / "sandbox")
    yield runner
    runner.cleanup()
