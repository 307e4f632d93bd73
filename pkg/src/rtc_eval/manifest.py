"""Project manifests describing the source projects a corpus is built from."""

from __future__ import annotations

import fnmatch
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SUPPORTED_LANGUAGES = ("python",)


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ProjectManifest:
    """One tested source project.

    test_command runs the full suite through a shim that emits the
    structured report format; the harness appends --mode/--out arguments.
    The pristine project must pass its own suite before any sampling.
    """

    project_id: str
    root_path: Path
    test_command: str
    source_globs: tuple[str, ...]
    test_file_patterns: tuple[str, ...] = ()
    language: str = "python"
    bootstrap_command: str | None = None

    def __post_init__(self) -> None:
        if not self.project_id:
            raise ManifestError("project_id must be non-empty")
        if not self.test_command:
            raise ManifestError("test_command must be non-empty")
        if not self.source_globs:
            raise ManifestError("source_globs must be non-empty")
        if self.language not in SUPPORTED_LANGUAGES:
            raise ManifestError(f"unsupported language: {self.language!r}")


def load_manifest(path: Path | str) -> ProjectManifest:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    try:
        root = Path(raw["root_path"])
        if not root.is_absolute():
            root = (path.parent / root).resolve()
        return ProjectManifest(
            project_id=raw["project_id"],
            root_path=root,
            test_command=raw["test_command"],
            source_globs=tuple(raw["source_globs"]),
            test_file_patterns=tuple(raw.get("test_file_patterns", ())),
            language=raw.get("language", "python"),
            bootstrap_command=raw.get("bootstrap_command"),
        )
    except KeyError as exc:
        raise ManifestError(f"manifest {path} missing field {exc}") from exc


def matches_any(rel_path: str, patterns: tuple[str, ...]) -> bool:
    posix = rel_path.replace("\\", "/")
    return any(fnmatch.fnmatch(posix, pattern) for pattern in patterns)


def iter_source_files(manifest: ProjectManifest) -> list[str]:
    """Project-relative source paths matching source_globs, with files
    matching test_file_patterns excluded. Sorted for determinism."""
    root = manifest.root_path
    found: set[str] = set()
    for pattern in manifest.source_globs:
        for hit in root.glob(pattern):
            if not hit.is_file():
                continue
            rel = hit.relative_to(root).as_posix()
            if matches_any(rel, manifest.test_file_patterns):
                continue
            found.add(rel)
    return sorted(found)
