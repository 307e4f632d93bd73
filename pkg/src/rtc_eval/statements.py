"""Line-aligned statement runs over Python source.

The corpus builder samples runs of one or more consecutive sibling
statements from the same block of the syntax tree. Runs are extended to
whole lines (a decorated definition starts at its first decorator line;
the trailing newline belongs to the run) so a run can be deleted or
replaced without leaving partial lines behind. Two runs that land on the
same line range collapse into one.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass


@dataclass(frozen=True)
class StatementRun:
    """Consecutive sibling statements as a line-aligned byte span."""

    byte_span: tuple[int, int]
    start_line: int  # 1-based, inclusive
    end_line: int  # 1-based, inclusive
    statement_count: int
    text: str

    @property
    def char_len(self) -> int:
        return len(self.text)


def line_starts(data: bytes) -> list[int]:
    """Byte offset of the start of each line."""
    starts = [0]
    pos = data.find(b"\n")
    while pos != -1:
        starts.append(pos + 1)
        pos = data.find(b"\n", pos + 1)
    # A trailing newline leaves a phantom empty final line; drop it so
    # starts[i] is the offset of real line i+1.
    if len(starts) > 1 and starts[-1] == len(data):
        starts.pop()
    return starts


def line_span_to_bytes(
    starts: list[int], total: int, start_line: int, end_line: int
) -> tuple[int, int]:
    """Half-open byte span covering whole lines start_line..end_line,
    trailing newline included."""
    begin = starts[start_line - 1]
    end = starts[end_line] if end_line < len(starts) else total
    return begin, end


def _statement_lines(node: ast.stmt) -> tuple[int, int]:
    start = node.lineno
    for decorator in getattr(node, "decorator_list", []):
        start = min(start, decorator.lineno)
    return start, node.end_lineno


def iter_statement_blocks(tree: ast.AST):
    """Yield every list of sibling statements in the tree (module body,
    function/class bodies, branch and handler bodies, ...)."""
    for node in ast.walk(tree):
        for field in ("body", "orelse", "finalbody"):
            block = getattr(node, field, None)
            if isinstance(block, list) and block and isinstance(block[0], ast.stmt):
                yield block


def statement_runs(
    text: str, min_chars: int = 1, max_chars: int | None = None
) -> list[StatementRun]:
    """Every sibling-statement run whose line-aligned text length lies in
    [min_chars, max_chars], ordered by (start offset, end offset).

    Raises SyntaxError when the source does not parse.
    """
    data = text.encode("utf-8")
    tree = ast.parse(text)
    starts = line_starts(data)
    total = len(data)
    by_span: dict[tuple[int, int], StatementRun] = {}
    for block in iter_statement_blocks(tree):
        lines = [_statement_lines(stmt) for stmt in block]
        for i in range(len(block)):
            start_line = lines[i][0]
            end_line = 0
            for j in range(i, len(block)):
                end_line = max(end_line, lines[j][1])
                span = line_span_to_bytes(starts, total, start_line, end_line)
                run_text = data[span[0] : span[1]].decode("utf-8")
                length = len(run_text)
                if max_chars is not None and length > max_chars:
                    break  # extending j only grows the span
                if length < min_chars:
                    continue
                run = StatementRun(span, start_line, end_line, j - i + 1, run_text)
                existing = by_span.get(span)
                # Statements sharing a line collapse to one span; keep the
                # count that covers everything inside it.
                if existing is None or run.statement_count > existing.statement_count:
                    by_span[span] = run
    return sorted(by_span.values(), key=lambda r: r.byte_span)
