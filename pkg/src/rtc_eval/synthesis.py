"""Region-description round trips.

Forward: show a code region inside its file context and ask for a concise
natural-language description. Backward: replace the region with a TODO
comment carrying that description and ask for the implementation. Scoring
splices the reconstruction into a fresh worktree and runs the full suite.
"""

from __future__ import annotations

import ast
import logging
from dataclasses import dataclass
from pathlib import Path

from .corpus import RegionTask
from .sandbox import SandboxRunner
from .similarity import strip_code_fences

logger = logging.getLogger(__name__)

COMMENT_MARKER = "#"  # v1 corpora are Python
BASELINE_DESCRIPTION = "Implement."
REGION_BEGIN = "# <<region>>"
REGION_END = "# <<end region>>"

FORWARD_INSTRUCTION = (
    "Describe concisely with natural language the code between the "
    f"{REGION_BEGIN} and {REGION_END} markers."
)
BACKWARD_INSTRUCTION = (
    "Write the code that replaces the TODO comment below. "
    "Output only the replacement code."
)

FORWARD_FEW_SHOT = """\
Code:
def mean(values):
# <<region>>
    total = sum(values)
    return total / len(values)
# <<end region>>

Description: add up the values and return their arithmetic mean

Code:
names = []
for row in table:
# <<region>>
    if row.active:
        names.append(row.name)
# <<end region>>

Description: collect the names of the active rows

Code:
# <<region>>
counts = Counter(words)
top_pairs = counts.most_common(5)
# <<end region>>
print(top_pairs)

Description: count the words and keep the five most common ones
"""

BACKWARD_FEW_SHOT = """\
Code:
def mean(values):
    # TODO: add up the values and return their arithmetic mean

Replacement:
    total = sum(values)
    return total / len(values)

Code:
names = []
for row in table:
    # TODO: collect the names of the active rows

Replacement:
    if row.active:
        names.append(row.name)

Code:
# TODO: count the words and keep the five most common ones
print(top_pairs)

Replacement:
counts = Counter(words)
top_pairs = counts.most_common(5)
"""


@dataclass(frozen=True)
class SynthesisForwardInput:
    context_before: str
    region_text: str
    context_after: str
    few_shot_block: str

    def __post_init__(self) -> None:
        if not self.region_text:
            raise ValueError("region_text must be non-empty")


@dataclass(frozen=True)
class SynthesisBackwardInput:
    context_before: str
    todo_comment: str  # starts with the comment marker and "TODO:"
    context_after: str
    few_shot_block: str
    indent: str = ""

    def __post_init__(self) -> None:
        if not self.todo_comment.startswith(f"{COMMENT_MARKER} TODO:"):
            raise ValueError("todo_comment must start with the TODO comment prefix")


@dataclass(frozen=True)
class PassScore:
    """0/1 pass-oracle outcome with a pointer to the test run."""

    value: int
    test_report_ref: str
    timed_out: bool = False
    empty_candidate: bool = False

    def __post_init__(self) -> None:
        if self.value not in (0, 1):
            raise ValueError("pass score is 0/1-valued")


def region_indent(region_text: str) -> str:
    first_line = region_text.splitlines()[0] if region_text else ""
    return first_line[: len(first_line) - len(first_line.lstrip())]


def _ensure_trailing_newline(text: str) -> str:
    if text and not text.endswith("\n"):
        return text + "\n"
    return text


def make_forward_prompt(task: RegionTask, few_shot: str = FORWARD_FEW_SHOT) -> str:
    """Deterministic forward prompt: instruction, three fixed exemplars,
    then the task's context with the region between sentinel lines."""
    SynthesisForwardInput(task.context_before, task.region_text, task.context_after, few_shot)
    return (
        f"{FORWARD_INSTRUCTION}\n\n"
        f"{few_shot}\n"
        "Code:\n"
        f"{_ensure_trailing_newline(task.context_before)}"
        f"{REGION_BEGIN}\n"
        f"{_ensure_trailing_newline(task.region_text)}"
        f"{REGION_END}\n"
        f"{_ensure_trailing_newline(task.context_after)}"
        "\nDescription:"
    )


def flatten_description(description: str) -> str:
    """TODO comments are single-line; embedded newlines become spaces."""
    return " ".join(description.split("\n")).strip()


def splice_todo(
    task: RegionTask, description: str, few_shot: str = BACKWARD_FEW_SHOT
) -> SynthesisBackwardInput:
    """Replace the region with a TODO comment carrying the description,
    indented like the region's first line."""
    if not description:
        raise ValueError("description must be non-empty")
    return SynthesisBackwardInput(
        context_before=task.context_before,
        todo_comment=f"{COMMENT_MARKER} TODO: {flatten_description(description)}",
        context_after=task.context_after,
        few_shot_block=few_shot,
        indent=region_indent(task.region_text),
    )


def baseline_input(task: RegionTask, few_shot: str = BACKWARD_FEW_SHOT) -> SynthesisBackwardInput:
    """The uninformative-utterance variant: `# TODO: Implement.`"""
    return splice_todo(task, BASELINE_DESCRIPTION, few_shot)


def render_backward_context(backward_input: SynthesisBackwardInput) -> str:
    """Context text with the TODO line in place of the region."""
    return (
        f"{backward_input.context_before}"
        f"{backward_input.indent}{backward_input.todo_comment}\n"
        f"{backward_input.context_after}"
    )


def make_backward_prompt(backward_input: SynthesisBackwardInput) -> str:
    return (
        f"{BACKWARD_INSTRUCTION}\n\n"
        f"{backward_input.few_shot_block}\n"
        "Code:\n"
        f"{_ensure_trailing_newline(render_backward_context(backward_input))}"
        "\nReplacement:"
    )


def extract_region_candidate(model_output: str, task) -> str:
    """Model output -> spliceable region text: strip code fences, trim
    boundary blank lines, and shift the block so its minimum indentation
    matches the original region's first-line indentation."""
    text = strip_code_fences(model_output)
    lines = text.split("\n")
    while lines and lines[0].strip() == "":
        lines.pop(0)
    while lines and lines[-1].strip() == "":
        lines.pop()
    if not lines:
        return ""
    nonblank = [line for line in lines if line.strip()]
    current = min(len(line) - len(line.lstrip()) for line in nonblank)
    target = len(region_indent(task.region_text))
    if target > current:
        pad = " " * (target - current)
        lines = [pad + line if line.strip() else line for line in lines]
    elif current > target:
        cut = current - target
        lines = [line[cut:] if line.strip() else line for line in lines]
    return "\n".join(lines) + "\n"


def evaluate_pass(
    candidate: str,
    task: RegionTask,
    sandbox: SandboxRunner,
    project_root: Path | str,
    timeout: float | None = None,
) -> PassScore:
    """Splice the candidate into a fresh worktree at the task's span and
    run the suite; 1 only if everything still passes."""
    if not candidate.strip():
        return PassScore(0, "", empty_candidate=True)
    with sandbox.worktree(project_root, task.project_id) as wt:
        sandbox.apply_splice(wt, task.file, task.byte_span, _ensure_trailing_newline(candidate))
        report = sandbox.run_tests(wt, task.test_command, timeout=timeout)
        ref = wt.id
    if report.timed_out:
        return PassScore(0, ref, timed_out=True)
    return PassScore(1 if report.all_passed() else 0, ref)


class SynthesisRoundTrip:
    """Engine adapter for one region task."""

    def __init__(
        self,
        task: RegionTask,
        forward_few_shot: str = FORWARD_FEW_SHOT,
        backward_few_shot: str = BACKWARD_FEW_SHOT,
    ):
        self.task = task
        self.task_id = task.task_id
        self.project_id = task.project_id
        self.region_text = task.region_text
        self._forward_few_shot = forward_few_shot
        self._backward_few_shot = backward_few_shot

    def forward_prompt(self) -> str:
        return make_forward_prompt(self.task, self._forward_few_shot)

    def backward_prompt(self, description: str) -> str:
        return make_backward_prompt(splice_todo(self.task, description, self._backward_few_shot))

    def baseline_description(self) -> str:
        return BASELINE_DESCRIPTION

    def generation_metadata(self, direction: str) -> dict:
        if direction == "backward":
            return {"reference_output": self.task.region_text}
        return {}


# -- benchmark-problem adapter ------------------------------------------


@dataclass(frozen=True)
class BenchmarkProblem:
    """One entry of the standard problem-archive format."""

    task_id: str
    prompt: str
    canonical_solution: str
    test: str
    entry_point: str


@dataclass(frozen=True)
class BenchmarkUnit:
    """A region-task-like unit built from a benchmark problem: the function
    body is the region, the signature (docstring removed) is the context,
    and the problem's own checks are the oracle."""

    task_id: str
    project_id: str
    region_text: str
    context_before: str
    context_after: str
    test_code: str
    entry_point: str

    # RegionTask-compatible surface for the prompt builders
    file: str = "<benchmark>"
    byte_span: tuple[int, int] = (0, 0)
    test_command: str = ""


def load_benchmark_problems(path: Path | str) -> list[BenchmarkProblem]:
    import json

    problems = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            raw = json.loads(line)
            problems.append(
                BenchmarkProblem(
                    task_id=raw["task_id"],
                    prompt=raw["prompt"],
                    canonical_solution=raw["canonical_solution"],
                    test=raw["test"],
                    entry_point=raw["entry_point"],
                )
            )
    return problems


def _strip_docstring(source: str, entry_point: str) -> str:
    """Remove the entry-point function's docstring (whole lines), taking
    any embedded input-output examples with it."""
    tree = ast.parse(source)
    fn = None
    for node in ast.walk(tree):
        if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)) and node.name == entry_point:
            fn = node
            break
    if fn is None:
        raise ValueError(f"no function named {entry_point!r}")
    if not fn.body:
        return source
    first = fn.body[0]
    is_docstring = (
        isinstance(first, ast.Expr)
        and isinstance(first.value, ast.Constant)
        and isinstance(first.value.value, str)
    )
    if not is_docstring or len(fn.body) == 1:
        return source
    lines = source.split("\n")
    del lines[first.lineno - 1 : first.end_lineno]
    return "\n".join(lines)


def humaneval_adapter(problem: BenchmarkProblem) -> BenchmarkUnit:
    """Re-purpose a benchmark problem: docstring removed, ground-truth body
    as the region, signature as the backward context."""
    full = problem.prompt + problem.canonical_solution
    stripped = _strip_docstring(full, problem.entry_point)
    tree = ast.parse(stripped)
    fn = next(
        node
        for node in ast.walk(tree)
        if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef))
        and node.name == problem.entry_point
    )
    lines = stripped.split("\n")
    body_start = fn.body[0].lineno  # 1-based
    context_before = "\n".join(lines[: body_start - 1]) + "\n"
    region_text = _ensure_trailing_newline("\n".join(lines[body_start - 1 :]).rstrip("\n"))
    return BenchmarkUnit(
        task_id=problem.task_id,
        project_id="humaneval",
        region_text=region_text,
        context_before=context_before,
        context_after="",
        test_code=problem.test,
        entry_point=problem.entry_point,
    )


def build_benchmark_program(unit: BenchmarkUnit, body: str) -> str:
    return (
        unit.context_before
        + _ensure_trailing_newline(body)
        + "\n\n"
        + unit.test_code
        + f"\n\ncheck({unit.entry_point})\n"
    )


def evaluate_benchmark_pass(
    candidate_body: str,
    unit: BenchmarkUnit,
    sandbox: SandboxRunner,
    timeout: float | None = None,
) -> PassScore:
    """Pass oracle for benchmark units: run the reconstructed function
    against the problem's own checks in a scratch subprocess."""
    if not candidate_body.strip():
        return PassScore(0, "", empty_candidate=True)
    program = build_benchmark_program(unit, candidate_body)
    exit_status, timed_out = sandbox.run_python_program(program, timeout=timeout)
    if timed_out:
        return PassScore(0, unit.task_id, timed_out=True)
    return PassScore(1 if exit_status == 0 else 0, unit.task_id)


def validate_benchmark_unit(
    unit: BenchmarkUnit, sandbox: SandboxRunner, timeout: float | None = None
) -> bool:
    """Problems whose canonical solution fails their own checks are
    excluded from evaluation."""
    score = evaluate_benchmark_pass(unit.region_text, unit, sandbox, timeout)
    if score.value != 1:
        logger.warning("excluding %s: canonical solution fails its own tests", unit.task_id)
        return False
    return True


class BenchmarkRoundTrip(SynthesisRoundTrip):
    """Engine adapter for a benchmark unit; prompts are shared with the
    region-task flow."""

    def __init__(self, unit: BenchmarkUnit, **kwargs):
        super().__init__(unit, **kwargs)  # type: ignore[arg-type]
        self.unit = unit


def make_benchmark_pass_metric(sandbox: SandboxRunner, timeout: float | None = None):
    from .similarity import Metric

    def fn(candidate: str, task) -> float:
        unit = task.unit if isinstance(task, BenchmarkRoundTrip) else task
        body = extract_region_candidate(candidate, unit)
        return float(evaluate_benchmark_pass(body, unit, sandbox, timeout).value)

    return Metric("pass", 1.0, fn)
