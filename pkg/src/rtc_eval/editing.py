"""Edit-description round trips.

Forward: show an old/new snippet pair and ask for a concise description of
the edit. Backward: show the old snippet plus the description and ask for
the full new version. Exact match is the primary similarity; BLEU and
ROUGE variants exist for completeness but reward copying the input.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping

from . import similarity
from .engine import BACKWARD_MAX_CHARS, truncate_forward
from .gateway import GenerationError, GeneratorFn
from .similarity import Metric, strip_code_fences

logger = logging.getLogger(__name__)

BASELINE_EDIT_DESCRIPTION = "Edit."
FORWARD_INSTRUCTION = (
    "Describe concisely and accurately with natural language the differences "
    "between the old and new code shown below."
)
BACKWARD_INSTRUCTION = (
    "Apply the edit described below to the old code and output the full new "
    "version of the code."
)

FORWARD_FEW_SHOT = """\
[old]
total = 0
for v in vals:
    total += v

[new]
total = sum(vals)

[edit description]
Replace the manual accumulation loop with a call to sum.

[old]
def area(r):
    return 3.14 * r * r

[new]
def area(r):
    return math.pi * r * r

[edit description]
Use math.pi instead of the hard-coded constant.

[old]
print("done")

[new]
logger.info("done")

[edit description]
Log the completion message instead of printing it.
"""

BACKWARD_FEW_SHOT = """\
[old]
total = 0
for v in vals:
    total += v

[edit description]
Replace the manual accumulation loop with a call to sum.

[new]
total = sum(vals)

[old]
def area(r):
    return 3.14 * r * r

[edit description]
Use math.pi instead of the hard-coded constant.

[new]
def area(r):
    return math.pi * r * r

[old]
print("done")

[edit description]
Log the completion message instead of printing it.

[new]
logger.info("done")
"""


@dataclass(frozen=True)
class EditTask:
    task_id: str
    old_code: str
    new_code: str
    language_tag: str = "python"
    reference_comment: str | None = None  # e.g. the PR review comment

    def __post_init__(self) -> None:
        if not self.old_code or not self.new_code:
            raise ValueError("old_code and new_code must be non-empty")
        if self.old_code == self.new_code:
            raise ValueError("old_code and new_code must differ")

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "old_code": self.old_code,
            "new_code": self.new_code,
            "language_tag": self.language_tag,
            "reference_comment": self.reference_comment,
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "EditTask":
        return cls(
            task_id=raw["task_id"],
            old_code=raw["old_code"],
            new_code=raw["new_code"],
            language_tag=raw.get("language_tag", "python"),
            reference_comment=raw.get("reference_comment"),
        )


@dataclass(frozen=True)
class EditMatchScore:
    value: int

    def __post_init__(self) -> None:
        if self.value not in (0, 1):
            raise ValueError("exact match is 0/1-valued")


def load_edit_tasks(path: Path | str) -> list[EditTask]:
    tasks = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                tasks.append(EditTask.from_dict(json.loads(line)))
    return tasks


def make_edit_forward_prompt(task: EditTask, few_shot: str = FORWARD_FEW_SHOT) -> str:
    return (
        f"{FORWARD_INSTRUCTION}\n\n"
        f"{few_shot}\n"
        "[old]\n"
        f"{task.old_code.rstrip()}\n\n"
        "[new]\n"
        f"{task.new_code.rstrip()}\n\n"
        "[edit description]\n"
    )


def make_edit_backward_prompt(
    old_code: str, description: str, few_shot: str = BACKWARD_FEW_SHOT
) -> str:
    if not description:
        raise ValueError("description must be non-empty")
    return (
        f"{BACKWARD_INSTRUCTION}\n\n"
        f"{few_shot}\n"
        "[old]\n"
        f"{old_code.rstrip()}\n\n"
        "[edit description]\n"
        f"{description.strip()}\n\n"
        "[new]\n"
    )


def baseline_edit_description() -> str:
    return BASELINE_EDIT_DESCRIPTION


def extract_new_code(model_output: str) -> str:
    """Candidate new-code block: fences stripped, an echoed [new] header
    dropped, boundary blank lines trimmed."""
    text = strip_code_fences(model_output)
    lines = text.split("\n")
    while lines and lines[0].strip() == "":
        lines.pop(0)
    if lines and lines[0].strip() == "[new]":
        lines.pop(0)
    while lines and lines[0].strip() == "":
        lines.pop(0)
    while lines and lines[-1].strip() == "":
        lines.pop()
    return "\n".join(lines)


def score_exact_match(candidate_new: str, task: EditTask, strict: bool = False) -> EditMatchScore:
    """1 iff the candidate equals new_code after normalization (line
    endings, trailing whitespace, boundary blank lines); --strict-match
    drops the normalization."""
    value = similarity.exact_match(candidate_new, task.new_code, strict=strict)
    return EditMatchScore(1 if value == 100.0 else 0)


class EditingRoundTrip:
    """Engine adapter for one edit task."""

    def __init__(
        self,
        task: EditTask,
        forward_few_shot: str = FORWARD_FEW_SHOT,
        backward_few_shot: str = BACKWARD_FEW_SHOT,
    ):
        self.task = task
        self.task_id = task.task_id
        self.project_id = task.language_tag
        self._forward_few_shot = forward_few_shot
        self._backward_few_shot = backward_few_shot

    def forward_prompt(self) -> str:
        return make_edit_forward_prompt(self.task, self._forward_few_shot)

    def backward_prompt(self, description: str) -> str:
        return make_edit_backward_prompt(
            self.task.old_code, description, self._backward_few_shot
        )

    def baseline_description(self) -> str:
        return baseline_edit_description()

    def generation_metadata(self, direction: str) -> dict:
        if direction == "backward":
            return {
                "reference_output": self.task.new_code,
                "echo_output": self.task.old_code,
            }
        return {}


def _unwrap(task) -> EditTask:
    return task.task if isinstance(task, EditingRoundTrip) else task


def edit_exact_match_metric(strict: bool = False) -> Metric:
    def fn(candidate: str, task) -> float:
        return 100.0 * score_exact_match(extract_new_code(candidate), _unwrap(task), strict).value

    return Metric("exact_match", 100.0, fn)


def edit_bleu_metric() -> Metric:
    def fn(candidate: str, task) -> float:
        return similarity.bleu(extract_new_code(candidate), _unwrap(task).new_code)

    return Metric("bleu", 100.0, fn)


def edit_rouge_metric() -> Metric:
    def fn(candidate: str, task) -> float:
        return similarity.rouge_l(extract_new_code(candidate), _unwrap(task).new_code)

    return Metric("rouge_l", 100.0, fn)


EDIT_METRICS: dict[str, Callable[[], Metric]] = {
    "em": edit_exact_match_metric,
    "bleu": edit_bleu_metric,
    "rouge": edit_rouge_metric,
}


def supervised_edit_generation(
    task: EditTask, backward_gen: GeneratorFn
) -> EditMatchScore | None:
    """Reference-labelled mode: apply the edit described by the reference
    comment with greedy decoding and exact-match it. None when the task
    carries no reference comment (skipped in this mode)."""
    if not task.reference_comment:
        return None
    prompt = make_edit_backward_prompt(task.old_code, task.reference_comment)
    try:
        outputs = backward_gen(
            prompt, 0.0, BACKWARD_MAX_CHARS, 1,
            {"direction": "backward", "task_id": task.task_id,
             "reference_output": task.new_code, "echo_output": task.old_code},
        )
    except GenerationError as exc:
        logger.warning("supervised edit generation failed for %s: %s", task.task_id, exc)
        return EditMatchScore(0)
    return score_exact_match(extract_new_code(outputs[0]), task)


def supervised_description_bleu(
    task: EditTask, forward_gen: GeneratorFn, max_forward_chars: int = 128
) -> float | None:
    """Reference-labelled mode: greedy-decode one edit description and
    score sentence BLEU against the reference comment."""
    if not task.reference_comment:
        return None
    prompt = make_edit_forward_prompt(task)
    try:
        outputs = forward_gen(
            prompt, 0.0, max_forward_chars, 1,
            {"direction": "forward", "task_id": task.task_id},
        )
    except GenerationError as exc:
        logger.warning("supervised description failed for %s: %s", task.task_id, exc)
        return 0.0
    description = truncate_forward(outputs[0], max_forward_chars)
    return similarity.bleu(description, task.reference_comment)
