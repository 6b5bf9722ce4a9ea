"""Instruction-sample construction for the two fine-tuning task modes.

classify targets use the exact surface form "Label: <class_label>";
classify_explain targets append the explanation on its own delimited line:

    Label: <class_label>
    Explanation: <text>

The line-prefixed delimiter keeps regex extraction of both fields
unambiguous. The user-turn instruction texts are configuration with
shipped defaults (versioned so experiments stay reproducible).
"""

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

from .records import ExplainedRecord, MemeRecord

LABEL_PREFIX = "Label: "
EXPLANATION_PREFIX = "Explanation: "

TASK_MODES = ("classify", "classify_explain")

INSTRUCTION_TEMPLATES_VERSION = "v1"

DEFAULT_CLASSIFY_INSTRUCTION = (
    "Classify this meme. Consider the image together with any embedded text. "
    'Respond in the format "Label: (class_label)".'
)

DEFAULT_JOINT_INSTRUCTION = {
    "en": (
        "Classify this meme and explain your decision. Consider the image together "
        'with any embedded text. Respond in the format "Label: (class_label)" '
        'followed by a new line "Explanation: (your explanation in English)".'
    ),
    "ar": (
        "Classify this meme and explain your decision. Consider the image together "
        'with any embedded text. Respond in the format "Label: (class_label)" '
        'followed by a new line "Explanation: (your explanation in Arabic)".'
    ),
}

_EXPLANATION_SPLIT_RE = re.compile(r"\n\s*explanation\s*:\s*", re.IGNORECASE)


@dataclass
class InstructionSample:
    """A prompt/target pair presented with one meme image."""

    id: str
    task_mode: str
    instruction: str
    target: str
    image_ref: str
    language: Optional[str] = None  # classify_explain only

    def to_dict(self):
        out = {
            "id": self.id,
            "task_mode": self.task_mode,
            "instruction": self.instruction,
            "target": self.target,
            "image_ref": self.image_ref,
        }
        if self.language is not None:
            out["language"] = self.language
        return out

    @classmethod
    def from_dict(cls, row):
        return cls(
            id=str(row["id"]),
            task_mode=row["task_mode"],
            instruction=row["instruction"],
            target=row["target"],
            image_ref=row["image_ref"],
            language=row.get("language"),
        )


def split_label_explanation(text: str):
    """Split "Label: X\\nExplanation: Y" into (label line remainder, Y or None)."""
    parts = _EXPLANATION_SPLIT_RE.split(text, maxsplit=1)
    label_part = parts[0].strip()
    if label_part.lower().startswith("label:"):
        label_part = label_part[len("label:"):].strip()
    explanation = parts[1].strip() if len(parts) == 2 else None
    return label_part, explanation


def _base(record) -> MemeRecord:
    return record.base if isinstance(record, ExplainedRecord) else record


def build_classification_sample(
    record: Union[MemeRecord, ExplainedRecord],
    instruction_template: str = DEFAULT_CLASSIFY_INSTRUCTION,
) -> InstructionSample:
    base = _base(record)
    return InstructionSample(
        id=base.id,
        task_mode="classify",
        instruction=instruction_template,
        target=LABEL_PREFIX + base.label,
        image_ref=base.image_ref,
    )


def build_joint_sample(
    record: ExplainedRecord,
    language: str,
    instruction_template: Optional[str] = None,
) -> InstructionSample:
    if not isinstance(record, ExplainedRecord) or language not in record.explanations:
        raise ValueError(f"record {_base(record).id} has no '{language}' explanation")
    if instruction_template is None:
        instruction_template = DEFAULT_JOINT_INSTRUCTION[language]
    base = record.base
    target = f"{LABEL_PREFIX}{base.label}\n{EXPLANATION_PREFIX}{record.explanations[language]}"
    return InstructionSample(
        id=base.id,
        task_mode="classify_explain",
        instruction=instruction_template,
        target=target,
        image_ref=base.image_ref,
        language=language,
    )


def build_stage_dataset(
    split: Sequence,
    task_mode: str,
    language: Optional[str] = None,
    instruction_template: Optional[str] = None,
) -> list:
    """One sample per record, stably ordered by id.

    For classify_explain every record must carry the requested language's
    explanation; offenders are reported together.
    """
    if task_mode not in TASK_MODES:
        raise ValueError(f"unknown task_mode {task_mode!r}, expected one of {TASK_MODES}")
    ordered = sorted(split, key=lambda r: _base(r).id)
    if task_mode == "classify":
        template = instruction_template or DEFAULT_CLASSIFY_INSTRUCTION
        return [build_classification_sample(r, template) for r in ordered]
    if language is None:
        raise ValueError("classify_explain requires a language")
    missing = [
        _base(r).id
        for r in ordered
        if not (isinstance(r, ExplainedRecord) and language in r.explanations)
    ]
    if missing:
        raise ValueError(f"records lack '{language}' explanations: {missing}")
    return [build_joint_sample(r, language, instruction_template) for r in ordered]


def save_samples(samples: Iterable[InstructionSample], path: Path) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for sample in samples:
            fh.write(json.dumps(sample.to_dict(), ensure_ascii=False) + "\n")
            n += 1
    return n


def load_samples(path: Path) -> list:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(InstructionSample.from_dict(json.loads(line)))
    return out
