"""Gold-explanation generation from an expert VLM.

Covers prompt construction from the frozen templates, strict JSON response
validation, single-record generation with retries, and resumable batch
execution with an append-only JSONL checkpoint.
"""

import hashlib
import json
import logging
import re
import threading
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

from .providers import Provider, TransportError
from .records import (
    ARMEME_LABELS,
    HATEFUL_LABELS,
    ExplainedRecord,
    GenMeta,
    LabelSet,
    MemeRecord,
    record_to_row,
    row_to_record,
    whitespace_words,
)

log = logging.getLogger(__name__)

# responses up to this factor over the word limit are accepted with a warning
OVER_LIMIT_TOLERANCE = 1.2

FAILURE_REASONS = ("malformed_json", "missing_field", "empty", "over_limit", "transport")

_FENCE_RE = re.compile(r"^```[a-zA-Z]*\s*\n(.*?)\n?```\s*$", re.DOTALL)


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    body: str
    language: str
    label_set: LabelSet


# The two shipped template bodies are frozen inputs; prompt wording is not
# tuned here. The English ArMeme body is reconstructed from the Arabic one
# (output language and paraphrase-target clauses swapped to English; the
# Arabic cultural-context sentence kept, since the memes remain Arabic).
_ARMEME_AR_BODY = (
    "You are a Propaganda Image Detection Expert. A human expert has already classified the image as {class_label}. \n"
    "Do not change or re-identify the classified label of the image.\n"
    "First, analyze the image's visual elements (objects, symbols, color usage, composition) \n"
    "and provide a concise description. Next, read and paraphrase any text in the image-especially if \n"
    "it is in non-Arabic-so that a Arabic speaker could understand its literal or intended meaning. \n"
    "Explain how that text, in conjunction with the visual elements, supports or illustrates the known \n"
    "propaganda technique. Think carefully about emotional appeals, humor, cultural references, manipulative \n"
    "language, or other rhetorical strategies.\n"
    "Finally, provide a thoughtful explanation in Arabic (up to {explanation_length} words) of why these elements led the human to classify \n"
    "the image as propaganda. Be specific about how the text and visuals interact, referencing the \n"
    "Arabic context or cultural nuances if relevant. Your answer must be valid JSON with a single field:\n"
    "{{\n"
    "\"explanation\": \"Your explanation here (up to {explanation_length} words) in Arabic.\"\n"
    "}}"
)

_ARMEME_EN_BODY = (
    "You are a Propaganda Image Detection Expert. A human expert has already classified the image as {class_label}. \n"
    "Do not change or re-identify the classified label of the image.\n"
    "First, analyze the image's visual elements (objects, symbols, color usage, composition) \n"
    "and provide a concise description. Next, read and paraphrase any text in the image-especially if \n"
    "it is in non-English-so that an English speaker could understand its literal or intended meaning. \n"
    "Explain how that text, in conjunction with the visual elements, supports or illustrates the known \n"
    "propaganda technique. Think carefully about emotional appeals, humor, cultural references, manipulative \n"
    "language, or other rhetorical strategies.\n"
    "Finally, provide a thoughtful explanation in English (up to {explanation_length} words) of why these elements led the human to classify \n"
    "the image as propaganda. Be specific about how the text and visuals interact, referencing the \n"
    "Arabic context or cultural nuances if relevant. Your answer must be valid JSON with a single field:\n"
    "{{\n"
    "\"explanation\": \"Your explanation here (up to {explanation_length} words) in English.\"\n"
    "}}"
)

_HATEFUL_EN_BODY = (
    "You are a Hateful Image Detection Expert. A human expert has already classified the image as {class_label}. Do not change or re-identify the classified label of the image.\n"
    "First, analyze the image's visual elements (objects, symbols, color usage, composition) and provide a concise description. Next, read and paraphrase any text in the image so anyone speaking English can understand its literal or intended meaning. \n"
    "Explain how that text, in conjunction with the visual elements, supports or illustrates the known hateful content. \n"
    "Finally, provide a thoughtful explanation in English (up to {explanation_length} words) of why these elements led the human to classify the image as hateful. Be specific about how the text and visuals interact, referencing the context or cultural nuances if relevant. Your answer must be valid JSON with a single field:\n"
    "{{\n"
    "\"explanation\": \"Your explanation here (up to {explanation_length} words) in English.\"\n"
    "}}"
)

TEMPLATES = {
    "armeme_ar": PromptTemplate("armeme_ar", _ARMEME_AR_BODY, "ar", ARMEME_LABELS),
    "armeme_en": PromptTemplate("armeme_en", _ARMEME_EN_BODY, "en", ARMEME_LABELS),
    "hateful_en": PromptTemplate("hateful_en", _HATEFUL_EN_BODY, "en", HATEFUL_LABELS),
}


def get_template(template_id: str) -> PromptTemplate:
    if template_id not in TEMPLATES:
        raise ValueError(f"unknown template id {template_id!r}, "
                         f"expected one of {sorted(TEMPLATES)}")
    return TEMPLATES[template_id]


def _utc_now_iso() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass
class GenerationConfig:
    word_limit: int = 100
    temperature: float = 0.0
    max_retries: int = 3
    concurrency_limit: int = 4
    provider: str = "mock"
    failure_threshold: float = 0.2
    clock: Callable[[], str] = _utc_now_iso  # injectable for deterministic runs


FIXED_CLOCK = lambda: "1970-01-01T00:00:00Z"  # noqa: E731


@dataclass
class ProviderResponse:
    raw_text: str
    parsed_explanation: Optional[str] = None
    failure_reason: Optional[str] = None
    over_limit_warning: bool = False

    def __post_init__(self):
        if (self.parsed_explanation is None) == (self.failure_reason is None):
            raise ValueError("exactly one of parsed_explanation/failure_reason must be set")


@dataclass
class GenerationFailure:
    id: str
    failure_reason: str
    attempts: int

    def to_dict(self):
        return {"id": self.id, "failure_reason": self.failure_reason,
                "attempts": self.attempts}


def build_prompt(template: Union[PromptTemplate, str], label: str, word_limit: int) -> str:
    """Substitute the label and word limit into a template; pure and total."""
    if isinstance(template, str):
        template = get_template(template)
    if label not in template.label_set:
        raise ValueError(
            f"label {label!r} not in label set {template.label_set.name} "
            f"{list(template.label_set.labels)}"
        )
    return template.body.format(class_label=label, explanation_length=word_limit)


def _strip_fences(text: str) -> str:
    match = _FENCE_RE.match(text.strip())
    return match.group(1) if match else text.strip()


def parse_response(raw: str, word_limit: int,
                   tokenizer: Callable = whitespace_words) -> ProviderResponse:
    """Validate a raw provider response; failures are encoded, never thrown."""
    text = _strip_fences(raw)
    try:
        obj = json.loads(text)
    except (json.JSONDecodeError, TypeError):
        start, end = text.find("{"), text.rfind("}")
        if start == -1 or end <= start:
            return ProviderResponse(raw, failure_reason="malformed_json")
        try:
            obj = json.loads(text[start : end + 1])
        except json.JSONDecodeError:
            return ProviderResponse(raw, failure_reason="malformed_json")
    if not isinstance(obj, dict):
        return ProviderResponse(raw, failure_reason="malformed_json")
    if "explanation" not in obj or not isinstance(obj["explanation"], str):
        return ProviderResponse(raw, failure_reason="missing_field")
    explanation = obj["explanation"].strip()
    if not explanation:
        return ProviderResponse(raw, failure_reason="empty")
    words = len(tokenizer(explanation))
    if words > OVER_LIMIT_TOLERANCE * word_limit:
        return ProviderResponse(raw, failure_reason="over_limit")
    return ProviderResponse(raw, parsed_explanation=explanation,
                            over_limit_warning=words > word_limit)


def _base(record) -> MemeRecord:
    return record.base if isinstance(record, ExplainedRecord) else record


def generate_one(
    record: Union[MemeRecord, ExplainedRecord],
    template: PromptTemplate,
    config: GenerationConfig,
    provider: Provider,
    root: Optional[Path] = None,
) -> Union[ExplainedRecord, GenerationFailure]:
    """Generate one explanation, retrying up to config.max_retries.

    Transport and malformed-output failures retry up to the limit;
    over-limit responses get a single retry. The input record is never
    mutated and its label only flows into the prompt.
    """
    base = _base(record)
    prompt = build_prompt(template, base.label, config.word_limit)
    image_bytes = (Path(root) / base.image_ref).read_bytes() if root is not None else None

    last_reason = "transport"
    over_limit_retried = False
    attempts = 0
    for _ in range(config.max_retries):
        attempts += 1
        try:
            raw = provider.generate(prompt, image_bytes, temperature=config.temperature)
        except TransportError as exc:
            last_reason = "transport"
            log.debug("transport failure for %s (attempt %d): %s", base.id, attempts, exc)
            continue
        response = parse_response(raw, config.word_limit)
        if response.parsed_explanation is not None:
            if response.over_limit_warning:
                log.warning("explanation for %s exceeds %d words (within tolerance)",
                            base.id, config.word_limit)
            explanations = dict(record.explanations) if isinstance(record, ExplainedRecord) else {}
            explanations[template.language] = response.parsed_explanation
            return ExplainedRecord(
                base=base,
                explanations=explanations,
                gen_meta=GenMeta(
                    provider=provider.id,
                    model=provider.model_version,
                    prompt_hash=hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:16],
                    timestamp=config.clock(),
                ),
            )
        last_reason = response.failure_reason
        if response.failure_reason == "over_limit":
            if over_limit_retried:
                break
            over_limit_retried = True
    return GenerationFailure(base.id, last_reason, attempts)


@dataclass
class BatchResult:
    records: list = field(default_factory=list)   # successes, input order
    failures: list = field(default_factory=list)  # GenerationFailure, input order
    skipped_cached: int = 0

    @property
    def failure_fraction(self) -> float:
        total = len(self.records) + len(self.failures)
        return len(self.failures) / total if total else 0.0


def _cache_key(template: PromptTemplate, word_limit: int, model_version: str):
    return (template.template_id, word_limit, model_version)


def _load_checkpoint(path: Path, key) -> dict:
    cached = {}
    if not path.exists():
        return cached
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            row_key = (row.get("gen_template"), row.get("gen_word_limit"), row.get("gen_model"))
            if row_key != key:
                continue
            cached[str(row["id"])] = row_to_record(row)
    return cached


def batch_generate(
    records: Sequence,
    template: PromptTemplate,
    config: GenerationConfig,
    provider: Provider,
    checkpoint_path: Path,
    root: Optional[Path] = None,
    failure_path: Optional[Path] = None,
) -> BatchResult:
    """Explain a record sequence with bounded concurrency and resume support.

    Records already present in the checkpoint (same template, word limit,
    and model version) are not re-sent to the provider. Completed records
    are appended to the checkpoint as they finish; the returned dataset is
    merged back into input order.
    """
    checkpoint_path = Path(checkpoint_path)
    checkpoint_path.parent.mkdir(parents=True, exist_ok=True)
    key = _cache_key(template, config.word_limit, provider.model_version)
    cached = _load_checkpoint(checkpoint_path, key)

    pending = [r for r in records if _base(r).id not in cached]
    results = {}
    write_lock = threading.Lock()
    with open(checkpoint_path, "a", encoding="utf-8") as checkpoint:
        def run(record):
            return generate_one(record, template, config, provider, root=root)

        pool = ThreadPoolExecutor(max_workers=max(config.concurrency_limit, 1))
        try:
            futures = {pool.submit(run, record): _base(record).id for record in pending}
            for future in as_completed(futures):
                record_id = futures[future]
                outcome = future.result()
                results[record_id] = outcome
                if isinstance(outcome, ExplainedRecord):
                    row = record_to_row(outcome)
                    row["gen_template"] = template.template_id
                    row["gen_word_limit"] = config.word_limit
                    with write_lock:
                        checkpoint.write(json.dumps(row, ensure_ascii=False) + "\n")
                        checkpoint.flush()
        except BaseException:
            pool.shutdown(wait=False, cancel_futures=True)
            raise
        pool.shutdown(wait=True)

    out = BatchResult(skipped_cached=len(cached))
    for record in records:
        record_id = _base(record).id
        if record_id in cached:
            out.records.append(cached[record_id])
        else:
            outcome = results[record_id]
            if isinstance(outcome, ExplainedRecord):
                out.records.append(outcome)
            else:
                out.failures.append(outcome)
    if failure_path is not None and out.failures:
        failure_path = Path(failure_path)
        failure_path.parent.mkdir(parents=True, exist_ok=True)
        with open(failure_path, "w", encoding="utf-8") as fh:
            for failure in out.failures:
                fh.write(json.dumps(failure.to_dict()) + "\n")
    return out
