"""Canonical record types, dataset ingestion/validation, and corpus statistics.

The on-disk manifest format is JSON-lines, one record per line:

    {"id": str, "img_path": str, "text": str, "class_label": str,
     "split": "train"|"dev"|"test",
     "explanation_en": str?, "explanation_ar": str?,
     "gen_model": str?, "gen_timestamp": str?}

Field names above are part of the on-disk contract. Extra optional fields
(gen_provider, gen_prompt_hash) preserve generation metadata across round
trips without touching the contract fields.
"""

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, Union

SPLITS = ("train", "dev", "test")

EXPLANATION_LANGUAGES = ("ar", "en")


class DatasetError(ValueError):
    """Manifest rejected: unknown labels, duplicate ids, or malformed rows."""


@dataclass(frozen=True)
class LabelSet:
    """A dataset identifier plus its ordered class labels."""

    name: str
    labels: tuple

    def __contains__(self, label):
        return label in self.labels


ARMEME_LABELS = LabelSet("armeme", ("Not propaganda", "Propaganda", "Not-meme", "Other"))
HATEFUL_LABELS = LabelSet("hateful_memes", ("Not Hateful", "Hateful"))

LABEL_SETS = {ls.name: ls for ls in (ARMEME_LABELS, HATEFUL_LABELS)}


@dataclass
class MemeRecord:
    """One meme: image reference, embedded text, gold label, split membership."""

    id: str
    image_ref: str
    text: str
    label: str
    split: str


@dataclass
class GenMeta:
    provider: str = ""
    model: str = ""
    prompt_hash: str = ""
    timestamp: str = ""


@dataclass
class ExplainedRecord:
    """A MemeRecord plus per-language generated explanations."""

    base: MemeRecord
    explanations: dict = field(default_factory=dict)  # language -> text
    gen_meta: GenMeta = field(default_factory=GenMeta)

    @property
    def id(self):
        return self.base.id

    @property
    def split(self):
        return self.base.split


@dataclass
class CorpusStats:
    """Word totals/averages for meme texts and (optionally) explanations.

    Integer averages use round-half-up to match table-style presentation;
    the raw floating averages are retained alongside.
    """

    records: int = 0
    total_words: int = 0
    avg_words: int = 0
    avg_words_raw: float = 0.0
    total_expl_words: dict = field(default_factory=dict)  # language -> count
    avg_expl_words: dict = field(default_factory=dict)
    avg_expl_words_raw: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "records": self.records,
            "total_words": self.total_words,
            "avg_words": self.avg_words,
            "avg_words_raw": self.avg_words_raw,
            "total_expl_words": dict(self.total_expl_words),
            "avg_expl_words": dict(self.avg_expl_words),
            "avg_expl_words_raw": dict(self.avg_expl_words_raw),
        }


@dataclass
class LoadedDataset:
    """Records grouped by split, with per-(split, label) counts and warnings."""

    label_set: LabelSet
    splits: dict  # split -> list of MemeRecord | ExplainedRecord
    counts: dict  # split -> Counter(label -> n)
    missing_images: list

    def split_totals(self):
        return {split: len(records) for split, records in self.splits.items()}

    def all_records(self):
        out = []
        for split in SPLITS:
            out.extend(self.splits.get(split, []))
        return out


def whitespace_words(text: str) -> list:
    """Default word rule: split on Unicode whitespace after trimming."""
    return text.split()


def round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def row_to_record(row: dict, line_no: int = 0) -> Union[MemeRecord, ExplainedRecord]:
    required = ("id", "img_path", "text", "class_label", "split")
    missing = [k for k in required if k not in row]
    if missing:
        raise DatasetError(f"line {line_no}: missing fields {missing}")
    base = MemeRecord(
        id=str(row["id"]),
        image_ref=row["img_path"],
        text=row["text"],
        label=row["class_label"],
        split=row["split"],
    )
    explanations = {}
    for lang in EXPLANATION_LANGUAGES:
        value = row.get(f"explanation_{lang}")
        if value:
            explanations[lang] = value
    if not explanations:
        return base
    meta = GenMeta(
        provider=row.get("gen_provider", ""),
        model=row.get("gen_model", ""),
        prompt_hash=row.get("gen_prompt_hash", ""),
        timestamp=row.get("gen_timestamp", ""),
    )
    return ExplainedRecord(base=base, explanations=explanations, gen_meta=meta)


def record_to_row(record: Union[MemeRecord, ExplainedRecord]) -> dict:
    base = record.base if isinstance(record, ExplainedRecord) else record
    row = {
        "id": base.id,
        "img_path": base.image_ref,
        "text": base.text,
        "class_label": base.label,
        "split": base.split,
    }
    if isinstance(record, ExplainedRecord):
        for lang in EXPLANATION_LANGUAGES:
            if lang in record.explanations:
                row[f"explanation_{lang}"] = record.explanations[lang]
        meta = record.gen_meta
        if meta.model:
            row["gen_model"] = meta.model
        if meta.timestamp:
            row["gen_timestamp"] = meta.timestamp
        if meta.provider:
            row["gen_provider"] = meta.provider
        if meta.prompt_hash:
            row["gen_prompt_hash"] = meta.prompt_hash
    return row


def read_manifest(manifest: Path) -> list:
    """Parse a JSONL manifest into records, without label/id validation."""
    records = []
    with open(manifest, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {line_no}: invalid JSON ({exc.msg})") from exc
            records.append(row_to_record(row, line_no))
    return records


def load_dataset(
    root: Optional[Path],
    manifest: Path,
    label_set: LabelSet,
    check_images: bool = True,
) -> LoadedDataset:
    """Load and validate a manifest, grouping records by split.

    Unknown labels, duplicate ids, and unknown splits reject the whole
    manifest with the offending ids named. Missing image files are collected
    as warnings (statistics and text-only operations still run); pass
    check_images=False to skip the existence scan entirely.
    """
    manifest = Path(manifest)
    if not manifest.exists():
        raise DatasetError(f"manifest not found: {manifest}")
    records = read_manifest(manifest)

    bad_labels = [r.id for r in records for b in [_base(r)] if b.label not in label_set]
    if bad_labels:
        raise DatasetError(
            f"labels outside label set {label_set.name} {list(label_set.labels)} "
            f"for ids: {bad_labels}"
        )
    bad_splits = [r.id for r in records if _base(r).split not in SPLITS]
    if bad_splits:
        raise DatasetError(f"unknown split (expected one of {SPLITS}) for ids: {bad_splits}")
    seen = set()
    dupes = []
    for r in records:
        if r.id in seen:
            dupes.append(r.id)
        seen.add(r.id)
    if dupes:
        raise DatasetError(f"duplicate ids: {dupes}")

    splits = {split: [] for split in SPLITS}
    counts = {split: Counter() for split in SPLITS}
    missing = []
    for r in records:
        base = _base(r)
        splits[base.split].append(r)
        counts[base.split][base.label] += 1
        if check_images and root is not None:
            if not (Path(root) / base.image_ref).is_file():
                missing.append(r.id)
    return LoadedDataset(label_set=label_set, splits=splits, counts=counts, missing_images=missing)


def save_dataset(records: Iterable, path: Path) -> int:
    """Write records as JSONL; returns the number of lines written."""
    n = 0
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record_to_row(record), ensure_ascii=False) + "\n")
            n += 1
    return n


def _base(record) -> MemeRecord:
    return record.base if isinstance(record, ExplainedRecord) else record


def _stats_for(records: Sequence, tokenizer: Callable) -> CorpusStats:
    total = 0
    expl_totals = Counter()
    expl_counts = Counter()
    for r in records:
        total += len(tokenizer(_base(r).text))
        if isinstance(r, ExplainedRecord):
            for lang, text in r.explanations.items():
                expl_totals[lang] += len(tokenizer(text))
                expl_counts[lang] += 1
    n = len(records)
    avg_raw = total / n if n else 0.0
    stats = CorpusStats(
        records=n,
        total_words=total,
        avg_words=round_half_up(avg_raw) if n else 0,
        avg_words_raw=avg_raw,
    )
    for lang in sorted(expl_totals):
        raw = expl_totals[lang] / expl_counts[lang]
        stats.total_expl_words[lang] = expl_totals[lang]
        stats.avg_expl_words[lang] = round_half_up(raw)
        stats.avg_expl_words_raw[lang] = raw
    return stats


def corpus_stats(records: Sequence, tokenizer: Callable = whitespace_words) -> dict:
    """Word statistics per split plus an overall "total" entry.

    Empty input yields all-zero stats. Explanation statistics appear only for
    languages that actually have explanations.
    """
    by_split = {}
    for r in records:
        by_split.setdefault(_base(r).split, []).append(r)
    out = {}
    for split in SPLITS:
        if split in by_split:
            out[split] = _stats_for(by_split[split], tokenizer)
    out["total"] = _stats_for(list(records), tokenizer)
    return out
