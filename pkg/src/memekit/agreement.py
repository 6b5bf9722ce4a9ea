"""Human-evaluation aggregation: Likert means and within-group agreement.

Per item and metric, agreement is measured as

    rwg_star = 1 - S2 / max_var(bounds)

where S2 is the sample variance of the ratings (n-1 denominator) and
max_var is the maximum variance possible under complete disagreement on the
scale. Values below zero are reported as-is, never truncated.
"""

import json
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

LIKERT_METRICS = ("informativeness", "clarity", "plausibility", "faithfulness")


@dataclass(frozen=True)
class ScaleBounds:
    lower: int = 1
    upper: int = 5

    def __post_init__(self):
        if self.lower >= self.upper:
            raise ValueError(f"scale lower bound must be < upper, got ({self.lower}, {self.upper})")


@dataclass
class AnnotationRating:
    """One annotator's Likert scores for one (meme, label, explanation) item."""

    item_id: str
    annotator_id: str
    scores: dict  # metric name -> int in [1, 5]

    def validate(self, bounds: ScaleBounds = ScaleBounds()) -> None:
        for metric in LIKERT_METRICS:
            if metric not in self.scores:
                raise ValueError(f"missing score for '{metric}'")
            value = self.scores[metric]
            if not isinstance(value, int) or isinstance(value, bool):
                raise ValueError(f"score for '{metric}' must be an integer, got {value!r}")
            if not bounds.lower <= value <= bounds.upper:
                raise ValueError(
                    f"score for '{metric}' out of range [{bounds.lower}, {bounds.upper}]: {value}"
                )
        extra = set(self.scores) - set(LIKERT_METRICS)
        if extra:
            raise ValueError(f"unknown metrics: {sorted(extra)}")

    def to_dict(self):
        return {"item_id": self.item_id, "annotator_id": self.annotator_id,
                "scores": dict(self.scores)}

    @classmethod
    def from_dict(cls, row: dict) -> "AnnotationRating":
        return cls(item_id=str(row["item_id"]), annotator_id=str(row["annotator_id"]),
                   scores=dict(row["scores"]))


def max_variance(bounds: ScaleBounds = ScaleBounds()) -> float:
    """Maximum rating variance under complete disagreement on the scale."""
    upper, lower = bounds.upper, bounds.lower
    return 0.5 * (upper**2 + lower**2) - (0.5 * (upper + lower)) ** 2


def rwg_star(ratings: Sequence[int], bounds: ScaleBounds = ScaleBounds()) -> float:
    """Within-group agreement for one item+metric; may be negative."""
    if len(ratings) < 2:
        raise ValueError(f"need at least 2 ratings, got {len(ratings)}")
    for value in ratings:
        if not bounds.lower <= value <= bounds.upper:
            raise ValueError(f"rating {value} outside [{bounds.lower}, {bounds.upper}]")
    return 1.0 - statistics.variance(ratings) / max_variance(bounds)


@dataclass
class AgreementReport:
    """Table-style aggregation: per-metric Likert means and mean agreement."""

    mean_likert: dict = field(default_factory=dict)   # metric -> mean of item means
    mean_rwg: dict = field(default_factory=dict)      # metric -> mean rwg_star over items
    items_total: int = 0
    items_complete: int = 0
    incomplete_items: list = field(default_factory=list)
    negative_rwg_items: int = 0
    annotators_per_item: int = 3

    def to_dict(self):
        return {
            "mean_likert": dict(self.mean_likert),
            "mean_rwg_star": dict(self.mean_rwg),
            "items_total": self.items_total,
            "items_complete": self.items_complete,
            "incomplete_items": list(self.incomplete_items),
            "negative_rwg_items": self.negative_rwg_items,
            "annotators_per_item": self.annotators_per_item,
        }


def aggregate(
    ratings: Iterable[AnnotationRating],
    annotators_per_item: int = 3,
    bounds: ScaleBounds = ScaleBounds(),
) -> AgreementReport:
    """Aggregate ratings into per-metric Likert means and mean rwg_star.

    Items that have not reached the configured annotator count are listed and
    excluded from both means; they count toward coverage only. Nothing is
    imputed.
    """
    by_item = {}
    for rating in ratings:
        rating.validate(bounds)
        key = (rating.item_id, rating.annotator_id)
        item = by_item.setdefault(rating.item_id, {})
        if rating.annotator_id in item:
            raise ValueError(f"duplicate rating for {key}")
        item[rating.annotator_id] = rating
    if not by_item:
        raise ValueError("no ratings to aggregate")

    complete = {i: anns for i, anns in by_item.items() if len(anns) >= annotators_per_item}
    incomplete = sorted(i for i, anns in by_item.items() if len(anns) < annotators_per_item)

    report = AgreementReport(
        items_total=len(by_item),
        items_complete=len(complete),
        incomplete_items=incomplete,
        annotators_per_item=annotators_per_item,
    )
    if not complete:
        return report

    negative_items = set()
    for metric in LIKERT_METRICS:
        item_means = []
        item_rwgs = []
        for item_id in sorted(complete):
            values = [r.scores[metric] for _, r in sorted(complete[item_id].items())]
            item_means.append(statistics.mean(values))
            agreement_value = rwg_star(values, bounds)
            item_rwgs.append(agreement_value)
            if agreement_value < 0:
                negative_items.add((item_id, metric))
        report.mean_likert[metric] = statistics.mean(item_means)
        report.mean_rwg[metric] = statistics.mean(item_rwgs)
    report.negative_rwg_items = len(negative_items)
    return report


def read_ratings(path: Path) -> list:
    """Load AnnotationRating JSONL (the annotation service's export format)."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(AnnotationRating.from_dict(json.loads(line)))
    return out
