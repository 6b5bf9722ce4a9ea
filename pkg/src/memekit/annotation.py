"""Human-evaluation backend: item assignment, rating ingestion, export.

Ratings persist to an append-only JSONL store; an in-memory index is
rebuilt at startup, so the file is the source of truth across restarts.
Assignment is optimistic: next_task never reserves an item, and the
annotator quota is enforced at write time, so a race that shows the same
item to two annotators resolves when the excess submission is rejected.
"""

import json
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Union

from .agreement import LIKERT_METRICS, AnnotationRating, ScaleBounds
from .records import ExplainedRecord

GUIDELINE_VERSION = "guidelines-v1"


class AnnotationError(Exception):
    """Base error; subclasses map onto HTTP statuses."""


class UnknownAnnotatorError(AnnotationError):
    pass


class UnknownItemError(AnnotationError):
    pass


class DuplicateRatingError(AnnotationError):
    pass


class QuotaReachedError(AnnotationError):
    pass


class InvalidRatingError(AnnotationError):
    pass


@dataclass
class AnnotationTask:
    """One unit of annotator work: the meme, its gold label, and the
    generated explanation under evaluation (never model predictions)."""

    item_id: str
    image_ref: str
    assigned_label: str
    explanation: str
    language: str
    guideline_ref: str = GUIDELINE_VERSION

    def to_dict(self):
        return {
            "item_id": self.item_id,
            "image_ref": self.image_ref,
            "assigned_label": self.assigned_label,
            "explanation": self.explanation,
            "language": self.language,
            "guideline_ref": self.guideline_ref,
        }

    @classmethod
    def from_dict(cls, row):
        return cls(
            item_id=str(row["item_id"]),
            image_ref=row["image_ref"],
            assigned_label=row["assigned_label"],
            explanation=row["explanation"],
            language=row["language"],
            guideline_ref=row.get("guideline_ref", GUIDELINE_VERSION),
        )


def tasks_from_records(records: Iterable[ExplainedRecord], language: str) -> list:
    """Build the annotation pool from an explanation-enhanced dataset."""
    tasks = []
    for record in records:
        if not isinstance(record, ExplainedRecord) or language not in record.explanations:
            continue
        tasks.append(
            AnnotationTask(
                item_id=record.base.id,
                image_ref=record.base.image_ref,
                assigned_label=record.base.label,
                explanation=record.explanations[language],
                language=language,
            )
        )
    return tasks


def load_tasks(path: Path) -> list:
    tasks = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                tasks.append(AnnotationTask.from_dict(json.loads(line)))
    return tasks


class RatingStore:
    """Append-only JSONL persistence with a rebuilt in-memory index."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._ratings = []
        self._seen = set()  # (item_id, annotator_id)
        if self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    rating = AnnotationRating.from_dict(json.loads(line))
                    self._ratings.append(rating)
                    self._seen.add((rating.item_id, rating.annotator_id))

    def __len__(self):
        return len(self._ratings)

    def has(self, item_id: str, annotator_id: str) -> bool:
        return (item_id, annotator_id) in self._seen

    def count_for_item(self, item_id: str) -> int:
        return sum(1 for r in self._ratings if r.item_id == item_id)

    def count_for_annotator(self, annotator_id: str) -> int:
        return sum(1 for r in self._ratings if r.annotator_id == annotator_id)

    def append(self, rating: AnnotationRating) -> None:
        with self._lock:
            key = (rating.item_id, rating.annotator_id)
            if key in self._seen:
                raise DuplicateRatingError(f"rating already submitted for {key}")
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(rating.to_dict(), ensure_ascii=False) + "\n")
            self._ratings.append(rating)
            self._seen.add(key)

    def all_sorted(self) -> list:
        return sorted(self._ratings, key=lambda r: (r.item_id, r.annotator_id))


class AnnotationService:
    """Assignment, validation, progress, and export over one task pool."""

    def __init__(self, tasks, store: RatingStore, annotators: Iterable[str],
                 quota: int = 3, bounds: ScaleBounds = ScaleBounds()):
        self.tasks = list(tasks)
        self.by_id = {task.item_id: task for task in self.tasks}
        if len(self.by_id) != len(self.tasks):
            raise ValueError("duplicate item_id in task pool")
        self.store = store
        self.annotators = set(annotators)
        self.quota = quota
        self.bounds = bounds
        self._submit_lock = threading.Lock()

    def _check_annotator(self, annotator_id: str) -> None:
        if annotator_id not in self.annotators:
            raise UnknownAnnotatorError(f"unknown annotator token")

    def next_task(self, annotator_id: str) -> Optional[AnnotationTask]:
        """Lowest-index item this annotator has not rated and that is still
        below its annotator quota; None when the annotator is done."""
        self._check_annotator(annotator_id)
        for task in self.tasks:
            if self.store.has(task.item_id, annotator_id):
                continue
            if self.store.count_for_item(task.item_id) >= self.quota:
                continue
            return task
        return None

    def submit_rating(self, rating: Union[AnnotationRating, dict]) -> dict:
        if isinstance(rating, dict):
            try:
                rating = AnnotationRating.from_dict(rating)
            except (KeyError, TypeError) as exc:
                raise InvalidRatingError(f"malformed rating payload: {exc}") from exc
        self._check_annotator(rating.annotator_id)
        if rating.item_id not in self.by_id:
            raise UnknownItemError(f"unknown item {rating.item_id!r}")
        try:
            rating.validate(self.bounds)
        except ValueError as exc:
            raise InvalidRatingError(str(exc)) from exc
        with self._submit_lock:
            if self.store.count_for_item(rating.item_id) >= self.quota:
                raise QuotaReachedError(
                    f"item {rating.item_id!r} already has {self.quota} ratings"
                )
            self.store.append(rating)
        return self.progress(rating.annotator_id)

    def progress(self, annotator_id: str) -> dict:
        self._check_annotator(annotator_id)
        completed = self.store.count_for_annotator(annotator_id)
        return {
            "annotator_completed": completed,
            "items_total": len(self.tasks),
            "ratings_total": len(self.store),
            "quota": self.quota,
        }

    def export_ratings(self) -> list:
        """Exactly the persisted ratings, sorted by (item_id, annotator_id)."""
        return self.store.all_sorted()

    def export_jsonl(self) -> str:
        return "".join(
            json.dumps(r.to_dict(), ensure_ascii=False) + "\n" for r in self.export_ratings()
        )


def create_app(service: AnnotationService, dataset_root: Optional[Path] = None,
               admin_token: str = "admin", ui_dir: Optional[Path] = None):
    """HTTP JSON facade over an AnnotationService.

    When ui_dir is given, the built annotator web UI is served from "/" on
    the same origin as the API.
    """
    from fastapi import FastAPI, HTTPException, Request
    from fastapi.responses import FileResponse, PlainTextResponse

    app = FastAPI(title="annotation service")

    def handle(callable_, *args):
        try:
            return callable_(*args)
        except UnknownAnnotatorError as exc:
            raise HTTPException(status_code=403, detail=str(exc))
        except UnknownItemError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except DuplicateRatingError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except QuotaReachedError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except InvalidRatingError as exc:
            raise HTTPException(status_code=422, detail=str(exc))

    @app.get("/api/tasks/next")
    def next_task(annotator: str):
        task = handle(service.next_task, annotator)
        if task is None:
            return {"done": True, "progress": service.progress(annotator)}
        return {"done": False, "task": task.to_dict(),
                "metrics": list(LIKERT_METRICS),
                "scale": {"lower": service.bounds.lower, "upper": service.bounds.upper}}

    @app.post("/api/ratings")
    async def submit(request: Request):
        body = await request.json()
        return {"ok": True, "progress": handle(service.submit_rating, body)}

    @app.get("/api/progress")
    def progress(annotator: str):
        return handle(service.progress, annotator)

    @app.get("/api/items/{item_id}/image")
    def image(item_id: str):
        if item_id not in service.by_id:
            raise HTTPException(status_code=404, detail="unknown item")
        if dataset_root is None:
            raise HTTPException(status_code=404, detail="no dataset root configured")
        path = Path(dataset_root) / service.by_id[item_id].image_ref
        if not path.is_file():
            raise HTTPException(status_code=404, detail="image file missing")
        return FileResponse(path)

    @app.get("/api/export")
    def export(token: str):
        if token != admin_token:
            raise HTTPException(status_code=403, detail="admin token required")
        return PlainTextResponse(service.export_jsonl(),
                                 media_type="application/x-ndjson")

    if ui_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
