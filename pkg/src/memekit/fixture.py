"""Bundled synthetic fixture: 20 records with tiny generated images.

Lets the whole pipeline run end-to-end with the mock provider and mock
backend, no network or GPUs. Regeneration is deterministic for a given
seed (image bytes may vary across Pillow versions; record content never
does).
"""

import hashlib
import json
import random
from pathlib import Path

from .records import ARMEME_LABELS

_AR_WORDS = ["صورة", "نص", "رمز", "علم", "سخرية", "تأثير", "مشهد", "رسالة"]
_EN_WORDS = ["crowd", "flag", "symbol", "caption", "joke", "slogan", "banner", "scene"]

SPLIT_PLAN = [("train", 12), ("dev", 4), ("test", 4)]


def _color_for(record_id: str):
    digest = hashlib.sha256(record_id.encode()).digest()
    return digest[0], digest[1], digest[2]


def make_fixture(root: Path, count: int = 20, seed: int = 7) -> Path:
    """Write images/ and manifest.jsonl under root; returns the manifest path."""
    from PIL import Image

    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    rng = random.Random(seed)

    splits = []
    for split, n in SPLIT_PLAN:
        splits.extend([split] * n)
    while len(splits) < count:
        splits.append("train")

    manifest = root / "manifest.jsonl"
    with open(manifest, "w", encoding="utf-8") as fh:
        for i in range(count):
            record_id = f"syn{i:03d}"
            image_rel = f"images/{record_id}.png"
            Image.new("RGB", (32, 32), _color_for(record_id)).save(root / image_rel)
            words = rng.sample(_AR_WORDS, 3) + rng.sample(_EN_WORDS, 2)
            row = {
                "id": record_id,
                "img_path": image_rel,
                "text": " ".join(words),
                "class_label": ARMEME_LABELS.labels[i % len(ARMEME_LABELS.labels)],
                "split": splits[i],
            }
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    return manifest


def fixture_config(root: Path) -> dict:
    """A ready-to-run config for the fixture dataset (mock everything)."""
    root = Path(root)
    return {
        "seed": 13,
        "dataset": {"profile": "fixture", "root": str(root),
                    "manifest": str(root / "manifest.jsonl")},
        "provider": {"kind": "mock"},
        "generation": {"word_limit": 100, "temperature": 0.0, "max_retries": 3,
                       "concurrency_limit": 2, "failure_threshold": 0.2,
                       "fixed_clock": True},
        "backend": {"kind": "mock"},
        "stages": {"stage1": {"learning_rate": 0.1, "epochs": 2, "batch_size": 2,
                              "grad_accum_steps": 2}},
        "metrics": {"language": "en", "embedder": "hash"},
        "annotation": {"annotators": ["tok-a", "tok-b", "tok-c"],
                       "admin_token": "admin", "quota": 3, "port": 8901,
                       "language": "en"},
    }
