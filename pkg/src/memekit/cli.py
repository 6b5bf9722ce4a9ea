"""Command-line entry point.

Subcommands mirror the pipeline stages: enhance -> build-instructions ->
train -> evaluate, plus agreement, stats, and serve-annotation. Every run
writes its artifacts (and the resolved config) under a run directory named
by timestamp and seed; logs go to stderr, machine output to files.

Exit codes: 0 success, 1 validation failure, 2 runtime failure.
"""

import argparse
import json
import logging
import sys
from datetime import datetime
from pathlib import Path

from .agreement import aggregate, read_ratings
from .annotation import AnnotationService, RatingStore, create_app, load_tasks, tasks_from_records
from .adapters import HFVLMAdapter, MockAdapter
from .config import (
    ConfigError,
    generation_config_from,
    label_set_for,
    load_config,
    parse_overrides,
    stage_configs_from,
    template_id_for,
)
from .explain import batch_generate, get_template
from .instructions import build_stage_dataset, load_samples, save_samples
from .metrics import HashingEmbedder, evaluate_model
from .providers import make_provider
from .records import (
    DatasetError,
    LABEL_SETS,
    corpus_stats,
    load_dataset,
    read_manifest,
    save_dataset,
)
from .training import make_eval_fn, run_curriculum, run_single_stage

log = logging.getLogger("memekit")

SPLITS = ("train", "dev", "test")


def _make_run_dir(base: Path, seed: int, explicit: str = None) -> Path:
    if explicit:
        run_dir = Path(explicit)
    else:
        stamp = datetime.now().strftime("%Y%m%d_%H%M%S")
        run_dir = Path(base) / f"run_{stamp}_seed{seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def _echo_config(config: dict, run_dir: Path) -> None:
    (run_dir / "resolved_config.json").write_text(
        json.dumps(config, sort_keys=True, indent=2, ensure_ascii=False) + "\n"
    )


def _embedder_from(config: dict):
    metrics = config["metrics"]
    if metrics.get("embedder") == "hash":
        return HashingEmbedder(dim=metrics.get("embedder_dim", 64))
    return None


def _backend_from(config: dict, label_set):
    backend = config["backend"]
    if backend["kind"] == "mock":
        return MockAdapter(seed=config["seed"], label_set=label_set)
    return HFVLMAdapter(model_name=backend["model_name"], device=backend.get("device", "cuda"))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_enhance(args) -> int:
    config = load_config(args.config, parse_overrides(args.set))
    run_dir = _make_run_dir(args.out, config["seed"], args.run_dir)
    _echo_config(config, run_dir)
    label_set = label_set_for(config)
    root = Path(config["dataset"]["root"])
    dataset = load_dataset(root, config["dataset"]["manifest"], label_set)
    if dataset.missing_images:
        log.warning("%d records reference missing image files", len(dataset.missing_images))
    provider = make_provider(config["provider"])
    gen_config = generation_config_from(config)

    enhanced_dir = run_dir / "enhanced"
    summary = {"splits": {}, "languages": config["languages"]}
    for split in SPLITS:
        current = dataset.splits.get(split, [])
        if not current:
            continue
        failures = []
        for language in config["languages"]:
            template = get_template(template_id_for(config, language))
            result = batch_generate(
                current,
                template,
                gen_config,
                provider,
                checkpoint_path=run_dir / f"checkpoint_{split}_{template.template_id}.jsonl",
                root=root,
                failure_path=run_dir / f"failures_{split}_{template.template_id}.jsonl",
            )
            failures.extend(result.failures)
            current = result.records
        save_dataset(current, enhanced_dir / f"{split}.jsonl")
        fraction = len(failures) / max(len(dataset.splits[split]), 1)
        summary["splits"][split] = {
            "records": len(current),
            "failures": len(failures),
            "failure_fraction": fraction,
        }
        if fraction > gen_config.failure_threshold:
            (run_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
            raise RuntimeError(
                f"{split}: failure fraction {fraction:.2f} exceeds threshold "
                f"{gen_config.failure_threshold:.2f}"
            )
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(enhanced_dir)
    return 0


def cmd_build_instructions(args) -> int:
    config = load_config(args.config, parse_overrides(args.set))
    run_dir = _make_run_dir(args.out, config["seed"], args.run_dir)
    _echo_config(config, run_dir)
    data_dir = Path(args.data)
    out_dir = run_dir / "instructions"
    written = {}
    for split in SPLITS:
        manifest = data_dir / f"{split}.jsonl"
        if not manifest.exists():
            continue
        records = read_manifest(manifest)
        classify = build_stage_dataset(records, "classify")
        written[f"{split}.classify"] = save_samples(
            classify, out_dir / f"{split}.classify.jsonl"
        )
        for language in config["languages"]:
            joint = build_stage_dataset(records, "classify_explain", language=language)
            written[f"{split}.classify_explain.{language}"] = save_samples(
                joint, out_dir / f"{split}.classify_explain.{language}.jsonl"
            )
    (run_dir / "summary.json").write_text(json.dumps(written, indent=2) + "\n")
    print(out_dir)
    return 0


def cmd_train(args) -> int:
    config = load_config(args.config, parse_overrides(args.set))
    run_dir = _make_run_dir(args.out, config["seed"], args.run_dir)
    _echo_config(config, run_dir)
    label_set = label_set_for(config)
    model = _backend_from(config, label_set)
    eval_fn = make_eval_fn(label_set, language=config["metrics"]["language"],
                           embedder=_embedder_from(config))
    stages = stage_configs_from(config)
    instructions = Path(args.instructions)
    language = config["metrics"]["language"]

    def load_split(name):
        path = instructions / name
        if not path.exists():
            raise DatasetError(f"instruction file not found: {path}")
        return load_samples(path)

    if args.mode == "ms":
        datasets = {
            "stage1": {"train": load_split("train.classify.jsonl"),
                       "dev": load_split("dev.classify.jsonl")},
            "stage2": {"train": load_split(f"train.classify_explain.{language}.jsonl"),
                       "dev": load_split(f"dev.classify_explain.{language}.jsonl")},
        }
        manifest = run_curriculum(stages["stage1"], stages["stage2"], datasets, model,
                                  run_dir, eval_fn)
    else:
        datasets = {
            "train": load_split(f"train.classify_explain.{language}.jsonl"),
            "dev": load_split(f"dev.classify_explain.{language}.jsonl"),
        }
        manifest = run_single_stage(stages["single_stage"], datasets, model, run_dir, eval_fn)
    log.info("final model: %s", manifest["final_model"])
    print(run_dir / "manifest.json")
    return 0


def cmd_evaluate(args) -> int:
    config = load_config(args.config, parse_overrides(args.set))
    run_dir = _make_run_dir(args.out, config["seed"], args.run_dir)
    _echo_config(config, run_dir)
    label_set = label_set_for(config)
    model = _backend_from(config, label_set)
    model.load(args.model_ref)
    samples = load_samples(args.test)
    report = evaluate_model(
        model,
        samples,
        label_set,
        embedder=_embedder_from(config),
        language=config["metrics"]["language"],
        dump_path=run_dir / "predictions.jsonl",
    )
    (run_dir / "report.json").write_text(
        json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"
    )
    log.info("accuracy %.4f weighted_f1 %.4f macro_f1 %.4f",
             report.accuracy, report.weighted_f1, report.macro_f1)
    print(run_dir / "report.json")
    return 0


def cmd_agreement(args) -> int:
    ratings = read_ratings(args.ratings)
    report = aggregate(ratings, annotators_per_item=args.annotators_per_item)
    payload = json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(payload)
        print(args.out)
    else:
        print(payload, end="")
    return 0


def cmd_stats(args) -> int:
    records = read_manifest(args.manifest)
    if args.label_set:
        label_set = LABEL_SETS[args.label_set]
        bad = [r for r in records
               if (r.base.label if hasattr(r, "base") else r.label) not in label_set]
        if bad:
            raise DatasetError(f"{len(bad)} records outside label set {args.label_set}")
    stats = corpus_stats(records)
    payload = json.dumps({k: v.to_dict() for k, v in stats.items()},
                         sort_keys=True, indent=2) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(payload)
        print(args.out)
    else:
        print(payload, end="")
    return 0


def cmd_serve_annotation(args) -> int:
    config = load_config(args.config, parse_overrides(args.set))
    annotation = config["annotation"]
    root = Path(config["dataset"]["root"])
    if annotation.get("tasks_path"):
        tasks = load_tasks(annotation["tasks_path"])
    else:
        records = read_manifest(args.tasks_from or config["dataset"]["manifest"])
        tasks = tasks_from_records(records, annotation["language"])
    if not tasks:
        raise ConfigError("annotation task pool is empty (no explained records?)")
    ratings_path = Path(args.ratings or annotation.get("ratings_path", "annotation_ratings.jsonl"))
    store = RatingStore(ratings_path)
    service = AnnotationService(tasks, store, annotation["annotators"],
                                quota=annotation["quota"])
    ui_dir = Path(args.ui) if args.ui else None
    if ui_dir is not None and not ui_dir.is_dir():
        raise ConfigError(f"--ui directory not found: {ui_dir}")
    app = create_app(service, dataset_root=root, admin_token=annotation["admin_token"],
                     ui_dir=ui_dir)
    log.info("serving %d tasks for %d annotators (ratings -> %s)",
             len(tasks), len(annotation["annotators"]), ratings_path)
    if args.check:
        print(f"ok: {len(tasks)} tasks, ratings at {ratings_path}")
        return 0
    import uvicorn

    uvicorn.run(app, host=annotation.get("host", "127.0.0.1"), port=args.port or annotation["port"],
                log_level="warning")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="memekit",
                                     description="Explanation-enhanced meme dataset, "
                                                 "training, and evaluation pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="run config JSON")
        p.add_argument("--set", action="append", default=[], metavar="KEY.PATH=VALUE",
                       help="override a config field (repeatable), e.g. --set stages.stage1.epochs=3")
        p.add_argument("--out", default="runs", help="base directory for run outputs")
        p.add_argument("--run-dir", default=None,
                       help="exact run directory (overrides --out naming)")

    p = sub.add_parser("enhance", help="generate gold explanations for a dataset")
    common(p)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("build-instructions", help="build instruction datasets")
    common(p)
    p.add_argument("--data", required=True,
                   help="directory with train/dev/test.jsonl (e.g. an enhance run's output)")
    p.set_defaults(func=cmd_build_instructions)

    p = sub.add_parser("train", help="run single-stage or multi-stage fine-tuning")
    common(p)
    p.add_argument("--mode", choices=("ss", "ms"), required=True)
    p.add_argument("--instructions", required=True, help="instruction dataset directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a trained model on a test set")
    common(p)
    p.add_argument("--model-ref", required=True, help="model checkpoint reference")
    p.add_argument("--test", required=True, help="test instruction JSONL")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("agreement", help="aggregate human ratings")
    p.add_argument("--ratings", required=True, help="AnnotationRating JSONL")
    p.add_argument("--annotators-per-item", type=int, default=3)
    p.add_argument("--out", default=None, help="write the report here instead of stdout")
    p.set_defaults(func=cmd_agreement)

    p = sub.add_parser("stats", help="corpus word statistics")
    p.add_argument("--manifest", required=True)
    p.add_argument("--label-set", choices=sorted(LABEL_SETS), default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("serve-annotation", help="run the annotation HTTP service")
    p.add_argument("--config", required=True)
    p.add_argument("--set", action="append", default=[], metavar="KEY.PATH=VALUE",
                   help="override a config field (repeatable)")
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--ratings", default=None, help="ratings store path")
    p.add_argument("--tasks-from", default=None,
                   help="build the pool from this explained manifest")
    p.add_argument("--ui", default=None,
                   help="serve the built web UI (frontend/dist) from the same origin")
    p.add_argument("--check", action="store_true",
                   help="validate config and pool, then exit")
    p.set_defaults(func=cmd_serve_annotation)

    p = sub.add_parser("make-fixture", help="regenerate the bundled synthetic fixture")
    p.add_argument("--root", default="fixtures/synthetic")
    p.add_argument("--count", type=int, default=20)
    p.set_defaults(func=cmd_make_fixture)
    return parser


def cmd_make_fixture(args) -> int:
    from .fixture import fixture_config, make_fixture

    manifest = make_fixture(Path(args.root), count=args.count)
    config_path = Path(args.root).parent / "fixture_config.json"
    config_path.write_text(
        json.dumps(fixture_config(Path(args.root)), indent=2, sort_keys=True) + "\n"
    )
    print(manifest)
    return 0


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DatasetError, ValueError) as exc:
        log.error("%s", exc)
        return 1
    except FileNotFoundError as exc:
        log.error("missing file: %s", exc)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.error("runtime failure: %s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
