"""Multi-stage optimization orchestrator.

Stage 1 fine-tunes on classification only (expl_weight 0); stage 2 resumes
from the stage-1 dev-best checkpoint and trains the joint
classification-plus-explanation objective (expl_weight 1):

    total = l_classif + expl_weight * l_expl

The single-stage baseline trains the joint objective end-to-end. Run
manifests contain no wall-clock values and only run-dir-relative storage
paths, so a fixed seed plus a deterministic backend reproduces them
byte-for-byte.
"""

import json
import logging
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

from .metrics import MetricReport, evaluate_model

log = logging.getLogger(__name__)

STAGE_IDS = ("stage1", "stage2", "single_stage")

# stage-2 defaults relative to stage 1: halve the learning rate, double the
# epochs (direction per the curriculum recipe; magnitudes overridable)
STAGE2_LR_MULTIPLIER = 0.5
STAGE2_EPOCH_MULTIPLIER = 2


@dataclass(frozen=True)
class AdapterConfig:
    rank: int = 16
    alpha: int = 16
    dropout: float = 0.0
    quantization_bits: int = 4
    target_submodules: tuple = ("vision", "language", "attention", "mlp")


@dataclass
class StageConfig:
    stage_id: str
    learning_rate: float = 2e-4
    epochs: int = 1
    expl_weight: Optional[int] = None
    adapter: AdapterConfig = field(default_factory=AdapterConfig)
    batch_size: int = 2
    grad_accum_steps: int = 4
    optimizer: str = "adamw"
    weight_decay: float = 0.01
    scheduler: str = "linear"
    warmup_steps: int = 5
    seed: int = 0
    eval_every_epochs: int = 1
    selection_metric: str = "weighted_f1"

    def __post_init__(self):
        if self.stage_id not in STAGE_IDS:
            raise ValueError(f"stage_id must be one of {STAGE_IDS}, got {self.stage_id!r}")
        required = 0 if self.stage_id == "stage1" else 1
        if self.expl_weight is None:
            self.expl_weight = required
        elif self.expl_weight != required:
            raise ValueError(
                f"{self.stage_id} requires expl_weight={required}, got {self.expl_weight}"
            )

    @property
    def task_mode(self) -> str:
        return "classify" if self.stage_id == "stage1" else "classify_explain"

    def to_dict(self):
        out = asdict(self)
        out["adapter"]["target_submodules"] = list(self.adapter.target_submodules)
        return out


@dataclass
class CheckpointRecord:
    stage_id: str
    epoch: int
    step: int  # optimizer steps completed when the checkpoint was written
    dev_metrics: MetricReport
    storage_ref: str  # relative to the run's checkpoint directory

    def to_dict(self):
        return {
            "stage_id": self.stage_id,
            "epoch": self.epoch,
            "step": self.step,
            "storage_ref": self.storage_ref,
            "dev_metrics": self.dev_metrics.to_dict(),
        }


@dataclass
class StageResult:
    checkpoints: list  # CheckpointRecord, one per evaluation point
    losses: list       # total loss per micro-batch, in order


def total_loss(l_classif: float, l_expl: Optional[float], stage: StageConfig) -> float:
    """Combined objective; l_expl is required whenever expl_weight is 1."""
    if stage.expl_weight and l_expl is None:
        raise ValueError(f"{stage.stage_id} has expl_weight=1 but no explanation loss")
    return l_classif + stage.expl_weight * (l_expl if l_expl is not None else 0.0)


def _batches(indices: Sequence[int], size: int):
    for start in range(0, len(indices), size):
        yield indices[start : start + size]


def run_stage(
    config: StageConfig,
    train: Sequence,
    dev: Sequence,
    model,
    eval_fn: Callable,
    checkpoint_dir: Path,
) -> StageResult:
    """Train one stage for exactly config.epochs passes.

    Data order reshuffles per epoch from config.seed; every
    eval_every_epochs (and at the final epoch) the model is saved and the
    dev set evaluated into a CheckpointRecord.
    """
    mismatched = [s.id for s in list(train) + list(dev) if s.task_mode != config.task_mode]
    if mismatched:
        raise ValueError(
            f"{config.stage_id} expects task_mode={config.task_mode!r}; "
            f"mismatched sample ids: {mismatched[:5]}"
        )
    if not train:
        raise ValueError(f"{config.stage_id}: empty training set")
    checkpoint_dir = Path(checkpoint_dir)
    checkpoint_dir.mkdir(parents=True, exist_ok=True)

    model.begin_stage(config)
    rng = random.Random(config.seed)
    losses = []
    checkpoints = []
    opt_steps = 0
    micro_batches = 0
    for epoch in range(1, config.epochs + 1):
        order = list(range(len(train)))
        rng.shuffle(order)
        for batch_idx in _batches(order, config.batch_size):
            samples = [train[i] for i in batch_idx]
            l_classif, l_expl = model.train_batch(samples, config.expl_weight)
            losses.append(total_loss(l_classif, l_expl, config))
            micro_batches += 1
            if micro_batches % config.grad_accum_steps == 0:
                opt_steps += 1
        if epoch % config.eval_every_epochs == 0 or epoch == config.epochs:
            ref = f"{config.stage_id}_epoch{epoch:03d}.json"
            model.save(checkpoint_dir / ref)
            report = eval_fn(model, dev)
            checkpoints.append(
                CheckpointRecord(config.stage_id, epoch, opt_steps, report, ref)
            )
    return StageResult(checkpoints=checkpoints, losses=losses)


def select_checkpoint(checkpoints: Sequence[CheckpointRecord],
                      criterion: str = "weighted_f1") -> CheckpointRecord:
    """Dev-set maximizer for the criterion; ties go to the earliest."""
    if not checkpoints:
        raise ValueError("no checkpoints to select from")
    best = checkpoints[0]
    best_value = _criterion_value(best, criterion)
    for candidate in checkpoints[1:]:
        value = _criterion_value(candidate, criterion)
        if value > best_value:
            best, best_value = candidate, value
    return best


def _criterion_value(checkpoint: CheckpointRecord, criterion: str) -> float:
    value = getattr(checkpoint.dev_metrics, criterion, None)
    if value is None:
        raise ValueError(f"criterion {criterion!r} missing from dev metrics")
    return value


def make_eval_fn(label_set, language: str = "en", embedder=None) -> Callable:
    def eval_fn(model, dev_samples):
        return evaluate_model(model, dev_samples, label_set, embedder=embedder,
                              language=language)
    return eval_fn


def _stage_manifest(config: StageConfig, result: StageResult,
                    selected: CheckpointRecord) -> dict:
    return {
        "config": config.to_dict(),
        "checkpoints": [c.to_dict() for c in result.checkpoints],
        "selected_index": result.checkpoints.index(selected),
        "selected_ref": selected.storage_ref,
        "losses": [round(loss, 10) for loss in result.losses],
    }


def _write_manifest(manifest: dict, run_dir: Path) -> Path:
    path = Path(run_dir) / "manifest.json"
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return path


def run_curriculum(
    stage1: StageConfig,
    stage2: StageConfig,
    datasets: dict,
    model,
    run_dir: Path,
    eval_fn: Callable,
) -> dict:
    """Two-stage curriculum: classification first, then joint fine-tuning
    initialized from the stage-1 dev-best checkpoint.

    datasets: {"stage1": {"train": [...], "dev": [...]},
               "stage2": {"train": [...], "dev": [...]}}

    Returns the manifest dict; the manifest file and all checkpoints land
    under run_dir.
    """
    if stage2.learning_rate > stage1.learning_rate:
        log.warning(
            "stage2 learning rate %.3g exceeds stage1 %.3g; the default profile lowers it",
            stage2.learning_rate, stage1.learning_rate,
        )
    run_dir = Path(run_dir)
    checkpoint_dir = run_dir / "checkpoints"
    model.apply_adapter(stage1.adapter)

    result1 = run_stage(stage1, datasets["stage1"]["train"], datasets["stage1"]["dev"],
                        model, eval_fn, checkpoint_dir)
    if not result1.checkpoints:
        raise ValueError("stage1 produced no checkpoints")
    winner1 = select_checkpoint(result1.checkpoints, stage1.selection_metric)

    model.load(checkpoint_dir / winner1.storage_ref)
    result2 = run_stage(stage2, datasets["stage2"]["train"], datasets["stage2"]["dev"],
                        model, eval_fn, checkpoint_dir)
    winner2 = select_checkpoint(result2.checkpoints, stage2.selection_metric)
    model.load(checkpoint_dir / winner2.storage_ref)

    manifest = {
        "mode": "ms",
        "stages": [
            _stage_manifest(stage1, result1, winner1),
            _stage_manifest(stage2, result2, winner2),
        ],
        "stage2_init": winner1.storage_ref,
        "final_model": winner2.storage_ref,
        "seeds": {"stage1": stage1.seed, "stage2": stage2.seed},
    }
    _write_manifest(manifest, run_dir)
    return manifest


def run_single_stage(
    config: StageConfig,
    datasets: dict,
    model,
    run_dir: Path,
    eval_fn: Callable,
) -> dict:
    """Single-stage baseline: joint objective end-to-end.

    datasets: {"train": [...], "dev": [...]}; manifest mirrors
    run_curriculum with a single stage entry.
    """
    if config.stage_id != "single_stage":
        raise ValueError(f"expected a single_stage config, got {config.stage_id!r}")
    run_dir = Path(run_dir)
    checkpoint_dir = run_dir / "checkpoints"
    model.apply_adapter(config.adapter)
    result = run_stage(config, datasets["train"], datasets["dev"], model, eval_fn,
                       checkpoint_dir)
    winner = select_checkpoint(result.checkpoints, config.selection_metric)
    model.load(checkpoint_dir / winner.storage_ref)
    manifest = {
        "mode": "ss",
        "stages": [_stage_manifest(config, result, winner)],
        "final_model": winner.storage_ref,
        "seeds": {"single_stage": config.seed},
    }
    _write_manifest(manifest, run_dir)
    return manifest


def stage2_defaults_from(stage1: StageConfig, **overrides) -> StageConfig:
    """Derive a stage-2 config from stage 1 (lower LR, more epochs)."""
    params = dict(
        stage_id="stage2",
        learning_rate=stage1.learning_rate * STAGE2_LR_MULTIPLIER,
        epochs=stage1.epochs * STAGE2_EPOCH_MULTIPLIER,
        adapter=stage1.adapter,
        batch_size=stage1.batch_size,
        grad_accum_steps=stage1.grad_accum_steps,
        optimizer=stage1.optimizer,
        weight_decay=stage1.weight_decay,
        scheduler=stage1.scheduler,
        warmup_steps=stage1.warmup_steps,
        seed=stage1.seed,
        eval_every_epochs=stage1.eval_every_epochs,
        selection_metric=stage1.selection_metric,
    )
    params.update(overrides)
    return StageConfig(**params)
