import json
import random

import pytest

from memekit.adapters import MockAdapter
from memekit.instructions import build_stage_dataset
from memekit.metrics import MetricReport
from memekit.records import ARMEME_LABELS, ExplainedRecord, MemeRecord
from memekit.training import (
    AdapterConfig,
    CheckpointRecord,
    StageConfig,
    make_eval_fn,
    run_curriculum,
    run_single_stage,
    run_stage,
    select_checkpoint,
    stage2_defaults_from,
    total_loss,
)


def records(n=8, seed=5):
    rng = random.Random(seed)
    out = []
    for i in range(n):
        base = MemeRecord(f"m{i:03d}", f"images/{i}.png", f"text {i}",
                          rng.choice(ARMEME_LABELS.labels), "train")
        out.append(ExplainedRecord(base, {"en": f"reason {i}", "ar": f"سبب {i}"}))
    return out


def classify_data(n=8, seed=5):
    return build_stage_dataset(records(n, seed), "classify")


def joint_data(n=8, seed=5, language="en"):
    return build_stage_dataset(records(n, seed), "classify_explain", language=language)


def curriculum_datasets(n=8):
    return {
        "stage1": {"train": classify_data(n), "dev": classify_data(4, seed=6)},
        "stage2": {"train": joint_data(n), "dev": joint_data(4, seed=6)},
    }


EVAL = make_eval_fn(ARMEME_LABELS)


def stage1_config(**kw):
    defaults = dict(stage_id="stage1", learning_rate=0.1, epochs=2, seed=13)
    defaults.update(kw)
    return StageConfig(**defaults)


class TestStageConfig:
    def test_expl_weight_derived(self):
        assert StageConfig("stage1").expl_weight == 0
        assert StageConfig("stage2").expl_weight == 1
        assert StageConfig("single_stage").expl_weight == 1

    def test_expl_weight_mismatch_rejected(self):
        with pytest.raises(ValueError):
            StageConfig("stage1", expl_weight=1)
        with pytest.raises(ValueError):
            StageConfig("stage2", expl_weight=0)

    def test_default_profile_values(self):
        config = StageConfig("stage1")
        assert config.batch_size == 2
        assert config.grad_accum_steps == 4
        assert config.weight_decay == 0.01
        assert config.warmup_steps == 5
        adapter = config.adapter
        assert (adapter.rank, adapter.alpha, adapter.dropout, adapter.quantization_bits) == (
            16, 16, 0.0, 4
        )
        assert set(adapter.target_submodules) == {"vision", "language", "attention", "mlp"}

    def test_unknown_stage_id(self):
        with pytest.raises(ValueError):
            StageConfig("stage3")

    def test_stage2_defaults_lower_lr_more_epochs(self):
        stage1 = stage1_config(learning_rate=0.2, epochs=3)
        stage2 = stage2_defaults_from(stage1)
        assert stage2.learning_rate == pytest.approx(0.1)
        assert stage2.epochs == 6
        assert stage2.expl_weight == 1


class TestTotalLoss:
    def test_stage1_annihilates_explanation_term(self):
        assert total_loss(2.5, 7.0, StageConfig("stage1")) == 2.5

    def test_stage2_sums(self):
        assert total_loss(2.5, 7.0, StageConfig("stage2")) == 9.5

    def test_zeros(self):
        assert total_loss(0.0, 0.0, StageConfig("single_stage")) == 0.0
        assert total_loss(0.0, 0.0, StageConfig("stage1")) == 0.0

    def test_missing_explanation_loss_with_weight_one(self):
        with pytest.raises(ValueError):
            total_loss(2.5, None, StageConfig("stage2"))

    def test_absent_loss_fine_for_stage1(self):
        assert total_loss(1.25, None, StageConfig("stage1")) == 1.25

    def test_additivity(self):
        rng = random.Random(3)
        stage2 = StageConfig("stage2")
        for _ in range(100):
            a, b = rng.uniform(-5, 5), rng.uniform(-5, 5)
            assert total_loss(a, b, stage2) == pytest.approx(
                total_loss(a, 0.0, stage2) + b, abs=1e-12
            )


class TestRunStage:
    def test_checkpoint_bookkeeping(self, tmp_path):
        model = MockAdapter(seed=1, label_set=ARMEME_LABELS)
        model.apply_adapter(AdapterConfig())
        result = run_stage(stage1_config(), classify_data(), classify_data(4, seed=6),
                           model, EVAL, tmp_path)
        assert len(result.checkpoints) == 2
        assert [c.epoch for c in result.checkpoints] == [1, 2]
        steps = [c.step for c in result.checkpoints]
        assert steps == sorted(steps)
        for checkpoint in result.checkpoints:
            assert (tmp_path / checkpoint.storage_ref).exists()
            assert isinstance(checkpoint.dev_metrics, MetricReport)

    def test_mode_mismatch_rejected(self, tmp_path):
        model = MockAdapter(seed=1, label_set=ARMEME_LABELS)
        model.apply_adapter(AdapterConfig())
        with pytest.raises(ValueError, match="classify"):
            run_stage(stage1_config(), joint_data(), joint_data(4, seed=6),
                      model, EVAL, tmp_path)
        with pytest.raises(ValueError):
            run_stage(StageConfig("stage2"), classify_data(), classify_data(4, seed=6),
                      model, EVAL, tmp_path)

    def test_loss_trace_equals_total_loss_of_scripted_pairs(self, tmp_path):
        script = [(2.0, 5.0), (1.5, 4.0), (1.0, 3.0), (0.5, 2.0)]
        config = stage1_config(epochs=1, batch_size=2)
        model = MockAdapter(seed=1, label_set=ARMEME_LABELS, script=script)
        model.apply_adapter(AdapterConfig())
        result = run_stage(config, classify_data(8), classify_data(4, seed=6),
                           model, EVAL, tmp_path)
        expected = [total_loss(a, b, config) for a, b in script]
        assert result.losses == expected  # W=0: explanation part inert

        config2 = StageConfig("stage2", learning_rate=0.05, epochs=1, batch_size=2, seed=13)
        model2 = MockAdapter(seed=1, label_set=ARMEME_LABELS, script=script)
        model2.apply_adapter(AdapterConfig())
        result2 = run_stage(config2, joint_data(8), joint_data(4, seed=6),
                            model2, EVAL, tmp_path / "s2")
        assert result2.losses == [total_loss(a, b, config2) for a, b in script]

    def test_epoch_and_batch_contract(self, tmp_path):
        # 8 samples, batch 2, accum 4, 2 epochs: 8 micro-batches, 2 optimizer steps
        model = MockAdapter(seed=1, label_set=ARMEME_LABELS)
        model.apply_adapter(AdapterConfig())
        config = stage1_config(epochs=2, batch_size=2, grad_accum_steps=4)
        result = run_stage(config, classify_data(8), classify_data(4, seed=6),
                           model, EVAL, tmp_path)
        assert len(result.losses) == 8
        assert model.optimizer_steps == 2
        assert result.checkpoints[-1].step == 2


class TestSelectCheckpoint:
    @staticmethod
    def make(values, criterion="accuracy"):
        return [
            CheckpointRecord("stage1", i + 1, i + 1,
                             MetricReport(**{criterion: v}), f"ck{i}.json")
            for i, v in enumerate(values)
        ]

    def test_maximizer(self):
        chosen = select_checkpoint(self.make([0.60, 0.72, 0.71]), "accuracy")
        assert chosen.epoch == 2

    def test_tie_breaks_earliest(self):
        chosen = select_checkpoint(self.make([0.70, 0.70]), "accuracy")
        assert chosen.epoch == 1

    def test_empty(self):
        with pytest.raises(ValueError):
            select_checkpoint([], "accuracy")

    def test_missing_criterion(self):
        with pytest.raises(ValueError, match="bleu"):
            select_checkpoint(self.make([0.5]), "bleu")

    def test_matches_linear_scan_oracle(self):
        rng = random.Random(71)
        for _ in range(100):
            values = [round(rng.uniform(0, 1), 3) for _ in range(rng.randint(1, 10))]
            checkpoints = self.make(values, "weighted_f1")
            chosen = select_checkpoint(checkpoints, "weighted_f1")
            best_index = 0
            for i in range(1, len(values)):
                if values[i] > values[best_index]:
                    best_index = i
            assert chosen is checkpoints[best_index]

    def test_argmax_invariant_under_positive_scaling(self):
        rng = random.Random(72)
        values = [rng.uniform(0, 1) for _ in range(6)]
        base = select_checkpoint(self.make(values, "macro_f1"), "macro_f1")
        scaled = select_checkpoint(self.make([v * 0.37 for v in values], "macro_f1"),
                                   "macro_f1")
        assert base.epoch == scaled.epoch


class TestCurriculum:
    def test_stage2_initialized_from_stage1_winner(self, tmp_path):
        model = MockAdapter(seed=3, label_set=ARMEME_LABELS)
        manifest = run_curriculum(stage1_config(), StageConfig("stage2", learning_rate=0.05,
                                                               epochs=2, seed=13),
                                  curriculum_datasets(), model, tmp_path, EVAL)
        stage1_part, stage2_part = manifest["stages"]
        assert manifest["stage2_init"] == stage1_part["selected_ref"]
        assert manifest["final_model"] == stage2_part["selected_ref"]
        assert (tmp_path / "manifest.json").exists()
        assert (tmp_path / "checkpoints" / manifest["final_model"]).exists()

    def test_higher_stage2_lr_warns_but_proceeds(self, tmp_path, caplog):
        model = MockAdapter(seed=3, label_set=ARMEME_LABELS)
        with caplog.at_level("WARNING"):
            manifest = run_curriculum(
                stage1_config(learning_rate=0.01),
                StageConfig("stage2", learning_rate=0.5, epochs=1, seed=13),
                curriculum_datasets(), model, tmp_path, EVAL,
            )
        assert manifest["mode"] == "ms"
        assert any("learning rate" in message for message in caplog.messages)

    def test_identical_seeds_byte_identical_manifests(self, tmp_path):
        outputs = []
        for name in ("a", "b"):
            model = MockAdapter(seed=3, label_set=ARMEME_LABELS)
            run_curriculum(stage1_config(),
                           StageConfig("stage2", learning_rate=0.05, epochs=2, seed=13),
                           curriculum_datasets(), model, tmp_path / name, EVAL)
            outputs.append((tmp_path / name / "manifest.json").read_bytes())
        assert outputs[0] == outputs[1]

    def test_different_seed_changes_manifest(self, tmp_path):
        manifests = []
        for seed in (13, 14):
            model = MockAdapter(seed=3, label_set=ARMEME_LABELS)
            run_curriculum(stage1_config(seed=seed),
                           StageConfig("stage2", learning_rate=0.05, epochs=2, seed=seed),
                           curriculum_datasets(), model, tmp_path / str(seed), EVAL)
            manifests.append((tmp_path / str(seed) / "manifest.json").read_bytes())
        assert manifests[0] != manifests[1]


class TestSingleStage:
    def test_manifest_tagged_ss(self, tmp_path):
        model = MockAdapter(seed=3, label_set=ARMEME_LABELS)
        config = StageConfig("single_stage", learning_rate=0.05, epochs=2, seed=13)
        manifest = run_single_stage(config, {"train": joint_data(),
                                             "dev": joint_data(4, seed=6)},
                                    model, tmp_path, EVAL)
        assert manifest["mode"] == "ss"
        assert len(manifest["stages"]) == 1

    def test_same_seed_identical_manifests(self, tmp_path):
        blobs = []
        for name in ("x", "y"):
            model = MockAdapter(seed=3, label_set=ARMEME_LABELS)
            config = StageConfig("single_stage", learning_rate=0.05, epochs=2, seed=13)
            run_single_stage(config, {"train": joint_data(), "dev": joint_data(4, seed=6)},
                             model, tmp_path / name, EVAL)
            blobs.append((tmp_path / name / "manifest.json").read_bytes())
        assert blobs[0] == blobs[1]

    def test_classify_data_rejected(self, tmp_path):
        model = MockAdapter(seed=3, label_set=ARMEME_LABELS)
        config = StageConfig("single_stage", epochs=1)
        with pytest.raises(ValueError):
            run_single_stage(config, {"train": classify_data(),
                                      "dev": classify_data(4, seed=6)},
                             model, tmp_path, EVAL)


class TestGradientIsolation:
    def test_stage1_params_invariant_to_scripted_explanation_losses(self, tmp_path):
        base_script = [(2.0, 5.0), (1.5, 4.0), (1.0, 3.0), (0.5, 2.0)]
        rng = random.Random(99)
        perturbed_script = [(lc, rng.uniform(-100, 100)) for lc, _ in base_script]
        params = []
        for script in (base_script, perturbed_script):
            model = MockAdapter(seed=1, label_set=ARMEME_LABELS, script=script)
            model.apply_adapter(AdapterConfig())
            run_stage(stage1_config(epochs=1, batch_size=2), classify_data(8),
                      classify_data(4, seed=6), model, EVAL, tmp_path / str(len(params)))
            params.append(model.param_bytes())
        assert params[0] == params[1]

    def test_direct_train_batch_isolation_on_perturbed_targets(self):
        # expl_weight 0: arbitrary explanation perturbation, bit-identical params
        original = joint_data(8)
        perturbed = [
            type(sample)(**{**sample.__dict__,
                            "target": sample.target + " PERTURBED ARBITRARILY"})
            for sample in original
        ]
        states = []
        for samples in (original, perturbed):
            model = MockAdapter(seed=4, label_set=ARMEME_LABELS)
            model.apply_adapter(AdapterConfig())
            model.begin_stage(stage1_config(epochs=1))
            for start in range(0, len(samples), 2):
                model.train_batch(samples[start : start + 2], expl_weight=0)
            states.append(model.param_bytes())
        assert states[0] == states[1]

    def test_stage2_params_do_depend_on_explanations(self):
        original = joint_data(8)
        perturbed = [
            type(sample)(**{**sample.__dict__,
                            "target": sample.target + " PERTURBED ARBITRARILY"})
            for sample in original
        ]
        states = []
        for samples in (original, perturbed):
            model = MockAdapter(seed=4, label_set=ARMEME_LABELS)
            model.apply_adapter(AdapterConfig())
            model.begin_stage(StageConfig("stage2", learning_rate=0.1, epochs=1, seed=13))
            for start in range(0, len(samples), 2):
                model.train_batch(samples[start : start + 2], expl_weight=1)
            states.append(model.param_bytes())
        assert states[0] != states[1]
