import json
from pathlib import Path

import pytest

from memekit.cli import main
from memekit.fixture import fixture_config, make_fixture


@pytest.fixture(scope="module")
def fixture_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("fixture") / "synthetic"
    make_fixture(root)
    return root


@pytest.fixture(scope="module")
def config_path(fixture_root):
    path = fixture_root.parent / "config.json"
    path.write_text(json.dumps(fixture_config(fixture_root), indent=2))
    return str(path)


def run(argv):
    return main(argv)


class TestPipeline:
    def test_enhance_then_instructions_then_train_then_evaluate(self, config_path, tmp_path):
        enh = tmp_path / "enh"
        assert run(["enhance", "--config", config_path, "--run-dir", str(enh)]) == 0
        for split in ("train", "dev", "test"):
            assert (enh / "enhanced" / f"{split}.jsonl").exists()
        enhanced_rows = [
            json.loads(line)
            for line in (enh / "enhanced" / "train.jsonl").read_text().splitlines()
        ]
        assert all("explanation_en" in row and "explanation_ar" in row for row in enhanced_rows)
        assert (enh / "resolved_config.json").exists()

        instr = tmp_path / "instr"
        assert run(["build-instructions", "--config", config_path,
                    "--data", str(enh / "enhanced"), "--run-dir", str(instr)]) == 0
        instr_dir = instr / "instructions"
        assert (instr_dir / "train.classify.jsonl").exists()
        assert (instr_dir / "train.classify_explain.en.jsonl").exists()
        assert (instr_dir / "train.classify_explain.ar.jsonl").exists()

        ms = tmp_path / "ms"
        assert run(["train", "--config", config_path, "--mode", "ms",
                    "--instructions", str(instr_dir), "--run-dir", str(ms)]) == 0
        manifest = json.loads((ms / "manifest.json").read_text())
        assert manifest["mode"] == "ms"
        assert manifest["stage2_init"] == manifest["stages"][0]["selected_ref"]

        ss = tmp_path / "ss"
        assert run(["train", "--config", config_path, "--mode", "ss",
                    "--instructions", str(instr_dir), "--run-dir", str(ss)]) == 0
        assert json.loads((ss / "manifest.json").read_text())["mode"] == "ss"

        ev = tmp_path / "ev"
        model_ref = ms / "checkpoints" / manifest["final_model"]
        assert run(["evaluate", "--config", config_path, "--model-ref", str(model_ref),
                    "--test", str(instr_dir / "test.classify_explain.en.jsonl"),
                    "--run-dir", str(ev)]) == 0
        report = json.loads((ev / "report.json").read_text())
        assert 0.0 <= report["accuracy"] <= 1.0
        assert (ev / "predictions.jsonl").exists()
        predictions = [json.loads(l) for l in (ev / "predictions.jsonl").read_text().splitlines()]
        assert {p["id"] for p in predictions} == {
            json.loads(l)["id"]
            for l in (instr_dir / "test.classify_explain.en.jsonl").read_text().splitlines()
        }

    def test_rerun_identical_outputs(self, config_path, tmp_path):
        blobs = []
        for name in ("one", "two"):
            enh = tmp_path / name
            assert run(["enhance", "--config", config_path, "--run-dir", str(enh)]) == 0
            blobs.append((enh / "enhanced" / "train.jsonl").read_bytes())
        assert blobs[0] == blobs[1]

    def test_stats_subcommand(self, config_path, fixture_root, tmp_path):
        out = tmp_path / "stats.json"
        assert run(["stats", "--manifest", str(fixture_root / "manifest.jsonl"),
                    "--label-set", "armeme", "--out", str(out)]) == 0
        stats = json.loads(out.read_text())
        assert stats["train"]["records"] == 12
        assert stats["total"]["records"] == 20

    def test_agreement_subcommand(self, tmp_path):
        ratings = tmp_path / "ratings.jsonl"
        rows = [
            {"item_id": item, "annotator_id": ann,
             "scores": {"informativeness": 5, "clarity": 4, "plausibility": 4,
                        "faithfulness": 5}}
            for item in ("x", "y") for ann in ("a", "b", "c")
        ]
        ratings.write_text("\n".join(json.dumps(r) for r in rows))
        out = tmp_path / "agreement.json"
        assert run(["agreement", "--ratings", str(ratings), "--out", str(out)]) == 0
        report = json.loads(out.read_text())
        assert report["items_complete"] == 2
        assert report["mean_rwg_star"]["clarity"] == 1.0

    def test_serve_annotation_check(self, config_path, tmp_path):
        enh = tmp_path / "enh"
        assert run(["enhance", "--config", config_path, "--run-dir", str(enh)]) == 0
        assert run(["serve-annotation", "--config", config_path,
                    "--tasks-from", str(enh / "enhanced" / "test.jsonl"),
                    "--ratings", str(tmp_path / "r.jsonl"), "--check"]) == 0


class TestExitCodes:
    def test_missing_config_is_validation_error(self, tmp_path):
        assert run(["enhance", "--config", str(tmp_path / "nope.json"),
                    "--run-dir", str(tmp_path / "r")]) == 1

    def test_bad_config_field_path_reported(self, tmp_path, capsys, caplog):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"dataset": {"profile": "armeme", "root": ".",
                                               "manifest": "x"},
                                   "generation": {"word_limit": -5}}))
        assert run(["enhance", "--config", str(bad), "--run-dir", str(tmp_path / "r")]) == 1
        assert any("generation.word_limit" in m for m in caplog.messages)

    def test_unknown_label_set_in_stats(self, fixture_root, tmp_path):
        manifest = tmp_path / "m.jsonl"
        manifest.write_text(json.dumps({"id": "1", "img_path": "a.png", "text": "t",
                                        "class_label": "Hateful", "split": "train"}) + "\n")
        assert run(["stats", "--manifest", str(manifest), "--label-set", "armeme"]) == 1

    def test_train_missing_instructions(self, config_path, tmp_path):
        assert run(["train", "--config", config_path, "--mode", "ms",
                    "--instructions", str(tmp_path / "void"),
                    "--run-dir", str(tmp_path / "r")]) == 1


class TestConfigOverrides:
    def test_set_flag_overrides_nested_field(self, config_path, tmp_path):
        ms = tmp_path / "ms"
        assert run(["enhance", "--config", config_path, "--run-dir", str(tmp_path / "enh")]) == 0
        assert run(["build-instructions", "--config", config_path,
                    "--data", str(tmp_path / "enh" / "enhanced"),
                    "--run-dir", str(tmp_path / "instr")]) == 0
        assert run(["train", "--config", config_path, "--mode", "ms",
                    "--instructions", str(tmp_path / "instr" / "instructions"),
                    "--run-dir", str(ms),
                    "--set", "stages.stage1.epochs=3",
                    "--set", "seed=99"]) == 0
        manifest = json.loads((ms / "manifest.json").read_text())
        assert len(manifest["stages"][0]["checkpoints"]) == 3
        assert manifest["seeds"]["stage1"] == 99
        resolved = json.loads((ms / "resolved_config.json").read_text())
        assert resolved["stages"]["stage1"]["epochs"] == 3

    def test_set_flag_validation_error(self, config_path, tmp_path):
        assert run(["enhance", "--config", config_path,
                    "--run-dir", str(tmp_path / "r"),
                    "--set", "generation.word_limit=-2"]) == 1

    def test_malformed_set_flag(self, config_path, tmp_path):
        assert run(["enhance", "--config", config_path,
                    "--run-dir", str(tmp_path / "r"),
                    "--set", "no-equals-sign"]) == 1
