"""Run configuration: one declarative JSON file, validated up front, with
CLI-flag overrides. The resolved config is echoed into every run directory
for provenance.
"""

import json
from pathlib import Path

import jsonschema

from .explain import FIXED_CLOCK, GenerationConfig
from .records import ARMEME_LABELS, HATEFUL_LABELS, LabelSet
from .training import AdapterConfig, StageConfig, stage2_defaults_from


class ConfigError(ValueError):
    pass


PROFILES = {
    "armeme": {"label_set": ARMEME_LABELS, "templates": {"ar": "armeme_ar", "en": "armeme_en"},
               "languages": ["ar", "en"]},
    "hateful": {"label_set": HATEFUL_LABELS, "templates": {"en": "hateful_en"},
                "languages": ["en"]},
    # the bundled synthetic fixture mimics the four-class setup
    "fixture": {"label_set": ARMEME_LABELS, "templates": {"ar": "armeme_ar", "en": "armeme_en"},
                "languages": ["ar", "en"]},
}

_STAGE_SCHEMA = {
    "type": "object",
    "properties": {
        "learning_rate": {"type": "number", "exclusiveMinimum": 0},
        "epochs": {"type": "integer", "minimum": 1},
        "batch_size": {"type": "integer", "minimum": 1},
        "grad_accum_steps": {"type": "integer", "minimum": 1},
        "optimizer": {"type": "string"},
        "weight_decay": {"type": "number", "minimum": 0},
        "scheduler": {"type": "string"},
        "warmup_steps": {"type": "integer", "minimum": 0},
        "eval_every_epochs": {"type": "integer", "minimum": 1},
        "selection_metric": {"enum": ["accuracy", "weighted_f1", "macro_f1"]},
        "adapter": {
            "type": "object",
            "properties": {
                "rank": {"type": "integer", "minimum": 1},
                "alpha": {"type": "integer", "minimum": 1},
                "dropout": {"type": "number", "minimum": 0, "maximum": 1},
                "quantization_bits": {"type": "integer"},
                "target_submodules": {
                    "type": "array",
                    "items": {"enum": ["vision", "language", "attention", "mlp"]},
                },
            },
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "seed": {"type": "integer"},
        "dataset": {
            "type": "object",
            "properties": {
                "profile": {"enum": sorted(PROFILES)},
                "root": {"type": "string"},
                "manifest": {"type": "string"},
            },
            "required": ["profile", "root", "manifest"],
            "additionalProperties": False,
        },
        "languages": {"type": "array", "items": {"enum": ["ar", "en"]}, "minItems": 1},
        "provider": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["mock", "remote"]},
                "endpoint": {"type": "string"},
                "model": {"type": "string"},
                "api_key_env": {"type": "string"},
                "timeout": {"type": "number"},
                "words": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
        "generation": {
            "type": "object",
            "properties": {
                "word_limit": {"type": "integer", "minimum": 1},
                "temperature": {"type": "number", "minimum": 0},
                "max_retries": {"type": "integer", "minimum": 1},
                "concurrency_limit": {"type": "integer", "minimum": 1},
                "failure_threshold": {"type": "number", "minimum": 0, "maximum": 1},
                "fixed_clock": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "backend": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["mock", "hf"]},
                "model_name": {"type": "string"},
                "device": {"type": "string"},
            },
            "additionalProperties": False,
        },
        "stages": {
            "type": "object",
            "properties": {
                "stage1": _STAGE_SCHEMA,
                "stage2": _STAGE_SCHEMA,
                "single_stage": _STAGE_SCHEMA,
            },
            "additionalProperties": False,
        },
        "metrics": {
            "type": "object",
            "properties": {
                "language": {"enum": ["ar", "en"]},
                "embedder": {"enum": ["hash", "none"]},
                "embedder_dim": {"type": "integer", "minimum": 2},
            },
            "additionalProperties": False,
        },
        "annotation": {
            "type": "object",
            "properties": {
                "annotators": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                "admin_token": {"type": "string"},
                "quota": {"type": "integer", "minimum": 1},
                "port": {"type": "integer", "minimum": 1, "maximum": 65535},
                "host": {"type": "string"},
                "language": {"enum": ["ar", "en"]},
                "tasks_path": {"type": "string"},
                "ratings_path": {"type": "string"},
            },
            "additionalProperties": False,
        },
    },
    "required": ["dataset"],
    "additionalProperties": False,
}

DEFAULTS = {
    "seed": 13,
    "provider": {"kind": "mock"},
    "generation": {"word_limit": 100, "temperature": 0.0, "max_retries": 3,
                   "concurrency_limit": 4, "failure_threshold": 0.2, "fixed_clock": False},
    "backend": {"kind": "mock"},
    "stages": {"stage1": {"learning_rate": 2e-4, "epochs": 2}},
    "metrics": {"language": "en", "embedder": "hash", "embedder_dim": 64},
    "annotation": {"annotators": ["annotator-1", "annotator-2", "annotator-3"],
                   "admin_token": "admin", "quota": 3, "port": 8765,
                   "host": "127.0.0.1", "language": "en"},
}


def _deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def validate_config(raw: dict) -> dict:
    """Validate and fill defaults; raises ConfigError naming the field path."""
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{path}: {exc.message}") from exc
    merged = _deep_merge(DEFAULTS, raw)
    profile = PROFILES[merged["dataset"]["profile"]]
    merged.setdefault("languages", list(profile["languages"]))
    bad_langs = [l for l in merged["languages"] if l not in profile["templates"]]
    if bad_langs:
        raise ConfigError(
            f"languages: {bad_langs} not available for profile "
            f"{merged['dataset']['profile']!r}"
        )
    if merged["provider"]["kind"] == "remote":
        for field in ("endpoint", "model"):
            if field not in merged["provider"]:
                raise ConfigError(f"provider.{field}: required when provider.kind is 'remote'")
    return merged


def parse_overrides(assignments) -> dict:
    """Turn repeated --set key.path=value flags into a nested dict.

    Values parse as JSON when possible (numbers, booleans, lists), falling
    back to plain strings, so `--set stages.stage1.learning_rate=5e-5` and
    `--set dataset.root=data/armeme` both work.
    """
    out = {}
    for assignment in assignments or []:
        if "=" not in assignment:
            raise ConfigError(f"--set expects key.path=value, got {assignment!r}")
        dotted, raw_value = assignment.split("=", 1)
        try:
            value = json.loads(raw_value)
        except json.JSONDecodeError:
            value = raw_value
        node = out
        parts = [p for p in dotted.strip().split(".") if p]
        if not parts:
            raise ConfigError(f"--set has an empty key path: {assignment!r}")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set path conflict at {part!r} in {assignment!r}")
        node[parts[-1]] = value
    return out


def load_config(path: Path, overrides: dict = None) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if overrides:
        raw = _deep_merge(raw, overrides)
    return validate_config(raw)


def label_set_for(config: dict) -> LabelSet:
    return PROFILES[config["dataset"]["profile"]]["label_set"]


def template_id_for(config: dict, language: str) -> str:
    return PROFILES[config["dataset"]["profile"]]["templates"][language]


def generation_config_from(config: dict) -> GenerationConfig:
    gen = config["generation"]
    kwargs = dict(
        word_limit=gen["word_limit"],
        temperature=gen["temperature"],
        max_retries=gen["max_retries"],
        concurrency_limit=gen["concurrency_limit"],
        provider=config["provider"]["kind"],
        failure_threshold=gen["failure_threshold"],
    )
    if gen.get("fixed_clock"):
        kwargs["clock"] = FIXED_CLOCK
    return GenerationConfig(**kwargs)


def _adapter_from(stage_raw: dict) -> AdapterConfig:
    adapter = stage_raw.get("adapter", {})
    kwargs = dict(adapter)
    if "target_submodules" in kwargs:
        kwargs["target_submodules"] = tuple(kwargs["target_submodules"])
    return AdapterConfig(**kwargs)


def stage_configs_from(config: dict) -> dict:
    """Materialize stage1/stage2/single_stage configs with the shared seed."""
    stages_raw = config["stages"]
    seed = config["seed"]

    def build(stage_id, raw):
        kwargs = {k: v for k, v in raw.items() if k != "adapter"}
        return StageConfig(stage_id=stage_id, seed=seed, adapter=_adapter_from(raw), **kwargs)

    out = {"stage1": build("stage1", stages_raw.get("stage1", {}))}
    if "stage2" in stages_raw:
        out["stage2"] = build("stage2", stages_raw["stage2"])
    else:
        out["stage2"] = stage2_defaults_from(out["stage1"])
    single_raw = stages_raw.get("single_stage", stages_raw.get("stage1", {}))
    out["single_stage"] = build("single_stage", single_raw)
    return out
