"""Run configuration: one JSON document covering model, sampler, trainer,
synthesis and sweep settings plus I/O paths.

Validation is strict (unknown keys rejected, leaf types checked against the
defaults) and exhaustive: every offending key is listed in one ConfigError.
Overrides use dotted paths (``trainer.epochs=5``); values parse as JSON
literals where possible, else as strings.
"""

import copy
import json
from dataclasses import dataclass

from .datasynth import DatasetConfig
from .errors import ConfigError
from .model import ModelConfig
from .trainer import SamplerConfig, TrainerConfig

DEFAULT_CONFIG = {
    "model": {
        "bags": 4,
        "channels": [8, 16, 32],
        "frame_shape": [128, 88],
        "strips": 16,
        "strip_dim": 32,
        "text_dim": 64,
        "heads": 1,
        "temporal_pool": "max",
        "init_seed": 0,
    },
    "sampler": {
        "subjects_per_batch": 4,
        "samples_per_subject": 2,
        "window": 30,
    },
    "trainer": {
        "lr": 0.01,
        "momentum": 0.9,
        "epochs": 40,
        "steps_per_epoch": 4,
        "seed": 0,
        "variant": "full",
        "margin": 0.2,
        "loss_weights": [1.0, 1.0, 1.0],
        "cosine_decay": True,
        "warmup_steps": 10,
        "holdout_fraction": 0.2,
        "ratio": [1, 1, 8],
    },
    "synth": {
        "thresholds": [3.0, 5.0],
        "band_negative": [0.0, 1.0],
        "band_neutral": [3.5, 4.5],
        "band_positive": [8.0, 10.0],
        "frame_count_range": [40, 56],
        "period_range": [8, 13],
    },
    "sweep": {
        "ratios": [[1, 1, 2], [1, 1, 4], [1, 1, 8], [1, 1, 16]],
        "unit": 6,
        "eval_unit": 4,
    },
    "paths": {
        "dataset": None,
        "text_guidance": None,
        "checkpoint": None,
        "out": None,
    },
}


def _check_leaf(key, default, value, problems):
    if default is None:  # path entries: string or null
        if value is not None and not isinstance(value, str):
            problems.append(f"{key}: expected a string path or null, got {value!r}")
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            problems.append(f"{key}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            problems.append(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            problems.append(f"{key}: expected a number, got {value!r}")
            return value
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            problems.append(f"{key}: expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            problems.append(f"{key}: expected a list, got {value!r}")
        return value
    problems.append(f"{key}: unsupported config value {value!r}")
    return value


def _merge(defaults, doc, prefix, problems):
    merged = {}
    for key, default in defaults.items():
        path = f"{prefix}{key}"
        if key not in doc:
            merged[key] = copy.deepcopy(default)
        elif isinstance(default, dict):
            if not isinstance(doc[key], dict):
                problems.append(f"{path}: expected an object")
                merged[key] = copy.deepcopy(default)
            else:
                merged[key] = _merge(default, doc[key], f"{path}.", problems)
        else:
            merged[key] = _check_leaf(path, default, doc[key], problems)
    for key in doc:
        if key not in defaults:
            problems.append(f"{prefix}{key}: unknown key")
    return merged


def parse_override(text):
    """Split 'dotted.path=value'; the value parses as JSON, else as a string."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like key.path=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def _apply_override(doc, key, value, problems):
    parts = key.split(".")
    node = doc
    for part in parts[:-1]:
        if not isinstance(node, dict) or part not in node:
            problems.append(f"{key}: unknown key")
            return
        node = node[part]
    if not isinstance(node, dict) or parts[-1] not in node:
        problems.append(f"{key}: unknown key")
        return
    node[parts[-1]] = value


def load_config(path=None, overrides=()):
    """Merge a JSON config file and overrides over the defaults; validate all."""
    doc = {}
    if path is not None:
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: config must be a JSON object")

    problems = []
    for text in overrides:
        key, value = parse_override(text)
        _apply_override(doc, key, value, problems)
    merged = _merge(DEFAULT_CONFIG, doc, "", problems)
    if problems:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(problems))
    return merged


@dataclass(frozen=True)
class RunSettings:
    """Typed view over a validated config document."""

    model: ModelConfig
    sampler: SamplerConfig
    trainer: TrainerConfig
    synth: DatasetConfig
    sweep_ratios: tuple
    sweep_unit: int
    sweep_eval_unit: int
    paths: dict


def build_settings(doc) -> RunSettings:
    """Construct the typed configs; dataclass validation errors become ConfigError."""
    try:
        model = ModelConfig.from_json_dict(doc["model"])
        sampler = SamplerConfig(**doc["sampler"])
        tdoc = dict(doc["trainer"])
        tdoc["loss_weights"] = tuple(tdoc["loss_weights"])
        tdoc["ratio"] = tuple(tdoc["ratio"])
        trainer = TrainerConfig(**tdoc)
        sdoc = {key: tuple(val) for key, val in doc["synth"].items()}
        synth = DatasetConfig(**sdoc)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None
    ratios = tuple(tuple(r) for r in doc["sweep"]["ratios"])
    for r in ratios:
        if len(r) != 3 or any((not isinstance(v, int)) or v < 0 for v in r):
            raise ConfigError(f"sweep.ratios: {r!r} is not a pos:neu:neg triple")
    return RunSettings(model=model, sampler=sampler, trainer=trainer, synth=synth,
                       sweep_ratios=ratios, sweep_unit=doc["sweep"]["unit"],
                       sweep_eval_unit=doc["sweep"]["eval_unit"], paths=doc["paths"])
